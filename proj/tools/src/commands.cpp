#include "rswin_cli/commands.hpp"

#include <cmath>
#include <fstream>

#include <CLI11.hpp>

#include "rswin/analysis.hpp"
#include "rswin/checkpoint.hpp"
#include "rswin/errors.hpp"
#include "rswin/metrics.hpp"
#include "rswin/selftest.hpp"
#include "rswin/training.hpp"
#include "rswin_cli/run_config.hpp"

namespace fs = std::filesystem;

namespace rswin::cli {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const CheckpointIncompatibleError*>(&e)) return kConfigError;
  if (dynamic_cast<const DataError*>(&e)) return kDataError;
  if (dynamic_cast<const CheckpointError*>(&e)) return kDataError;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  return kInternalError;
}

namespace {

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

void write_metrics_dir(const EvalResult& ev, const std::vector<std::string>& class_names,
                       const fs::path& dir, std::ostream& out) {
  const MetricsReport report = build_report(ev.cm, ev.scores);
  const std::string text = format_report(report);
  out << text;
  write_text(dir / "report.txt", text);
  write_report_csv(report, dir / "metrics.csv");
  write_confusion_csv(ev.cm, dir / "confusion.csv");
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    const std::string n = safe_name(class_names[k]);
    write_curve_csv(roc_curve(ev.scores, k), dir / ("roc_" + n + ".csv"));
    write_curve_csv(pr_curve(ev.scores, k), dir / ("pr_" + n + ".csv"));
  }
}

Checkpoint make_checkpoint(const RunConfig& rc, const Normalization& norm,
                           const std::vector<std::string>& class_names, const ModelParams& params,
                           std::size_t epoch, const TrainResult* result) {
  Checkpoint ck;
  ck.config = rc.model;
  ck.normalization = norm;
  ck.class_names = class_names;
  ck.params = params;
  ck.state.epoch = epoch;
  ck.state.seed = rc.run.seed;
  if (result != nullptr) {
    ck.state.best_epoch = result->best_epoch;
    ck.state.best_val_f1 = result->best_val_f1;
    ck.state.optim = result->optim;
  }
  return ck;
}

// Where eval/analyze read from and write to.
struct ResolvedData {
  Checkpoint ckpt;
  fs::path run_dir;  // empty when the checkpoint is not inside a run directory
  DatasetIndex index;
  fs::path out_dir;
};

ResolvedData resolve_data(const DataOptions& opts, const std::string& default_subdir) {
  ResolvedData r;
  r.ckpt = load_checkpoint(opts.checkpoint);
  const fs::path parent = opts.checkpoint.parent_path();
  if (parent.filename() == "checkpoints") r.run_dir = parent.parent_path();

  fs::path root = opts.data_root;
  fs::path manifest = opts.manifest;
  if (!r.run_dir.empty()) {
    if (root.empty() && fs::exists(r.run_dir / "config.resolved")) {
      const auto doc = KeyValueDoc::load((r.run_dir / "config.resolved").string());
      root = doc.get("data", "root").value_or("");
    }
    if (manifest.empty() && fs::exists(r.run_dir / "split_manifest.tsv")) {
      manifest = r.run_dir / "split_manifest.tsv";
    }
  }
  if (root.empty()) throw ConfigError("no dataset root; pass --data-root");
  if (!fs::is_directory(root)) throw ConfigError("dataset root " + root.string() + " does not exist");

  r.index = manifest.empty() ? index_dataset(root, r.ckpt.state.seed)
                             : read_manifest(manifest, root, r.ckpt.class_names);
  if (r.index.class_names != r.ckpt.class_names) {
    throw ConfigError("dataset classes do not match the checkpoint's " +
                      std::to_string(r.ckpt.class_names.size()) + " classes");
  }
  if (!opts.out_dir.empty()) {
    r.out_dir = opts.out_dir;
  } else if (!r.run_dir.empty()) {
    r.out_dir = r.run_dir / default_subdir;
  } else {
    throw ConfigError("checkpoint is not inside a run directory; pass --out");
  }
  return r;
}

std::string fmt_double(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int cmd_train(const TrainOptions& opts, std::ostream& out) {
  RunConfig rc = RunConfig::load(opts.config);
  for (const auto& [k, v] : opts.overrides) rc.apply_override(k, v);
  if (!opts.run_name.empty()) rc.run.name = opts.run_name;
  rc.validate();
  if (!fs::is_directory(rc.data.root)) {
    throw ConfigError("dataset root " + rc.data.root + " does not exist");
  }

  DatasetIndex index = rc.data.manifest.empty()
                           ? index_dataset(rc.data.root, rc.run.seed, rc.split_policy())
                           : read_manifest(rc.data.manifest, rc.data.root);
  if (index.class_names.size() != rc.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(index.class_names.size()) +
                      " classes but model.num_classes = " + std::to_string(rc.model.num_classes));
  }
  if (index.skipped > 0) out << "skipped " << index.skipped << " unreadable image(s)\n";

  const auto& pc = rc.model.patch;
  const FolderSource train_src(index, Split::train, pc.image_h, pc.image_w);
  const FolderSource val_src(index, Split::val, pc.image_h, pc.image_w);
  const FolderSource test_src(index, Split::test, pc.image_h, pc.image_w);
  out << "classes " << index.class_names.size() << ", train " << train_src.size() << ", val "
      << val_src.size() << ", test " << test_src.size() << "\n";
  if (rc.train.epochs > 0 && train_src.size() == 0) throw DataError("training split is empty");
  const Normalization norm = rc.data.normalize == "dataset" && train_src.size() > 0
                                 ? compute_channel_stats(train_src)
                                 : Normalization{};

  const fs::path run = rc.run_dir();
  fs::create_directories(run / "checkpoints");
  write_text(run / "config.resolved", rc.to_doc().to_text());
  write_manifest(index, run / "split_manifest.tsv");

  ModelParams params = ModelParams::init(rc.model, rc.run.seed);
  out << "model parameters " << count_parameters(params) << "\n";
  const auto init = make_checkpoint(rc, norm, index.class_names, params, 0, nullptr);
  save_checkpoint(init, run / "checkpoints" / "last.ckpt");
  save_checkpoint(init, run / "checkpoints" / "best.ckpt");

  std::ofstream history(run / "history.jsonl", std::ios::binary | std::ios::trunc);
  if (!history) throw DataError("cannot write " + (run / "history.jsonl").string());
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& rec, const ModelParams& p, const TrainResult& r,
                    bool is_best) {
    history << to_json_line(rec) << '\n';
    history.flush();
    out << "epoch " << rec.epoch << " lr " << rec.lr << " loss " << fmt_double(rec.train_loss, 4);
    if (rec.val_acc) {
      out << " val_acc " << fmt_double(*rec.val_acc, 2) << " val_f1 "
          << fmt_double(*rec.val_f1, 4);
    }
    out << (is_best ? " *" : "") << "\n";
    const auto ck = make_checkpoint(rc, norm, index.class_names, p, rec.epoch + 1, &r);
    save_checkpoint(ck, run / "checkpoints" / "last.ckpt");
    if (is_best) save_checkpoint(ck, run / "checkpoints" / "best.ckpt");
  };
  const AugmentPolicy* aug = rc.augment.enabled ? &rc.augment : nullptr;
  const TrainResult result = train(params, rc.model, rc.train, train_src,
                                   val_src.size() > 0 ? &val_src : nullptr, norm, aug, cb);
  out << "trained " << result.history.size() << " epoch(s), " << result.steps << " step(s)\n";

  if (!result.best_params.empty()) params.restore(result.best_params);
  if (test_src.size() > 0) {
    out << "test metrics (best epoch " << result.best_epoch << ")\n";
    const EvalResult ev = evaluate(params, rc.model, test_src, norm, rc.train.batch, index.class_names);
    write_metrics_dir(ev, index.class_names, run / "metrics", out);
  } else {
    out << "test split is empty; no metrics written\n";
  }
  out << "run directory " << run.string() << "\n";
  return kOk;
}

int cmd_eval(const DataOptions& opts, std::ostream& out) {
  const Split split = parse_split(opts.split);
  const ResolvedData d = resolve_data(opts, "metrics/eval_" + opts.split);
  const auto& pc = d.ckpt.config.patch;
  const FolderSource src(d.index, split, pc.image_h, pc.image_w);
  if (src.size() == 0) throw DataError("the " + opts.split + " split is empty");
  const EvalResult ev =
      evaluate(d.ckpt.params, d.ckpt.config, src, d.ckpt.normalization, 16, d.ckpt.class_names);
  write_metrics_dir(ev, d.ckpt.class_names, d.out_dir, out);
  out << "wrote " << d.out_dir.string() << "\n";
  return kOk;
}

int cmd_infer(const fs::path& checkpoint, const std::vector<std::string>& images,
              std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto& pc = ck.config.patch;
  std::size_t ok = 0;
  for (const auto& path : images) {
    try {
      const Array img = standardize(
          resize_bilinear(decode_image(path), pc.image_h, pc.image_w), ck.normalization);
      Shape shape{1};
      shape.insert(shape.end(), img.shape().begin(), img.shape().end());
      Array logits;
      {
        NoGradGuard no_grad;
        logits = forward(Tensor(img.reshaped(shape)), ck.params, ck.config, false).logits.value();
      }
      const std::size_t C = logits.size();
      double mx = logits[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits[c]);
      std::vector<double> p(C);
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += (p[c] = std::exp(logits[c] - mx));
      std::size_t best = 0;
      for (std::size_t c = 0; c < C; ++c) {
        p[c] /= s;
        if (p[c] > p[best]) best = c;
      }
      out << path << '\t' << ck.class_names.at(best) << '\t' << format_double_list(p) << '\n';
      ++ok;
    } catch (const Error& e) {
      out << path << "\tERROR\t" << e.what() << '\n';
      err << "error: " << path << ": " << e.what() << '\n';
    }
  }
  if (!images.empty() && ok == 0) return kDataError;
  return kOk;
}

int cmd_analyze(const DataOptions& opts, std::ostream& out) {
  const Split split = parse_split(opts.split);
  const ResolvedData d = resolve_data(opts, "analysis");
  const auto& pc = d.ckpt.config.patch;
  const FolderSource src(d.index, split, pc.image_h, pc.image_w);
  if (src.size() < 2) throw DataError("the " + opts.split + " split has fewer than two images");
  const EvalResult ev =
      evaluate(d.ckpt.params, d.ckpt.config, src, d.ckpt.normalization, 16, d.ckpt.class_names);
  const PCAResult pca = pca_fit_project(ev.features, 2, ev.scores.labels);
  write_projection_csv(pca, d.ckpt.class_names, d.out_dir / "projection.csv");

  std::string summary;
  summary += "samples " + std::to_string(src.size()) + "\n";
  summary += "feature_dim " + std::to_string(ev.features.dim(1)) + "\n";
  summary += "components " + std::to_string(pca.components.dim(0)) + "\n";
  summary += "explained_variance " + format_double_list(pca.explained_variance) + "\n";
  double total = 0.0;
  for (double e : pca.eigenvalues) total += std::max(e, 0.0);
  std::vector<double> ratio;
  for (double e : pca.explained_variance) ratio.push_back(total > 0.0 ? e / total : 0.0);
  summary += "explained_variance_ratio " + format_double_list(ratio) + "\n";
  std::size_t present = 0;
  {
    std::vector<bool> seen(d.ckpt.class_names.size(), false);
    for (auto l : pca.labels) seen[l] = true;
    for (bool b : seen) present += b ? 1 : 0;
  }
  if (present >= 2) {
    summary += "separability " + format_double(separability_score(pca)) + "\n";
  } else {
    summary += "separability n/a (one class present)\n";
  }
  if (!pca.warning.empty()) summary += "warning " + pca.warning + "\n";
  write_text(d.out_dir / "summary.txt", summary);
  out << summary << "wrote " << d.out_dir.string() << "\n";
  return kOk;
}

int cmd_selftest(std::ostream& out) {
  const auto results = run_selftest(builtin_checks());
  out << format_selftest_table(results);
  return all_passed(results) ? kOk : kChecksFailed;
}

int cmd_synth(const SynthOptions& opts, std::ostream& out) {
  if (opts.classes < 2 || opts.per_class == 0 || opts.size == 0) {
    throw ConfigError("synth needs at least two classes and a positive size");
  }
  write_color_dataset(opts.out, opts.classes, opts.per_class, opts.size, opts.size, opts.seed);
  out << "wrote " << opts.classes * opts.per_class << " images to " << opts.out.string() << "\n";
  return kOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RSwinV2 skin-lesion classifier"};
  app.require_subcommand(1);

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "train a model; extra --key value pairs override the config");
  train->add_option("--config", train_opts.config, "config file")->required();
  train->add_option("--run-name", train_opts.run_name, "run directory name");
  train->allow_extras();

  DataOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", eval_opts.checkpoint)->required();
  eval->add_option("--data-root", eval_opts.data_root);
  eval->add_option("--manifest", eval_opts.manifest);
  eval->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", eval_opts.out_dir);

  DataOptions analyze_opts;
  auto* analyze = app.add_subcommand("analyze", "PCA of penultimate features");
  analyze->add_option("--checkpoint", analyze_opts.checkpoint)->required();
  analyze->add_option("--data-root", analyze_opts.data_root);
  analyze->add_option("--manifest", analyze_opts.manifest);
  analyze->add_option("--split", analyze_opts.split)->check(CLI::IsMember({"train", "val", "test"}));
  analyze->add_option("--out", analyze_opts.out_dir);

  fs::path infer_ckpt;
  std::vector<std::string> infer_images;
  auto* infer = app.add_subcommand("infer", "classify images");
  infer->add_option("--checkpoint", infer_ckpt)->required();
  infer->add_option("images", infer_images, "image files")->required();

  auto* selftest = app.add_subcommand("selftest", "run the embedded oracle checks");

  SynthOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic class-coloured dataset");
  synth->add_option("--out", synth_opts.out)->required();
  synth->add_option("--classes", synth_opts.classes);
  synth->add_option("--per-class", synth_opts.per_class);
  synth->add_option("--size", synth_opts.size);
  synth->add_option("--seed", synth_opts.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) {
      train_opts.overrides = parse_overrides(train->remaining());
      return cmd_train(train_opts, out);
    }
    if (*eval) return cmd_eval(eval_opts, out);
    if (*analyze) return cmd_analyze(analyze_opts, out);
    if (*infer) return cmd_infer(infer_ckpt, infer_images, out, err);
    if (*selftest) return cmd_selftest(out);
    if (*synth) return cmd_synth(synth_opts, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kInternalError;
}

}  // namespace rswin::cli
