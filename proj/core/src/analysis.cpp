#include "rswin/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "rswin/config.hpp"
#include "rswin/errors.hpp"

namespace rswin {

SymmetricEigen symmetric_eigen(const Array& m, double tol, std::size_t max_sweeps) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError("symmetric_eigen needs a square matrix, got " + shape_str(m.shape()));
  }
  const std::size_t n = m.dim(0);
  std::vector<double> a(m.data().begin(), m.data().end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    }
    if (std::sqrt(off) <= tol * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        // Rotation angle from the classical Jacobi update.
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A(k, p);
          const double akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A(p, k);
          const double aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return A(x, x) > A(y, y); });
  SymmetricEigen out;
  out.vectors = Array({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    out.values.push_back(A(order[r], order[r]));
    for (std::size_t k = 0; k < n; ++k) out.vectors[r * n + k] = v[k * n + order[r]];
  }
  return out;
}

PCAResult pca_fit_project(const Array& features, std::size_t k, std::vector<std::size_t> labels) {
  if (features.rank() != 2) throw ShapeError("pca expects [N, d] features");
  const std::size_t N = features.dim(0);
  const std::size_t d = features.dim(1);
  if (N < 2) throw DataError("pca needs at least two samples");
  if (k == 0 || k > d) {
    throw ContractError("pca: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(d) + "]");
  }
  if (!labels.empty() && labels.size() != N) throw ShapeError("pca: label count differs from N");

  PCAResult r;
  r.labels = std::move(labels);
  r.mean = Array({d});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < d; ++j) r.mean[j] += features[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) r.mean[j] /= static_cast<double>(N);
  std::vector<double> x(N * d);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = features[i * d + j] - r.mean[j];
  }
  Array cov({d, d});
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += x[i * d + a] * x[i * d + b];
      s /= static_cast<double>(N - 1);
      cov[a * d + b] = s;
      cov[b * d + a] = s;
    }
  }
  const SymmetricEigen eig = symmetric_eigen(cov);
  r.eigenvalues = eig.values;
  const double top = std::max(eig.values.empty() ? 0.0 : eig.values[0], 0.0);
  const double cutoff = top * 1e-12 * static_cast<double>(d);
  for (double ev : eig.values) {
    if (ev > cutoff && ev > 0.0) ++r.rank;
  }
  std::size_t keep = std::min(k, r.rank);
  if (keep < k) {
    r.warning = "features have rank " + std::to_string(r.rank) + " < " + std::to_string(k) +
                "; returning " + std::to_string(keep) + " component(s)";
  }
  r.components = Array({keep, d});
  for (std::size_t c = 0; c < keep; ++c) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(eig.vectors[c * d + j]) > std::abs(eig.vectors[c * d + arg])) arg = j;
    }
    const double sign = eig.vectors[c * d + arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) r.components[c * d + j] = sign * eig.vectors[c * d + j];
    r.explained_variance.push_back(std::max(eig.values[c], 0.0));
  }
  r.projected = Array({N, keep});
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < keep; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * r.components[c * d + j];
      r.projected[i * keep + c] = s;
    }
  }
  return r;
}

double separability_score(const Array& points, const std::vector<std::size_t>& labels) {
  if (points.rank() != 2 || points.dim(0) != labels.size()) {
    throw ShapeError("separability_score: points/labels mismatch");
  }
  const std::size_t N = points.dim(0);
  const std::size_t k = points.dim(1);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < N; ++i) groups[labels[i]].push_back(i);
  if (groups.size() < 2) throw DataError("separability_score needs at least two classes");

  std::vector<double> mu(k, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < k; ++c) mu[c] += points[i * k + c] / static_cast<double>(N);
  }
  double between = 0.0;
  double within = 0.0;
  for (const auto& [label, members] : groups) {
    std::vector<double> mc(k, 0.0);
    for (auto i : members) {
      for (std::size_t c = 0; c < k; ++c) mc[c] += points[i * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      mc[c] /= static_cast<double>(members.size());
      between += static_cast<double>(members.size()) * (mc[c] - mu[c]) * (mc[c] - mu[c]);
    }
    for (auto i : members) {
      for (std::size_t c = 0; c < k; ++c) {
        within += (points[i * k + c] - mc[c]) * (points[i * k + c] - mc[c]);
      }
    }
  }
  if (between == 0.0) return 0.0;
  if (within == 0.0) return std::numeric_limits<double>::infinity();
  return between / within;
}

double separability_score(const PCAResult& result) {
  return separability_score(result.projected, result.labels);
}

void write_projection_csv(const PCAResult& result, const std::vector<std::string>& class_names,
                          const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t N = result.projected.rank() == 2 ? result.projected.dim(0) : 0;
  const std::size_t k = N > 0 ? result.projected.dim(1) : 0;
  out << "x,y,class_name\n";
  for (std::size_t i = 0; i < N; ++i) {
    const double px = k > 0 ? result.projected[i * k] : 0.0;
    const double py = k > 1 ? result.projected[i * k + 1] : 0.0;
    std::string name;
    if (i < result.labels.size()) {
      const auto l = result.labels[i];
      name = l < class_names.size() ? class_names[l] : std::to_string(l);
    }
    out << format_double(px) << ',' << format_double(py) << ',' << name << '\n';
  }
}

}  // namespace rswin
