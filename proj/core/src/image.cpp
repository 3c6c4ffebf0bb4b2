#include "rswin/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rswin/errors.hpp"

namespace rswin {

namespace {

void check_image(const Array& image, const char* who) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError(std::string(who) + " expects [H,W,3], got " + shape_str(image.shape()));
  }
}

// Bilinear sample at continuous pixel coordinates, edges clamped.
void sample_bilinear(const Array& img, double y, double x, double* out) {
  const std::size_t H = img.dim(0);
  const std::size_t W = img.dim(1);
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, H - 1);
  const std::size_t x1 = std::min(x0 + 1, W - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  for (std::size_t c = 0; c < 3; ++c) {
    const double a = img[(y0 * W + x0) * 3 + c];
    const double b = img[(y0 * W + x1) * 3 + c];
    const double d = img[(y1 * W + x0) * 3 + c];
    const double e = img[(y1 * W + x1) * 3 + c];
    // Skip zero-weight taps so exact grid positions reproduce input values.
    double top = fx == 0.0 ? a : a + (b - a) * fx;
    double bottom = fx == 0.0 ? d : d + (e - d) * fx;
    out[c] = fy == 0.0 ? top : top + (bottom - top) * fy;
  }
}

Array crop(const Array& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const std::size_t W = img.dim(1);
  Array out({h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out[(y * w + x) * 3 + c] = img[((y0 + y) * W + x0 + x) * 3 + c];
    }
  }
  return out;
}

}  // namespace

Array decode_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DataError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty() || bgr.channels() != 3) {
    throw DataError("cannot decode image " + path.string());
  }
  cv::Mat u8;
  if (bgr.depth() == CV_8U) {
    u8 = bgr;
  } else {
    bgr.convertTo(u8, CV_8U, bgr.depth() == CV_16U ? 1.0 / 257.0 : 255.0);
  }
  const auto H = static_cast<std::size_t>(u8.rows);
  const auto W = static_cast<std::size_t>(u8.cols);
  Array out({H, W, 3});
  for (std::size_t y = 0; y < H; ++y) {
    const auto* row = u8.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[(y * W + x) * 3 + c] = static_cast<double>(row[x * 3 + (2 - c)]) / 255.0;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Array& image) {
  check_image(image, "write_png");
  const auto H = image.dim(0);
  const auto W = image.dim(1);
  cv::Mat bgr(static_cast<int>(H), static_cast<int>(W), CV_8UC3);
  for (std::size_t y = 0; y < H; ++y) {
    auto* row = bgr.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image[(y * W + x) * 3 + c], 0.0, 1.0);
        row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

Array resize_bilinear(const Array& image, std::size_t out_h, std::size_t out_w) {
  check_image(image, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize to an empty image");
  const std::size_t H = image.dim(0);
  const std::size_t W = image.dim(1);
  if (H == out_h && W == out_w) return image;
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  Array out({out_h, out_w, 3});
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      sample_bilinear(image, (static_cast<double>(y) + 0.5) * sy - 0.5,
                      (static_cast<double>(x) + 0.5) * sx - 0.5, &out[(y * out_w + x) * 3]);
    }
  }
  return out;
}

Array standardize(const Array& image, const Normalization& norm) {
  check_image(image, "standardize");
  Array out = image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % 3;
    out[i] = (out[i] - norm.mean[c]) / norm.std[c];
  }
  return out;
}

Array load_and_preprocess(const std::filesystem::path& path, std::size_t target,
                          const Normalization& norm) {
  return standardize(resize_bilinear(decode_image(path), target, target), norm);
}

void AugmentPolicy::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError(std::string("augment.") + name + " must be in [0, 1]");
    }
  };
  prob(hflip_p, "hflip_p");
  prob(vflip_p, "vflip_p");
  if (rotation_deg < 0.0 || brightness < 0.0 || contrast < 0.0 || saturation < 0.0) {
    throw ConfigError("augment ranges must be non-negative");
  }
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
    throw ConfigError("augment crop range must satisfy 0 < crop_min <= crop_max <= 1");
  }
}

const std::vector<ConfigField<AugmentPolicy>>& AugmentPolicy::fields() {
  using A = AugmentPolicy;
  static const std::vector<ConfigField<A>> f = {
      bool_field<A>("enabled", [](auto& a) -> auto& { return a.enabled; }),
      double_field<A>("hflip_p", [](auto& a) -> auto& { return a.hflip_p; }),
      double_field<A>("vflip_p", [](auto& a) -> auto& { return a.vflip_p; }),
      double_field<A>("rotation_deg", [](auto& a) -> auto& { return a.rotation_deg; }),
      double_field<A>("crop_min", [](auto& a) -> auto& { return a.crop_min; }),
      double_field<A>("crop_max", [](auto& a) -> auto& { return a.crop_max; }),
      double_field<A>("brightness", [](auto& a) -> auto& { return a.brightness; }),
      double_field<A>("contrast", [](auto& a) -> auto& { return a.contrast; }),
      double_field<A>("saturation", [](auto& a) -> auto& { return a.saturation; }),
  };
  return f;
}

Array flip_horizontal(const Array& image) {
  check_image(image, "flip_horizontal");
  const std::size_t H = image.dim(0);
  const std::size_t W = image.dim(1);
  Array out(image.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out[(y * W + x) * 3 + c] = image[(y * W + (W - 1 - x)) * 3 + c];
    }
  }
  return out;
}

Array flip_vertical(const Array& image) {
  check_image(image, "flip_vertical");
  const std::size_t H = image.dim(0);
  const std::size_t W = image.dim(1);
  Array out(image.shape());
  for (std::size_t y = 0; y < H; ++y) {
    std::copy_n(image.data().begin() + static_cast<std::ptrdiff_t>((H - 1 - y) * W * 3), W * 3,
                out.data().begin() + static_cast<std::ptrdiff_t>(y * W * 3));
  }
  return out;
}

Array rotate(const Array& image, double degrees) {
  check_image(image, "rotate");
  if (degrees == 0.0) return image;
  const std::size_t H = image.dim(0);
  const std::size_t W = image.dim(1);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  Array out(image.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      // Inverse map: output pixel -> source location.
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = cy + cs * dy - sn * dx;
      const double sx = cx + sn * dy + cs * dx;
      sample_bilinear(image, sy, sx, &out[(y * W + x) * 3]);
    }
  }
  return out;
}

Array augment(const Array& image, const AugmentPolicy& policy, Rng& rng) {
  check_image(image, "augment");
  if (!policy.enabled) return image;
  const std::size_t H = image.dim(0);
  const std::size_t W = image.dim(1);
  Array out = image;

  if (uniform01(rng) < policy.hflip_p) out = flip_horizontal(out);
  if (uniform01(rng) < policy.vflip_p) out = flip_vertical(out);
  const double angle = uniform(rng, -policy.rotation_deg, policy.rotation_deg);
  if (policy.rotation_deg > 0.0) out = rotate(out, angle);

  const double s = uniform(rng, policy.crop_min, policy.crop_max);
  const auto ch = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(s * static_cast<double>(H))), 1, H);
  const auto cw = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(s * static_cast<double>(W))), 1, W);
  const std::size_t oy = uniform_index(rng, H - ch + 1);
  const std::size_t ox = uniform_index(rng, W - cw + 1);
  if (ch != H || cw != W) out = resize_bilinear(crop(out, oy, ox, ch, cw), H, W);

  const double bright = 1.0 + uniform(rng, -policy.brightness, policy.brightness);
  const double contrast = 1.0 + uniform(rng, -policy.contrast, policy.contrast);
  const double sat = 1.0 + uniform(rng, -policy.saturation, policy.saturation);
  if (bright != 1.0 || contrast != 1.0 || sat != 1.0) {
    const std::size_t n = H * W;
    double mean_gray = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t c = 0; c < 3; ++c) out[p * 3 + c] *= bright;
      mean_gray += 0.299 * out[p * 3] + 0.587 * out[p * 3 + 1] + 0.114 * out[p * 3 + 2];
    }
    mean_gray /= static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) {
      double* px = &out[p * 3];
      const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      for (std::size_t c = 0; c < 3; ++c) {
        double v = gray + (px[c] - gray) * sat;
        v = (v - mean_gray) * contrast + mean_gray;
        px[c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace rswin
