#pragma once

#include <cstddef>
#include <filesystem>

#include "rswin/checkpoint.hpp"
#include "rswin/config.hpp"
#include "rswin/random.hpp"
#include "rswin/tensor.hpp"

namespace rswin {

// Images are Array[H, W, 3], RGB, channels-last, values in [0, 1] until
// standardized.

// Decodes png/jpeg/bmp. Throws DataError naming the path on failure.
Array decode_image(const std::filesystem::path& path);
// Writes an 8-bit PNG (values clamped to [0, 1]).
void write_png(const std::filesystem::path& path, const Array& image);

// Bilinear with half-pixel centres and edge clamping; a same-size resize is
// the identity.
Array resize_bilinear(const Array& image, std::size_t out_h, std::size_t out_w);
Array standardize(const Array& image, const Normalization& norm);
// decode -> resize to target x target -> standardize.
Array load_and_preprocess(const std::filesystem::path& path, std::size_t target,
                          const Normalization& norm);

struct AugmentPolicy {
  bool enabled = true;
  double hflip_p = 0.5;
  double vflip_p = 0.0;
  double rotation_deg = 15.0;
  double crop_min = 0.8;
  double crop_max = 1.0;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.0;

  void validate() const;
  static const std::vector<ConfigField<AugmentPolicy>>& fields();
  bool operator==(const AugmentPolicy&) const = default;
};

Array flip_horizontal(const Array& image);
Array flip_vertical(const Array& image);
// Rotation about the centre by `degrees`, bilinear, edge pixels replicated.
Array rotate(const Array& image, double degrees);

// Spatial transforms (flips, rotation, crop-rescale) then photometric jitter.
// The draws happen in a fixed order, so a given rng state always yields the
// same output. Shape is preserved.
Array augment(const Array& image, const AugmentPolicy& policy, Rng& rng);

}  // namespace rswin
