#pragma once

#include <utility>

#include "tist/rng.hpp"
#include "tist/tensor.hpp"

namespace tist {

// Geometric transform g(.): rotate about the crop centre, crop, resize back
// to the input size. Applied identically to an image and its label map.
struct SpatialSpec {
  double rotation_degrees = 0.0;
  int crop_top = 0;
  int crop_left = 0;
  int crop_height = 0;
  int crop_width = 0;

  friend bool operator==(const SpatialSpec&, const SpatialSpec&) = default;
};

// Photometric transform f(.). Labels are never touched.
struct NonSpatialSpec {
  double brightness_factor = 1.0;
  double contrast_factor = 1.0;
  double saturation_factor = 1.0;
  double blur_sigma = 0.0;
  double sharpen_amount = 0.0;

  friend bool operator==(const NonSpatialSpec&, const NonSpatialSpec&) = default;
};

// Sampling ranges. Defaults follow the training recipe: rotation up to 30
// degrees, jitter strength 0.7 for brightness/contrast/saturation.
struct AugmentConfig {
  double max_rotation_degrees = 30.0;
  double min_crop_fraction = 0.5;
  double brightness = 0.7;
  double contrast = 0.7;
  double saturation = 0.7;
  double jitter_floor = 0.05;
  double blur_probability = 0.5;
  double max_blur_sigma = 2.0;
  double max_sharpen = 1.0;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

inline constexpr double kMaxRotationDegrees = 30.0;

SpatialSpec identity_spatial(int height, int width);
NonSpatialSpec identity_nonspatial();

void validate(const SpatialSpec& spec, int height, int width);
void validate(const NonSpatialSpec& spec);

SpatialSpec sample_spatial(Rng& rng, int height, int width, const AugmentConfig& config = {});
NonSpatialSpec sample_nonspatial(Rng& rng, const AugmentConfig& config = {});

// Image is sampled bilinearly (zero fill outside the source), labels by
// nearest neighbour (kIgnoreIndex outside the source).
std::pair<Image, LabelMap> apply_spatial(const Image& image, const LabelMap& label, const SpatialSpec& spec);

// brightness -> contrast -> saturation -> blur -> sharpen, clamping to
// [0, 1] after every stage. Stages at their neutral value are skipped.
Image apply_nonspatial(const Image& image, const NonSpatialSpec& spec);

// Separable Gaussian blur with reflected borders; kernel radius ceil(3 sigma).
Image gaussian_blur(const Image& image, double sigma);

}  // namespace tist
