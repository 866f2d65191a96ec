#include "tist/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace tist {

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

// ITU-R 601 luma, as used by common colour-jitter implementations.
std::vector<double> luminance(const Image& image) {
  std::vector<double> gray(image.plane_size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = 0.299 * image.pixels[i] + 0.587 * image.pixels[image.plane_size() + i] +
              0.114 * image.pixels[2 * image.plane_size() + i];
  }
  return gray;
}

}  // namespace

SpatialSpec identity_spatial(int height, int width) { return {0.0, 0, 0, height, width}; }

NonSpatialSpec identity_nonspatial() { return {}; }

void validate(const SpatialSpec& spec, int height, int width) {
  if (!std::isfinite(spec.rotation_degrees) || std::abs(spec.rotation_degrees) > kMaxRotationDegrees)
    throw InvalidInput("SpatialSpec: rotation must be finite with magnitude <= 30 degrees");
  if (spec.crop_height < 1 || spec.crop_width < 1 || spec.crop_top < 0 || spec.crop_left < 0 ||
      spec.crop_top + spec.crop_height > height || spec.crop_left + spec.crop_width > width)
    throw InvalidInput("SpatialSpec: crop box outside the " + std::to_string(height) + "x" + std::to_string(width) +
                       " image");
}

void validate(const NonSpatialSpec& spec) {
  const bool finite = std::isfinite(spec.brightness_factor) && std::isfinite(spec.contrast_factor) &&
                      std::isfinite(spec.saturation_factor) && std::isfinite(spec.blur_sigma) &&
                      std::isfinite(spec.sharpen_amount);
  if (!finite || spec.brightness_factor <= 0 || spec.contrast_factor <= 0 || spec.saturation_factor < 0 ||
      spec.blur_sigma < 0 || spec.sharpen_amount < 0)
    throw InvalidInput("NonSpatialSpec: factors must be finite, brightness/contrast > 0, others >= 0");
}

SpatialSpec sample_spatial(Rng& rng, int height, int width, const AugmentConfig& config) {
  if (height < 2 || width < 2) throw InvalidInput("sample_spatial: image must be at least 2x2");
  SpatialSpec spec;
  spec.rotation_degrees = rng.uniform(-config.max_rotation_degrees, config.max_rotation_degrees);
  auto crop_extent = [&](int size) {
    const double frac = rng.uniform(config.min_crop_fraction, 1.0);
    return std::clamp(static_cast<int>(std::lround(frac * size)), 1, size);
  };
  spec.crop_height = crop_extent(height);
  spec.crop_width = crop_extent(width);
  spec.crop_top = static_cast<int>(rng.uniform_int(0, height - spec.crop_height));
  spec.crop_left = static_cast<int>(rng.uniform_int(0, width - spec.crop_width));
  return spec;
}

NonSpatialSpec sample_nonspatial(Rng& rng, const AugmentConfig& config) {
  auto factor = [&](double strength) {
    return rng.uniform(std::max(config.jitter_floor, 1.0 - strength), 1.0 + strength);
  };
  NonSpatialSpec spec;
  spec.brightness_factor = factor(config.brightness);
  spec.contrast_factor = factor(config.contrast);
  spec.saturation_factor = factor(config.saturation);
  // Draw both values unconditionally so the stream position is fixed.
  const bool blur = rng.bernoulli(config.blur_probability);
  const double sigma = rng.uniform(0.0, config.max_blur_sigma);
  spec.blur_sigma = blur ? sigma : 0.0;
  spec.sharpen_amount = rng.uniform(0.0, config.max_sharpen);
  return spec;
}

std::pair<Image, LabelMap> apply_spatial(const Image& image, const LabelMap& label, const SpatialSpec& spec) {
  if (image.height != label.height || image.width != label.width)
    throw InvalidInput("apply_spatial: image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       " but label is " + std::to_string(label.height) + "x" + std::to_string(label.width));
  validate(spec, image.height, image.width);
  const int h = image.height, w = image.width;
  Image out_image(image.channels, h, w);
  LabelMap out_label(h, w);

  const double theta = spec.rotation_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double scale_y = static_cast<double>(spec.crop_height) / h;
  const double scale_x = static_cast<double>(spec.crop_width) / w;
  const double cy = spec.crop_top + 0.5 * (spec.crop_height - 1);
  const double cx = spec.crop_left + 0.5 * (spec.crop_width - 1);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Output pixel -> crop coordinates -> rotate about the crop centre.
      const double py = spec.crop_top + (y + 0.5) * scale_y - 0.5 - cy;
      const double px = spec.crop_left + (x + 0.5) * scale_x - 0.5 - cx;
      const double sy = cy + cos_t * py - sin_t * px;
      const double sx = cx + sin_t * py + cos_t * px;

      const long ly = std::lround(sy), lx = std::lround(sx);
      out_label.at(y, x) = (ly >= 0 && ly < h && lx >= 0 && lx < w) ? label.at(static_cast<int>(ly), static_cast<int>(lx))
                                                                   : kIgnoreIndex;

      const double fy = std::floor(sy), fx = std::floor(sx);
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const double wy = sy - fy, wx = sx - fx;
      for (int c = 0; c < image.channels; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? image.at(c, yy, xx) : 0.0;
        };
        double v = (1 - wy) * (1 - wx) * sample(y0, x0);
        if (wx != 0.0) v += (1 - wy) * wx * sample(y0, x0 + 1);
        if (wy != 0.0) v += wy * (1 - wx) * sample(y0 + 1, x0);
        if (wy != 0.0 && wx != 0.0) v += wy * wx * sample(y0 + 1, x0 + 1);
        out_image.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return {std::move(out_image), std::move(out_label)};
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int h = image.height, w = image.width;
  Image tmp(image.channels, h, w), out(image.channels, h, w);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * image.at(c, y, reflect(x + k, w));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(c, reflect(y + k, h), x);
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image apply_nonspatial(const Image& image, const NonSpatialSpec& spec) {
  validate(spec);
  Image out = image;
  if (spec.brightness_factor != 1.0) {
    for (auto& v : out.pixels) v = clamp01(v * spec.brightness_factor);
  }
  if (spec.contrast_factor != 1.0) {
    double mean = 0.0;
    if (out.channels == 3) {
      for (double g : luminance(out)) mean += g;
      mean /= static_cast<double>(out.plane_size());
    } else {
      for (float v : out.pixels) mean += v;
      mean /= static_cast<double>(out.pixels.size());
    }
    for (auto& v : out.pixels) v = clamp01((v - mean) * spec.contrast_factor + mean);
  }
  if (spec.saturation_factor != 1.0 && out.channels == 3) {
    const auto gray = luminance(out);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < gray.size(); ++i) {
        float& v = out.pixels[c * out.plane_size() + i];
        v = clamp01(gray[i] + spec.saturation_factor * (v - gray[i]));
      }
    }
  }
  if (spec.blur_sigma > 0.0) {
    out = gaussian_blur(out, spec.blur_sigma);
    for (auto& v : out.pixels) v = clamp01(v);
  }
  if (spec.sharpen_amount > 0.0) {
    // Unsharp masking against a fixed-width blur.
    const Image smooth = gaussian_blur(out, 1.0);
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
      out.pixels[i] = clamp01(out.pixels[i] + spec.sharpen_amount * (out.pixels[i] - smooth.pixels[i]));
  }
  return out;
}

}  // namespace tist
