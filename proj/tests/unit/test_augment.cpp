#include <doctest.h>

#include <cmath>

#include "tist/augment.hpp"

using namespace tist;

namespace {

Image ramp_image(int c, int h, int w) {
  Image im(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) im.at(ch, y, x) = static_cast<float>((x + 2 * y + ch) % 17) / 16.0f;
  return im;
}

LabelMap square_labels(int h, int w) {
  LabelMap m(h, w);
  for (int y = h / 4; y < 3 * h / 4; ++y)
    for (int x = w / 4; x < 3 * w / 4; ++x) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("identity transforms are exact") {
  const Image im = ramp_image(3, 16, 12);
  const LabelMap lab = square_labels(16, 12);
  const auto [out, out_lab] = apply_spatial(im, lab, identity_spatial(16, 12));
  CHECK(out.pixels == im.pixels);
  CHECK(out_lab == lab);
  CHECK(apply_nonspatial(im, identity_nonspatial()).pixels == im.pixels);
}

TEST_CASE("spatial transform moves image and labels together") {
  // Intensity equals the label, so after a joint warp the bilinear image
  // rounds to the nearest-neighbour label away from the square's border.
  Image im(1, 32, 32);
  const LabelMap lab = square_labels(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) im.at(0, y, x) = static_cast<float>(lab.at(y, x));
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto spec = sample_spatial(rng, 32, 32);
    const auto [out, out_lab] = apply_spatial(im, lab, spec);
    int counted = 0, disagree = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        if (out_lab.at(y, x) == kIgnoreIndex) continue;
        ++counted;
        disagree += std::abs(out.at(0, y, x) - out_lab.at(y, x)) >= 0.5f;
        CHECK(std::abs(out.at(0, y, x) - out_lab.at(y, x)) <= 0.75f + 1e-5f);
      }
    CHECK(disagree <= counted / 20);
  }
}

TEST_CASE("crop of the top-left quadrant") {
  Image im(1, 8, 8);
  LabelMap lab(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      im.at(0, y, x) = (y < 4 && x < 4) ? 0.75f : 0.25f;
      lab.at(y, x) = (y < 4 && x < 4) ? 1 : 0;
    }
  SpatialSpec spec{0.0, 0, 0, 4, 4};
  const auto [out, out_lab] = apply_spatial(im, lab, spec);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(out_lab.at(y, x) == 1);
  CHECK(out.at(0, 3, 3) == doctest::Approx(0.75f));
}

TEST_CASE("sampled specs stay within the configured ranges") {
  Rng rng(4);
  AugmentConfig cfg;
  for (int i = 0; i < 500; ++i) {
    const auto s = sample_spatial(rng, 64, 48, cfg);
    CHECK(std::abs(s.rotation_degrees) <= kMaxRotationDegrees);
    CHECK(s.crop_top >= 0);
    CHECK(s.crop_left >= 0);
    CHECK(s.crop_top + s.crop_height <= 64);
    CHECK(s.crop_left + s.crop_width <= 48);
    CHECK(s.crop_height >= 32);
    const auto f = sample_nonspatial(rng, cfg);
    CHECK(f.brightness_factor >= 0.3 - 1e-12);
    CHECK(f.brightness_factor <= 1.7 + 1e-12);
    CHECK(f.contrast_factor >= 0.3 - 1e-12);
    CHECK(f.saturation_factor <= 1.7 + 1e-12);
    CHECK(f.blur_sigma >= 0.0);
    CHECK(f.blur_sigma <= cfg.max_blur_sigma);
    CHECK(f.sharpen_amount >= 0.0);
    CHECK(f.sharpen_amount <= cfg.max_sharpen);
  }
}

TEST_CASE("brightness stage matches the closed form") {
  const Image im = ramp_image(3, 8, 8);
  NonSpatialSpec spec = identity_nonspatial();
  spec.brightness_factor = 1.4;
  const Image out = apply_nonspatial(im, spec);
  for (std::size_t i = 0; i < im.pixels.size(); ++i)
    CHECK(out.pixels[i] == doctest::Approx(std::min(1.0, 1.4 * im.pixels[i])).epsilon(1e-6));
}

TEST_CASE("photometric transforms keep values in [0, 1]") {
  Rng rng(12);
  const Image im = ramp_image(3, 16, 16);
  for (int i = 0; i < 50; ++i) {
    const Image out = apply_nonspatial(im, sample_nonspatial(rng));
    for (float v : out.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("gaussian blur preserves a constant image") {
  const Image flat(2, 9, 7, 0.4f);
  const Image out = gaussian_blur(flat, 1.5);
  for (float v : out.pixels) CHECK(v == doctest::Approx(0.4f).epsilon(1e-6));
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS_AS(validate(SpatialSpec{0.0, 0, 0, 0, 4}, 8, 8), InvalidInput);
  CHECK_THROWS_AS(validate(SpatialSpec{45.0, 0, 0, 8, 8}, 8, 8), InvalidInput);
  NonSpatialSpec bad = identity_nonspatial();
  bad.blur_sigma = -1;
  CHECK_THROWS_AS(validate(bad), InvalidInput);
}
