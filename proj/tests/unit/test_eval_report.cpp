#include <doctest.h>

#include <random>

#include "../oracles/oracles.hpp"
#include "tist/eval_report.hpp"

using namespace tist;

namespace {

LabelMap map_from(int h, int w, std::initializer_list<int> values) {
  LabelMap m(h, w);
  m.labels.assign(values.begin(), values.end());
  return m;
}

oracle::PixelSet pixels_of(const LabelMap& m, int cls, const LabelMap& gt) {
  oracle::PixelSet s;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (gt.at(y, x) != kIgnoreIndex && m.at(y, x) == cls) s.insert({y, x});
  return s;
}

}  // namespace

TEST_CASE("dice score examples") {
  const auto a = map_from(2, 2, {1, 1, 0, 0});
  CHECK(dice_score(a, a, 1) == 1.0);
  CHECK(dice_score(a, map_from(2, 2, {0, 0, 1, 1}), 1) == 0.0);
  CHECK(dice_score(a, map_from(2, 2, {0, 1, 1, 0}), 1) == 0.5);
  CHECK(dice_score(map_from(1, 2, {0, 0}), map_from(1, 2, {0, 0}), 1) == 1.0);
  CHECK_THROWS_AS(dice_score(a, map_from(1, 2, {0, 0}), 1), InvalidInput);
}

TEST_CASE("ignored ground-truth pixels are excluded from both sets") {
  const auto pred = map_from(1, 3, {1, 1, 0});
  const auto gt = map_from(1, 3, {1, 255, 0});
  CHECK(dice_score(pred, gt, 1) == 1.0);
}

TEST_CASE("dice is symmetric and invariant to relabelling") {
  std::mt19937_64 gen(2);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int t = 0; t < 50; ++t) {
    LabelMap a(6, 6), b(6, 6), a2(6, 6), b2(6, 6);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      a.labels[i] = bit(gen);
      b.labels[i] = bit(gen);
      a2.labels[i] = a.labels[i] ? 7 : 3;
      b2.labels[i] = b.labels[i] ? 7 : 3;
    }
    CHECK(dice_score(a, b, 1) == dice_score(b, a, 1));
    CHECK(dice_score(a, b, 1) == dice_score(a2, b2, 7));
  }
}

TEST_CASE("dice matches the set oracle on random masks") {
  std::mt19937_64 gen(17);
  std::uniform_int_distribution<int> value(0, 9);
  for (int t = 0; t < 1000; ++t) {
    LabelMap p(8, 8), g(8, 8);
    const int density = t % 5;  // includes all-empty masks
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      p.labels[i] = value(gen) < density ? 1 : 0;
      const int v = value(gen);
      g.labels[i] = v == 9 ? kIgnoreIndex : (v < density ? 1 : 0);
    }
    CHECK(dice_score(p, g, 1) == oracle::set_dice(pixels_of(p, 1, g), pixels_of(g, 1, g)));
  }
}

TEST_CASE("evaluate_dice averages per image and pools pixels") {
  std::vector<LabelMap> pred{map_from(1, 4, {1, 1, 0, 0}), map_from(1, 4, {0, 0, 0, 0})};
  std::vector<LabelMap> gt{map_from(1, 4, {1, 0, 0, 0}), map_from(1, 4, {0, 0, 0, 1})};
  const auto r = evaluate_dice(pred, gt, 2);
  REQUIRE(r.class_ids == std::vector<std::int32_t>{1});
  CHECK(r.per_class[0] == doctest::Approx((2.0 / 3.0 + 0.0) / 2));
  CHECK(r.pooled_per_class[0] == doctest::Approx(2.0 / 4.0));
  CHECK(r.mean == r.per_class[0]);
  CHECK(r.n_images == 2);
}

TEST_CASE("absent classes and ignore-only images") {
  std::vector<LabelMap> pred{map_from(1, 2, {0, 1}), map_from(1, 2, {0, 0})};
  std::vector<LabelMap> gt{map_from(1, 2, {0, 1}), map_from(1, 2, {255, 255})};
  const auto r = evaluate_dice(pred, gt, 3);
  CHECK(r.n_excluded == 1);
  CHECK(r.n_images == 1);
  CHECK(r.class_ids == std::vector<std::int32_t>{1});
  CHECK(r.absent_classes == std::vector<std::int32_t>{2});
  const auto with_bg = evaluate_dice(pred, gt, 3, true);
  CHECK(with_bg.class_ids == std::vector<std::int32_t>{0, 1});
  CHECK(with_bg.mean == doctest::Approx(1.0));
}

TEST_CASE("relative dice") {
  CHECK(relative_dice(37.69, 15.42) == doctest::Approx(22.27).epsilon(1e-12));
  CHECK(relative_dice(50.93, 22.87) == doctest::Approx(28.06).epsilon(1e-12));
  CHECK(relative_dice(42.0, 42.0) == 0.0);
  CHECK(relative_dice(10.0, 30.0) == -relative_dice(30.0, 10.0));
}

TEST_CASE("fold aggregation") {
  DiceResult a, b, c, d;
  a.class_ids = b.class_ids = c.class_ids = d.class_ids = {1};
  a.per_class = {0.4};
  a.mean = 0.4;
  b.per_class = {0.6};
  b.mean = 0.6;
  c.per_class = {0.9};
  c.mean = 0.9;
  d.per_class = {0.1};
  d.mean = 0.1;

  const std::vector<DiceResult> one{a};
  const auto s1 = aggregate_folds(one);
  CHECK(s1.mean == 0.4);
  CHECK(s1.std == 0.0);
  CHECK(s1.mean_per_class == std::vector<double>{0.4});

  const std::vector<DiceResult> two{a, b};
  CHECK(aggregate_folds(two).mean == doctest::Approx(0.5));

  const std::vector<DiceResult> four{a, b, c, d}, reversed{d, c, b, a};
  const auto s4 = aggregate_folds(four);
  double manual = 0;
  for (double v : {0.1, 0.9, 0.6, 0.4}) manual += v;
  CHECK(s4.mean == doctest::Approx(manual / 4).epsilon(1e-15));
  CHECK(s4.std == doctest::Approx(aggregate_folds(reversed).std).epsilon(1e-15));
  CHECK(s4.std == doctest::Approx(std::sqrt(((0.4 - 0.5) * (0.4 - 0.5) + 0.01 + 0.16 + 0.16) / 3)));

  CHECK_THROWS_AS(aggregate_folds(std::span<const DiceResult>{}), InvalidInput);
}
