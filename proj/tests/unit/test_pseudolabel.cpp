#include <doctest.h>

#include <random>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "tist/pseudolabel.hpp"

using namespace tist;
using testing_support::pack_pixels;

TEST_CASE("confidence mask uses a strict threshold") {
  const auto probs = pack_pixels<double>({{0.85, 0.15}, {0.86, 0.14}, {0.5, 0.5}, {0.1, 0.9}});
  const auto mask = confidence_mask(probs, 0.85);
  CHECK(mask.mask == std::vector<std::uint8_t>{0, 1, 0, 1});
}

TEST_CASE("tau outside (0.5, 1) is rejected") {
  const auto probs = pack_pixels<double>({{0.9, 0.1}});
  CHECK_THROWS_AS(confidence_mask(probs, 0.5), InvalidConfig);
  CHECK_THROWS_AS(confidence_mask(probs, 1.0), InvalidConfig);
  CHECK_THROWS_AS(confidence_mask(probs, 0.3), InvalidConfig);
  CHECK_NOTHROW(confidence_mask(probs, 0.51));
}

TEST_CASE("ensemble mask is the elementwise product") {
  ConfidenceMask a(1, 1, 4), b(1, 1, 4);
  a.mask = {1, 1, 0, 0};
  b.mask = {1, 0, 1, 0};
  CHECK(ensemble_mask(a, b).mask == std::vector<std::uint8_t>{1, 0, 0, 0});
  ConfidenceMask c(1, 2, 2);
  CHECK_THROWS_AS(ensemble_mask(a, c), InvalidInput);
}

TEST_CASE("pseudo labels follow the transformed view and ignore unmasked pixels") {
  SUBCASE("worked examples") {
    const auto plain = pack_pixels<double>({{0.9, 0.1}, {0.9, 0.1}, {0.2, 0.8}});
    const auto trans = pack_pixels<double>({{0.88, 0.12}, {0.6, 0.4}, {0.05, 0.95}});
    ConfidenceMask mask;
    const auto labels = transformation_invariant_labels(plain, trans, 0.85, &mask);
    CHECK(labels.labels == std::vector<std::int32_t>{0, kIgnoreIndex, kIgnoreIndex});
    CHECK(mask.mask == std::vector<std::uint8_t>{1, 0, 0});
  }
  SUBCASE("confident disagreement keeps the transformed label") {
    const auto plain = pack_pixels<double>({{0.95, 0.05}});
    const auto trans = pack_pixels<double>({{0.02, 0.98}});
    CHECK(transformation_invariant_labels(plain, trans, 0.9).labels == std::vector<std::int32_t>{1});
  }
  SUBCASE("ties go to the lowest class") {
    const auto probs = pack_pixels<double>({{0.45, 0.45, 0.1}});
    ConfidenceMask all(1, 1, 1, 1);
    CHECK(make_pseudo_labels(probs, all).labels == std::vector<std::int32_t>{0});
  }
  SUBCASE("custom ignore value") {
    const auto probs = pack_pixels<double>({{0.6, 0.4}});
    ConfidenceMask none(1, 1, 1, 0);
    CHECK(make_pseudo_labels(probs, none, -1).labels == std::vector<std::int32_t>{-1});
  }
}

TEST_CASE("tau near one empties the mask") {
  std::mt19937_64 gen(3);
  std::vector<std::vector<double>> a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(testing_support::random_distribution(gen, 3, 1.0));
    b.push_back(testing_support::random_distribution(gen, 3, 1.0));
  }
  ConfidenceMask mask;
  transformation_invariant_labels(pack_pixels<double>(a), pack_pixels<double>(b), 1.0 - 1e-12, &mask);
  CHECK(mask.count() == 0);
}

TEST_CASE("production labels agree with the per-pixel oracle") {
  std::mt19937_64 gen(11);
  for (int classes : {2, 3, 5})
    for (double tau : {0.6, 0.85, 0.95}) {
      std::vector<std::vector<double>> a, b;
      for (int i = 0; i < 300; ++i) {
        a.push_back(testing_support::random_distribution(gen, classes, 2.5));
        b.push_back(testing_support::random_distribution(gen, classes, 2.5));
      }
      const auto labels = transformation_invariant_labels(pack_pixels<double>(a), pack_pixels<double>(b), tau);
      int disagreements = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const auto expected = oracle::naive_tist_pixel(a[i], b[i], tau);
        disagreements += labels.labels[i] != (expected ? *expected : kIgnoreIndex);
      }
      CHECK(disagreements == 0);
    }
}

TEST_CASE("float and double agree away from the threshold") {
  const std::vector<std::vector<double>> px{{0.97, 0.03}, {0.3, 0.7}, {0.1, 0.9}};
  CHECK(confidence_mask(pack_pixels<float>(px), 0.85).mask == confidence_mask(pack_pixels<double>(px), 0.85).mask);
}
