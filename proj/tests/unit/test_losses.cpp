#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "tist/losses.hpp"

using namespace tist;
using testing_support::pack_pixels;

TEST_CASE("ramp weight follows exp(-5 (1 - e/E))") {
  const RampSchedule s{30, false};
  CHECK(lambda_at(s, 0) == doctest::Approx(std::exp(-5.0)).epsilon(1e-14));
  CHECK(std::abs(lambda_at(s, 15) - std::exp(-2.5)) < 1e-12);
  CHECK(lambda_at(s, 30) == 1.0);
  for (int e = 0; e < 30; ++e) CHECK(lambda_at(s, e) < lambda_at(s, e + 1));
  for (int e = 0; e <= 30; ++e) CHECK(std::abs(lambda_at(s, e) - oracle::naive_ramp(e, 30)) < 1e-15);
  CHECK_THROWS_AS(lambda_at(s, -1), InvalidInput);
  CHECK_THROWS_AS(lambda_at(s, 31), InvalidInput);
  CHECK_THROWS_AS(lambda_at(RampSchedule{0, false}, 0), InvalidConfig);
}

TEST_CASE("squared ramp variant") {
  const RampSchedule s{10, true};
  CHECK(lambda_at(s, 5) == doctest::Approx(std::exp(-5.0 * 0.25)));
  CHECK(lambda_at(s, 10) == 1.0);
}

TEST_CASE("overall loss is sup + lambda * ps") {
  CHECK(overall_loss(0.5, 0.0, 1.0) == 0.5);
  CHECK(overall_loss(0.2, 0.6, std::exp(-5.0)) == doctest::Approx(0.2 + 0.6 * std::exp(-5.0)));
  CHECK_THROWS_AS(overall_loss(1.0, 1.0, -0.1), InvalidInput);
}

TEST_CASE("supervised loss on a perfect one-hot prediction is near zero") {
  const auto probs = pack_pixels<double>({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}});
  LabelBatch gt(1, 1, 3);
  gt.labels = {0, 1, 0};
  const auto r = supervised_loss(probs, gt, LossWeights{});
  CHECK(r.value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("supervised and pseudo losses match the naive formulas") {
  std::mt19937_64 gen(5);
  for (int classes : {2, 4}) {
    std::vector<std::vector<double>> px;
    std::vector<int> labels;
    std::uniform_int_distribution<int> lab(0, classes);
    for (int i = 0; i < 40; ++i) {
      px.push_back(testing_support::random_distribution(gen, classes, 1.0));
      const int l = lab(gen);
      labels.push_back(l == classes ? 255 : l);
    }
    LabelBatch gt(1, 1, 40);
    gt.labels.assign(labels.begin(), labels.end());
    const LossWeights w{0.7, 1.3, 1e-6};
    const auto sup = supervised_loss(pack_pixels<double>(px), gt, w);
    CHECK(sup.value == doctest::Approx(oracle::naive_supervised_loss(px, labels, classes, 0.7, 1.3, 1e-6)).epsilon(1e-12));
    const auto ps = pseudo_supervised_loss(pack_pixels<double>(px), gt);
    CHECK(ps.value == doctest::Approx(oracle::naive_pseudo_loss(px, labels, classes)).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients w.r.t. probabilities match finite differences") {
  std::mt19937_64 gen(9);
  std::vector<std::vector<double>> px;
  for (int i = 0; i < 12; ++i) px.push_back(testing_support::random_distribution(gen, 3, 0.8));
  LabelBatch gt(1, 1, 12);
  gt.labels = {0, 1, 2, 255, 1, 1, 0, 2, 2, 255, 0, 1};
  const LossWeights w{1.0, 1.0, 1e-6};

  auto flat = [&](const std::vector<std::vector<double>>& p) {
    std::vector<double> v;
    const auto t = pack_pixels<double>(p);
    v.assign(t.values().begin(), t.values().end());
    return v;
  };
  auto from_flat = [&](const std::vector<double>& v) {
    Tensor<double> t(1, 3, 1, 12);
    std::copy(v.begin(), v.end(), t.values().begin());
    return t;
  };
  const auto params = flat(px);
  for (int which = 0; which < 2; ++which) {
    auto loss = [&](const std::vector<double>& v) {
      return which == 0 ? supervised_loss(from_flat(v), gt, w).value : pseudo_supervised_loss(from_flat(v), gt).value;
    };
    const auto r = which == 0 ? supervised_loss(from_flat(params), gt, w) : pseudo_supervised_loss(from_flat(params), gt);
    const std::vector<double> analytic(r.grad.values().begin(), r.grad.values().end());
    const auto report = oracle::fd_gradient_check(loss, params, analytic, 1e-6);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("all-ignored pseudo labels give an empty zero loss") {
  const auto probs = pack_pixels<double>({{0.7, 0.3}, {0.2, 0.8}});
  LabelBatch none(1, 1, 2, kIgnoreIndex);
  const auto r = pseudo_supervised_loss(probs, none);
  CHECK(r.empty);
  CHECK(r.value == 0.0);
  for (double g : r.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("soft dice is pooled over the batch") {
  const auto probs = pack_pixels<double>({{1.0, 0.0}, {0.0, 1.0}});
  LabelBatch gt(1, 1, 2);
  gt.labels = {0, 0};
  const auto d = soft_dice_per_class(probs, gt, 0.0);
  CHECK(d[0] == doctest::Approx(2.0 / 3.0));
  CHECK(d[1] == doctest::Approx(0.0));
}

TEST_CASE("invalid inputs") {
  const auto probs = pack_pixels<double>({{0.5, 0.5}});
  LabelBatch wrong(1, 1, 2);
  CHECK_THROWS_AS(supervised_loss(probs, wrong, LossWeights{}), InvalidInput);
  LabelBatch out_of_range(1, 1, 1, 7);
  CHECK_THROWS_AS(pseudo_supervised_loss(probs, out_of_range), InvalidInput);
  CHECK_THROWS_AS(validate(LossWeights{-1.0, 1.0, 1e-6}), InvalidConfig);
}
