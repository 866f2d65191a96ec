#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles/oracles.hpp"
#include "tist/model.hpp"

using namespace tist;

namespace {

template <typename T>
Tensor<T> random_batch(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.values()) v = static_cast<T>(u(gen));
  return t;
}

}  // namespace

TEST_CASE("forward shape contract") {
  SegmentationModel<float> model(ModelConfig{3, 2, 8, 4, 0, 0, 1});
  const auto logits = model.forward(random_batch<float>(2, 3, 64, 64, 1));
  CHECK(logits.n() == 2);
  CHECK(logits.c() == 2);
  CHECK(logits.h() == 64);
  CHECK(logits.w() == 64);
  for (float v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("inference is deterministic") {
  SegmentationModel<float> model(ModelConfig{3, 3, 4, 3, 0, 0, 2});
  const auto x = random_batch<float>(1, 3, 16, 16, 2);
  CHECK(model.forward(x) == model.forward(x));
}

TEST_CASE("softmax rows sum to one") {
  SegmentationModel<float> model(ModelConfig{3, 4, 4, 3, 0, 0, 3});
  const auto p = predict_probs(model, random_batch<float>(2, 3, 16, 16, 3));
  for (int n = 0; n < p.n(); ++n)
    for (std::size_t i = 0; i < p.plane_size(); ++i) {
      double s = 0;
      for (int c = 0; c < p.c(); ++c) s += p.plane(n, c)[i];
      CHECK(std::abs(s - 1.0) < 1e-5);
    }
}

TEST_CASE("softmax matches the closed form") {
  Tensor<double> logits(1, 3, 2, 2);
  const std::vector<std::vector<double>> px{{0, 0, 0}, {1, 2, 3}, {-5, 0, 5}, {100, 100, 99}};
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) logits.plane(0, c)[i] = px[i][c];
  const auto p = softmax(logits);
  for (int i = 0; i < 4; ++i) {
    const auto expected = oracle::naive_softmax(px[i]);
    for (int c = 0; c < 3; ++c) CHECK(p.plane(0, c)[i] == doctest::Approx(expected[c]).epsilon(1e-14));
  }
  CHECK(p.plane(0, 0)[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax is shift invariant per pixel") {
  auto logits = random_batch<double>(1, 3, 4, 4, 5);
  auto shifted = logits;
  for (int c = 0; c < 3; ++c) shifted.plane(0, c)[5] += 7.5;
  const auto a = softmax(logits), b = softmax(shifted);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.values()[k] == doctest::Approx(b.values()[k]).epsilon(1e-12));
}

TEST_CASE("argmax resolves ties to the lowest class") {
  Tensor<double> p(1, 3, 1, 2);
  p.plane(0, 0)[0] = 0.4;
  p.plane(0, 1)[0] = 0.4;
  p.plane(0, 2)[0] = 0.2;
  p.plane(0, 0)[1] = 0.2;
  p.plane(0, 1)[1] = 0.4;
  p.plane(0, 2)[1] = 0.4;
  CHECK(argmax_labels(p).labels == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("shape mismatch is an invalid-input error") {
  SegmentationModel<float> model(ModelConfig{3, 2, 4, 4, 0, 0, 0});
  CHECK_THROWS_AS(model.forward(random_batch<float>(1, 1, 16, 16, 0)), InvalidInput);
  CHECK_THROWS_AS(model.forward(random_batch<float>(1, 3, 12, 12, 0)), InvalidInput);
  SegmentationModel<float> fixed(ModelConfig{3, 2, 4, 2, 32, 32, 0});
  CHECK_THROWS_AS(fixed.forward(random_batch<float>(1, 3, 16, 16, 0)), InvalidInput);
}

TEST_CASE("parameter layout tiles the flat buffer") {
  SegmentationModel<float> model(ModelConfig{3, 2, 16, 4, 0, 0, 0});
  std::size_t next = 0;
  for (const auto& p : model.layout()) {
    CHECK(p.offset == next);
    std::size_t count = 1;
    for (int d : p.dims) count *= static_cast<std::size_t>(d);
    CHECK(count == p.count);
    next += p.count;
  }
  CHECK(next == model.parameter_count());
  CHECK(model.parameter_count() < 2'000'000);
}

TEST_CASE("same seed gives the same initialization") {
  SegmentationModel<float> a(ModelConfig{3, 2, 4, 3, 0, 0, 9}), b(ModelConfig{3, 2, 4, 3, 0, 0, 9}),
      c(ModelConfig{3, 2, 4, 3, 0, 0, 10});
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
}

TEST_CASE("backward matches finite differences on a tiny network") {
  SegmentationModel<double> model(ModelConfig{2, 3, 2, 2, 0, 0, 4});
  // Zero biases put dead units exactly on the ReLU kink; move them off it.
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& v : model.parameters()) v += jitter(gen);
  const auto x = random_batch<double>(2, 2, 4, 4, 6);
  const auto weights = random_batch<double>(2, 3, 4, 4, 7);
  auto loss_of = [&](const std::vector<double>& params) {
    SegmentationModel<double> m = model;
    std::copy(params.begin(), params.end(), m.parameters().begin());
    const auto y = m.forward(x);
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += weights.values()[k] * y.values()[k];
    return s;
  };
  typename SegmentationModel<double>::Cache cache;
  model.forward(x, &cache);
  std::vector<double> grad(model.parameter_count(), 0.0);
  model.backward(cache, weights, grad);
  const std::vector<double> params(model.parameters().begin(), model.parameters().end());
  const auto report = oracle::fd_gradient_check(loss_of, params, grad, 1e-5, 1e-6);
  CHECK(report.n_cases == static_cast<int>(params.size()));
  CHECK(report.max_rel_error < 1e-5);
}
