#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tist/tensor.hpp"

namespace testing_support {

// Random class distribution; `sharpness` scales logits so that larger
// values give more peaked vectors.
inline std::vector<double> random_distribution(std::mt19937_64& gen, int classes, double sharpness) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> p(classes);
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(sharpness * normal(gen));
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

// Packs per-pixel distributions [pixel][class] into a 1 x C x 1 x P tensor.
template <typename T>
tist::Tensor<T> pack_pixels(const std::vector<std::vector<double>>& pixels) {
  const int classes = static_cast<int>(pixels.front().size());
  tist::Tensor<T> t(1, classes, 1, static_cast<int>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i)
    for (int c = 0; c < classes; ++c) t.at(0, c, 0, static_cast<int>(i)) = static_cast<T>(pixels[i][c]);
  return t;
}

template <typename T>
std::vector<std::vector<double>> unpack_pixels(const tist::Tensor<T>& t) {
  std::vector<std::vector<double>> out;
  for (int n = 0; n < t.n(); ++n)
    for (std::size_t i = 0; i < t.plane_size(); ++i) {
      std::vector<double> p;
      for (int c = 0; c < t.c(); ++c) p.push_back(t.plane(n, c)[i]);
      out.push_back(p);
    }
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tist_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
