#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tist/error.hpp"

namespace tist {

inline constexpr std::int32_t kIgnoreIndex = 255;

// Dense N x C x H x W array. Used for image batches, logits and
// per-pixel class distributions.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w), values_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw InvalidInput("Tensor: negative dimension");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return values_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h_) * w_; }
  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  T* plane(int n, int c) { return values_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(); }
  const T* plane(int n, int c) const {
    return values_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size();
  }
  T* sample(int n) { return plane(n, 0); }
  const T* sample(int n) const { return plane(n, 0); }

  T& at(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }
  const T& at(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * w_ + x]; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> values_;
};

// Single image, channel-major, values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0F)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Integer class map for one image; may contain kIgnoreIndex.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// N x H x W label grid: ground truth or pseudo-labels for a batch.
struct LabelBatch {
  int n = 0;
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  LabelBatch() = default;
  LabelBatch(int n_, int h, int w, std::int32_t fill = 0)
      : n(n_), height(h), width(w), labels(static_cast<std::size_t>(n_) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::int32_t* sample(int i) { return labels.data() + i * plane_size(); }
  const std::int32_t* sample(int i) const { return labels.data() + i * plane_size(); }

  friend bool operator==(const LabelBatch&, const LabelBatch&) = default;
};

// Binary N x H x W mask (values 0 or 1).
struct ConfidenceMask {
  int n = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;

  ConfidenceMask() = default;
  ConfidenceMask(int n_, int h, int w, std::uint8_t fill = 0)
      : n(n_), height(h), width(w), mask(static_cast<std::size_t>(n_) * h * w, fill) {}

  std::size_t count() const {
    std::size_t k = 0;
    for (auto v : mask) k += v;
    return k;
  }
  bool same_shape(const ConfidenceMask& o) const { return n == o.n && height == o.height && width == o.width; }

  friend bool operator==(const ConfidenceMask&, const ConfidenceMask&) = default;
};

template <typename T>
Tensor<T> stack_images(std::span<const Image> images) {
  if (images.empty()) throw InvalidInput("stack_images: empty batch");
  const auto& first = images.front();
  Tensor<T> out(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width)
      throw InvalidInput("stack_images: images differ in shape");
    T* dst = out.sample(static_cast<int>(i));
    for (std::size_t k = 0; k < im.pixels.size(); ++k) dst[k] = static_cast<T>(im.pixels[k]);
  }
  return out;
}

inline LabelBatch stack_labels(std::span<const LabelMap> maps) {
  if (maps.empty()) throw InvalidInput("stack_labels: empty batch");
  LabelBatch out(static_cast<int>(maps.size()), maps.front().height, maps.front().width);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].height != out.height || maps[i].width != out.width)
      throw InvalidInput("stack_labels: label maps differ in shape");
    std::copy(maps[i].labels.begin(), maps[i].labels.end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

inline LabelMap unstack_label(const LabelBatch& batch, int i) {
  LabelMap out(batch.height, batch.width);
  std::copy(batch.sample(i), batch.sample(i) + batch.plane_size(), out.labels.begin());
  return out;
}

}  // namespace tist
