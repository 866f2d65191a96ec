#include "tist/model.hpp"

// Small products otherwise take a coefficient-based path whose summation
// order depends on buffer alignment; the packed kernel does not.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tist/rng.hpp"

namespace tist {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Unfolds 3x3 neighbourhoods (zero padding 1) of one C x H x W sample into
// a (C*9) x (H*W) column matrix.
template <typename T>
void im2col3(const T* x, int channels, int h, int w, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src = x + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          std::fill(dst, dst + x0, T(0));
          std::copy(srow + x0 + dx, srow + x1 + dx, dst + x0);
          std::fill(dst + x1, dst + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im3_add(const T* cols, int channels, int h, int w, T* x) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* dstc = x + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y) * w;
          T* drow = dstc + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int xx = x0; xx < x1; ++xx) drow[xx + dx] += src[xx];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  const int oh = x.h() / 2, ow = x.w() / 2;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t k = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = y.plane(n, c);
      for (int yy = 0; yy < oh; ++yy) {
        for (int xx = 0; xx < ow; ++xx, ++k) {
          std::uint32_t best = static_cast<std::uint32_t>((2 * yy) * x.w() + 2 * xx);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::uint32_t>((2 * yy + dy) * x.w() + 2 * xx + dx);
              if (src[idx] > src[best]) best = idx;
            }
          }
          dst[yy * ow + xx] = src[best];
          if (argmax) (*argmax)[k] = best;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad, const std::vector<std::uint32_t>& argmax,
                            const std::array<int, 4>& in_shape) {
  Tensor<T> gx(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
  std::size_t k = 0;
  for (int n = 0; n < grad.n(); ++n) {
    for (int c = 0; c < grad.c(); ++c) {
      const T* g = grad.plane(n, c);
      T* dst = gx.plane(n, c);
      for (std::size_t i = 0; i < grad.plane_size(); ++i, ++k) dst[argmax[k]] += g[i];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = y.plane(n, c);
      for (int yy = 0; yy < y.h(); ++yy) {
        const T* srow = src + (yy / 2) * x.w();
        T* drow = dst + static_cast<std::size_t>(yy) * y.w();
        for (int xx = 0; xx < y.w(); ++xx) drow[xx] = srow[xx / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad) {
  Tensor<T> gx(grad.n(), grad.c(), grad.h() / 2, grad.w() / 2);
  for (int n = 0; n < grad.n(); ++n) {
    for (int c = 0; c < grad.c(); ++c) {
      const T* src = grad.plane(n, c);
      T* dst = gx.plane(n, c);
      for (int yy = 0; yy < grad.h(); ++yy) {
        const T* srow = src + static_cast<std::size_t>(yy) * grad.w();
        T* drow = dst + (yy / 2) * gx.w();
        for (int xx = 0; xx < grad.w(); ++xx) drow[xx / 2] += srow[xx];
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t sa = a.c() * a.plane_size();
  const std::size_t sb = b.c() * b.plane_size();
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + sa, y.sample(n));
    std::copy(b.sample(n), b.sample(n) + sb, y.sample(n) + sa);
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int first) {
  Tensor<T> a(g.n(), first, g.h(), g.w());
  Tensor<T> b(g.n(), g.c() - first, g.h(), g.w());
  const std::size_t sa = a.c() * a.plane_size();
  const std::size_t sb = b.c() * b.plane_size();
  for (int n = 0; n < g.n(); ++n) {
    std::copy(g.sample(n), g.sample(n) + sa, a.sample(n));
    std::copy(g.sample(n) + sa, g.sample(n) + sa + sb, b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace

template <typename T>
SegmentationModel<T>::SegmentationModel(const ModelConfig& config) : config_(config) {
  if (config.in_channels < 1 || config.num_classes < 2 || config.base_width < 1 || config.levels < 2)
    throw InvalidConfig("SegmentationModel: need in_channels>=1, num_classes>=2, base_width>=1, levels>=2");
  if (config.input_height < 0 || config.input_width < 0) throw InvalidConfig("SegmentationModel: negative input size");

  const int levels = config.levels;
  auto width = [&](int l) { return config.base_width << l; };
  int in = config.in_channels;
  for (int l = 0; l + 1 < levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    enc_a_.push_back(add_conv(p + ".conv1", in, width(l), 3, true));
    enc_b_.push_back(add_conv(p + ".conv2", width(l), width(l), 3, true));
    in = width(l);
  }
  bott_a_ = add_conv("bottleneck.conv1", in, width(levels - 1), 3, true);
  bott_b_ = add_conv("bottleneck.conv2", width(levels - 1), width(levels - 1), 3, true);
  dec_reduce_.resize(levels - 1);
  dec_a_.resize(levels - 1);
  dec_b_.resize(levels - 1);
  for (int l = levels - 2; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    dec_reduce_[l] = add_conv(p + ".reduce", width(l + 1), width(l), 1, false);
    dec_a_[l] = add_conv(p + ".conv1", 2 * width(l), width(l), 3, true);
    dec_b_[l] = add_conv(p + ".conv2", width(l), width(l), 3, true);
  }
  head_ = add_conv("head", width(0), config.num_classes, 1, false);

  // Kaiming-normal weights, zero biases.
  Rng rng(Rng::derive(config.seed, {0x1417}));
  for (const auto& conv : convs_) {
    const double fan_in = static_cast<double>(conv.in) * conv.kernel * conv.kernel;
    const double stddev = std::sqrt((conv.relu ? 2.0 : 1.0) / fan_in);
    const std::size_t count = static_cast<std::size_t>(conv.out) * conv.in * conv.kernel * conv.kernel;
    for (std::size_t i = 0; i < count; ++i) params_[conv.weight_offset + i] = static_cast<T>(stddev * rng.normal());
  }
}

template <typename T>
std::size_t SegmentationModel<T>::add_param(const std::string& name, std::vector<int> dims) {
  std::size_t count = 1;
  for (int d : dims) count *= static_cast<std::size_t>(d);
  ParamInfo info{name, std::move(dims), params_.size(), count};
  params_.resize(params_.size() + count, T(0));
  layout_.push_back(std::move(info));
  return layout_.back().offset;
}

template <typename T>
int SegmentationModel<T>::add_conv(const std::string& name, int in, int out, int kernel, bool relu) {
  ConvSpec spec;
  spec.in = in;
  spec.out = out;
  spec.kernel = kernel;
  spec.relu = relu;
  spec.weight_offset = add_param(name + ".weight", {out, in, kernel, kernel});
  spec.bias_offset = add_param(name + ".bias", {out});
  convs_.push_back(spec);
  return static_cast<int>(convs_.size()) - 1;
}

template <typename T>
void SegmentationModel<T>::check_input(const Tensor<T>& images) const {
  const int div = 1 << (config_.levels - 1);
  if (images.n() < 1) throw InvalidInput("forward: empty batch");
  if (images.c() != config_.in_channels)
    throw InvalidInput("forward: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                       std::to_string(images.c()));
  if (config_.input_height > 0 && (images.h() != config_.input_height || images.w() != config_.input_width))
    throw InvalidInput("forward: expected " + std::to_string(config_.input_height) + "x" +
                       std::to_string(config_.input_width) + " input");
  if (images.h() < div || images.w() < div || images.h() % div != 0 || images.w() % div != 0)
    throw InvalidInput("forward: spatial size must be a positive multiple of " + std::to_string(div));
}

template <typename T>
Tensor<T> SegmentationModel<T>::conv_forward(int layer, const Tensor<T>& x, Cache* cache) const {
  const ConvSpec& spec = convs_[layer];
  const int h = x.h(), w = x.w();
  const int hw = h * w;
  const int k = spec.in * spec.kernel * spec.kernel;
  Tensor<T> y(x.n(), spec.out, h, w);
  ConstMatrixMap<T> weight(params_.data() + spec.weight_offset, spec.out, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(params_.data() + spec.bias_offset, spec.out);
  std::vector<T> cols(spec.kernel == 3 ? static_cast<std::size_t>(k) * hw : 0);
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.sample(n);
    if (spec.kernel == 3) {
      im2col3(src, spec.in, h, w, cols.data());
      src = cols.data();
    }
    MatrixMap<T> out(y.sample(n), spec.out, hw);
    out.noalias() = weight * ConstMatrixMap<T>(src, k, hw);
    out.colwise() += bias;
    if (spec.relu) out = out.cwiseMax(T(0));
  }
  if (cache) {
    cache->conv_inputs[layer] = x;
    if (spec.relu) cache->conv_outputs[layer] = y;
  }
  return y;
}

template <typename T>
Tensor<T> SegmentationModel<T>::conv_backward(int layer, const Cache& cache, Tensor<T> grad_out,
                                              std::span<T> grad, bool need_input_grad) const {
  const ConvSpec& spec = convs_[layer];
  const Tensor<T>& x = cache.conv_inputs[layer];
  const int h = x.h(), w = x.w();
  const int hw = h * w;
  const int k = spec.in * spec.kernel * spec.kernel;
  if (spec.relu) {
    const Tensor<T>& y = cache.conv_outputs[layer];
    T* g = grad_out.data();
    const T* yv = y.data();
    for (std::size_t i = 0; i < grad_out.size(); ++i)
      if (!(yv[i] > T(0))) g[i] = T(0);
  }
  ConstMatrixMap<T> weight(params_.data() + spec.weight_offset, spec.out, k);
  MatrixMap<T> grad_weight(grad.data() + spec.weight_offset, spec.out, k);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> grad_bias(grad.data() + spec.bias_offset, spec.out);
  Tensor<T> grad_in;
  if (need_input_grad) grad_in = Tensor<T>(x.n(), x.c(), h, w);
  std::vector<T> cols(spec.kernel == 3 ? static_cast<std::size_t>(k) * hw : 0);
  std::vector<T> grad_cols(spec.kernel == 3 && need_input_grad ? static_cast<std::size_t>(k) * hw : 0);
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.sample(n);
    if (spec.kernel == 3) {
      im2col3(src, spec.in, h, w, cols.data());
      src = cols.data();
    }
    ConstMatrixMap<T> g(grad_out.sample(n), spec.out, hw);
    grad_weight.noalias() += g * ConstMatrixMap<T>(src, k, hw).transpose();
    for (int o = 0; o < spec.out; ++o) {
      const T* row = grad_out.sample(n) + static_cast<std::size_t>(o) * hw;
      T s = T(0);
      for (std::size_t i = 0; i < static_cast<std::size_t>(hw); ++i) s += row[i];
      grad_bias[o] += s;
    }
    if (!need_input_grad) continue;
    if (spec.kernel == 3) {
      MatrixMap<T>(grad_cols.data(), k, hw).noalias() = weight.transpose() * g;
      col2im3_add(grad_cols.data(), spec.in, h, w, grad_in.sample(n));
    } else {
      MatrixMap<T>(grad_in.sample(n), k, hw).noalias() = weight.transpose() * g;
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> SegmentationModel<T>::forward(const Tensor<T>& images, Cache* cache) const {
  check_input(images);
  const int levels = config_.levels;
  if (cache) {
    cache->conv_inputs.assign(convs_.size(), {});
    cache->conv_outputs.assign(convs_.size(), {});
    cache->pool_argmax.assign(levels - 1, {});
    cache->pool_input_shapes.assign(levels - 1, {});
  }
  std::vector<Tensor<T>> skips(levels - 1);
  Tensor<T> x = images;
  for (int l = 0; l + 1 < levels; ++l) {
    x = conv_forward(enc_a_[l], x, cache);
    skips[l] = conv_forward(enc_b_[l], x, cache);
    if (cache) cache->pool_input_shapes[l] = {skips[l].n(), skips[l].c(), skips[l].h(), skips[l].w()};
    x = maxpool2(skips[l], cache ? &cache->pool_argmax[l] : nullptr);
  }
  x = conv_forward(bott_a_, x, cache);
  x = conv_forward(bott_b_, x, cache);
  for (int l = levels - 2; l >= 0; --l) {
    x = upsample2(conv_forward(dec_reduce_[l], x, cache));
    x = conv_forward(dec_a_[l], concat_channels(x, skips[l]), cache);
    x = conv_forward(dec_b_[l], x, cache);
  }
  return conv_forward(head_, x, cache);
}

template <typename T>
void SegmentationModel<T>::backward(const Cache& cache, const Tensor<T>& grad_logits, std::span<T> grad) const {
  if (grad.size() != params_.size()) throw InvalidInput("backward: gradient buffer size mismatch");
  if (cache.conv_inputs.size() != convs_.size()) throw InvalidInput("backward: cache was not filled by forward");
  const int levels = config_.levels;
  std::vector<Tensor<T>> skip_grads(levels - 1);
  Tensor<T> g = conv_backward(head_, cache, grad_logits, grad, true);
  for (int l = 0; l + 1 < levels; ++l) {
    g = conv_backward(dec_b_[l], cache, std::move(g), grad, true);
    g = conv_backward(dec_a_[l], cache, std::move(g), grad, true);
    auto [up, skip] = split_channels(g, convs_[dec_reduce_[l]].out);
    skip_grads[l] = std::move(skip);
    g = conv_backward(dec_reduce_[l], cache, upsample2_backward(up), grad, true);
  }
  g = conv_backward(bott_b_, cache, std::move(g), grad, true);
  g = conv_backward(bott_a_, cache, std::move(g), grad, true);
  for (int l = levels - 2; l >= 0; --l) {
    Tensor<T> gs = maxpool2_backward(g, cache.pool_argmax[l], cache.pool_input_shapes[l]);
    const T* extra = skip_grads[l].data();
    T* dst = gs.data();
    for (std::size_t i = 0; i < gs.size(); ++i) dst[i] += extra[i];
    g = conv_backward(enc_b_[l], cache, std::move(gs), grad, true);
    g = conv_backward(enc_a_[l], cache, std::move(g), grad, l > 0);
  }
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> probs(logits.n(), logits.c(), logits.h(), logits.w());
  const std::size_t hw = logits.plane_size();
  const int classes = logits.c();
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      T peak = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < classes; ++c) peak = std::max(peak, logits.plane(n, c)[i]);
      T total = 0;
      for (int c = 0; c < classes; ++c) {
        const T e = std::exp(logits.plane(n, c)[i] - peak);
        probs.plane(n, c)[i] = e;
        total += e;
      }
      for (int c = 0; c < classes; ++c) probs.plane(n, c)[i] /= total;
    }
  }
  return probs;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  if (!probs.same_shape(grad_probs)) throw InvalidInput("softmax_backward: shape mismatch");
  Tensor<T> grad(probs.n(), probs.c(), probs.h(), probs.w());
  const std::size_t hw = probs.plane_size();
  for (int n = 0; n < probs.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      T dot = 0;
      for (int c = 0; c < probs.c(); ++c) dot += probs.plane(n, c)[i] * grad_probs.plane(n, c)[i];
      for (int c = 0; c < probs.c(); ++c)
        grad.plane(n, c)[i] = probs.plane(n, c)[i] * (grad_probs.plane(n, c)[i] - dot);
    }
  }
  return grad;
}

template <typename T>
LabelBatch argmax_labels(const Tensor<T>& probs) {
  LabelBatch out(probs.n(), probs.h(), probs.w());
  const std::size_t hw = probs.plane_size();
  for (int n = 0; n < probs.n(); ++n) {
    std::int32_t* dst = out.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      int best = 0;
      for (int c = 1; c < probs.c(); ++c)
        if (probs.plane(n, c)[i] > probs.plane(n, best)[i]) best = c;
      dst[i] = best;
    }
  }
  return out;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;
template Tensor<float> softmax(const Tensor<float>&);
template Tensor<double> softmax(const Tensor<double>&);
template Tensor<float> softmax_backward(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> softmax_backward(const Tensor<double>&, const Tensor<double>&);
template LabelBatch argmax_labels(const Tensor<float>&);
template LabelBatch argmax_labels(const Tensor<double>&);

}  // namespace tist
