#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tist/tensor.hpp"

namespace tist {

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 2;
  int base_width = 16;
  // Number of resolution levels including the bottleneck.
  int levels = 4;
  // Expected spatial input size; 0 accepts any size divisible by 2^(levels-1).
  int input_height = 0;
  int input_width = 0;
  std::uint64_t seed = 0;
};

struct ParamInfo {
  std::string name;
  std::vector<int> dims;
  std::size_t offset = 0;
  std::size_t count = 0;
};

// U-shaped encoder-decoder with skip connections and a linear 1x1 head.
// Encoder levels run two 3x3 conv+ReLU blocks followed by 2x2 max pooling;
// decoder levels project with a 1x1 conv at low resolution, upsample by
// nearest neighbour, concatenate the skip tensor and run two 3x3 conv+ReLU.
//
// All learnable arrays live in one flat buffer; layout() names the slices.
template <typename T>
class SegmentationModel {
 public:
  struct ConvSpec {
    int in = 0;
    int out = 0;
    int kernel = 3;
    bool relu = true;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  // Activations kept by a training-mode forward pass for backward().
  struct Cache {
    std::vector<Tensor<T>> conv_inputs;
    std::vector<Tensor<T>> conv_outputs;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    std::vector<std::array<int, 4>> pool_input_shapes;
  };

  explicit SegmentationModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamInfo>& layout() const { return layout_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  // Logits for an N x C_in x H x W batch. Pass a cache to enable backward().
  Tensor<T> forward(const Tensor<T>& images, Cache* cache = nullptr) const;

  // Accumulates d(loss)/d(parameters) into grad given d(loss)/d(logits).
  void backward(const Cache& cache, const Tensor<T>& grad_logits, std::span<T> grad) const;

  void check_input(const Tensor<T>& images) const;

 private:
  std::size_t add_param(const std::string& name, std::vector<int> dims);
  int add_conv(const std::string& name, int in, int out, int kernel, bool relu);

  Tensor<T> conv_forward(int layer, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> conv_backward(int layer, const Cache& cache, Tensor<T> grad_out, std::span<T> grad,
                          bool need_input_grad) const;

  ModelConfig config_;
  std::vector<ParamInfo> layout_;
  std::vector<T> params_;
  std::vector<ConvSpec> convs_;
  std::vector<int> enc_a_, enc_b_, dec_reduce_, dec_a_, dec_b_;
  int bott_a_ = -1, bott_b_ = -1, head_ = -1;
  bool training_ = true;
};

// Per-pixel softmax over the channel axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Gradient w.r.t. logits from the gradient w.r.t. softmax probabilities.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs);

template <typename T>
Tensor<T> predict_probs(const SegmentationModel<T>& model, const Tensor<T>& images) {
  return softmax(model.forward(images));
}

// Per-pixel argmax, ties resolved to the lowest class index.
template <typename T>
LabelBatch argmax_labels(const Tensor<T>& probs);

extern template class SegmentationModel<float>;
extern template class SegmentationModel<double>;

}  // namespace tist
