#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tist/augment.hpp"
#include "tist/data.hpp"
#include "tist/eval_report.hpp"
#include "tist/losses.hpp"
#include "tist/model.hpp"

namespace tist {

enum class Method { supervised, st, tist };
enum class OptimizerKind { sgd, momentum, adam };

std::string to_string(Method m);
std::string to_string(OptimizerKind k);
Method parse_method(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  Method method = Method::tist;
  double tau = 0.85;
  int epochs = 30;
  double lr = 1e-3;
  double lr_gamma = 0.8;
  int lr_step_epochs = 2;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_source = 4;
  int batch_target = 4;
  // 0 derives ceil(max(|source|, |target|) / batch).
  int steps_per_epoch = 0;
  LossWeights loss;
  bool ramp_squared = false;
  AugmentConfig augment;
  int base_width = 16;
  int levels = 4;
  int num_classes = 2;
  int in_channels = 3;
  std::uint64_t seed = 0;
  int fold = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);

// Learning rate for an epoch: lr * gamma^floor(epoch / lr_step_epochs).
double learning_rate_at(const TrainConfig& config, int epoch);

ModelConfig model_config(const TrainConfig& config);

struct StepMetrics {
  int epoch = 0;
  int step = 0;
  double sup_loss = 0.0;
  double ps_loss = 0.0;
  double lambda = 0.0;
  double overall_loss = 0.0;
  double retained_fraction = 0.0;
  double lr = 0.0;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double mean_sup_loss = 0.0;
  double mean_ps_loss = 0.0;
  double mean_overall_loss = 0.0;
  double mean_retained_fraction = 0.0;
  // Mean foreground Dice on the held-out target fold (per image / pooled).
  double target_dice = 0.0;
  double target_dice_pooled = 0.0;
  double source_dice = 0.0;
  double source_dice_pooled = 0.0;
  std::vector<double> target_dice_per_class;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct History {
  std::vector<StepMetrics> steps;
  std::vector<EpochRecord> epochs;

  friend bool operator==(const History&, const History&) = default;
};

// Thrown when a loss turns non-finite; the message carries batch ids,
// lambda, lr, epoch and step.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainConfig& config, std::size_t parameter_count);

  void step(std::span<float> params, std::span<const float> grad, double lr);

  std::int64_t steps_taken() const { return t_; }
  std::vector<float>& first_moment() { return m_; }
  std::vector<float>& second_moment() { return v_; }
  const std::vector<float>& first_moment() const { return m_; }
  const std::vector<float>& second_moment() const { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  double momentum_ = 0.9, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<float> m_, v_;
  std::int64_t t_ = 0;
};

// Network inputs for one step after augmentation.
template <typename T>
struct PreparedBatch {
  Tensor<T> source_images;
  LabelBatch source_labels;
  std::vector<std::string> source_ids;
  // Untransformed target images x_T.
  Tensor<T> target_plain;
  // Photometrically transformed f(x_T).
  Tensor<T> target_transformed;
  std::vector<std::string> target_ids;
};

template <typename T>
struct ObjectiveResult {
  StepMetrics metrics;
  std::vector<T> grad;
  ConfidenceMask mask;
  LabelBatch pseudo_labels;
};

// Evaluates sup + lambda * ps for one prepared batch and its parameter
// gradient. The mask and pseudo-labels are built from predictions that are
// constants for differentiation; only the transformed-view forward carries
// gradient into the pseudo-supervised term. Passing fixed_pseudo skips
// label construction and uses the supplied labels instead.
template <typename T>
ObjectiveResult<T> evaluate_objective(const SegmentationModel<T>& model, const PreparedBatch<T>& batch, Method method,
                                      double tau, double lambda, const LossWeights& weights,
                                      const LabelBatch* fixed_pseudo = nullptr, bool compute_grad = true);

// g then f on every source sample; fresh f on every target sample.
PreparedBatch<float> prepare_batch(std::span<const Sample* const> source, std::span<const Image* const> target,
                                   std::span<const std::string> target_ids, const AugmentConfig& augment, Rng& rng);

struct TrainData {
  std::vector<const Sample*> source_train;
  UnlabeledView target_train;
  std::vector<const Sample*> target_test;
  std::vector<const Sample*> source_test;
};

// Builds TrainData for one fold. Target training samples are exposed
// through an UnlabeledView only. A fraction < 1 keeps that share of the
// labeled source pool.
TrainData make_train_data(const Dataset& source, const Dataset& target, const FoldSplit& split,
                          double source_fraction = 1.0, std::uint64_t seed = 0);

struct CheckpointMeta {
  int next_epoch = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::int64_t next_global_step = 0;
  std::int64_t optimizer_steps = 0;
  double best_target_dice = -1.0;
  TrainConfig config;
  History history;
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  // When set, last.ckpt and best.ckpt are written here after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Stop after this many epochs in this call (used to interrupt runs).
  std::optional<int> max_epochs_this_call;
};

class Trainer {
 public:
  Trainer(TrainConfig config, TrainData data, std::string config_hash = {});

  // Restores model, optimizer and history from a checkpoint written by
  // save_checkpoint; the config stored there must hash to the same value.
  void resume(const std::filesystem::path& checkpoint);

  StepMetrics train_step(int epoch, int step);
  EpochRecord evaluate(int epoch) const;
  void run(const TrainHooks& hooks = {});

  void save_checkpoint(const std::filesystem::path& path) const;

  int steps_per_epoch() const { return steps_per_epoch_; }
  int next_epoch() const { return next_epoch_; }
  const TrainConfig& config() const { return config_; }
  const History& history() const { return history_; }
  const SegmentationModel<float>& model() const { return model_; }
  SegmentationModel<float>& model() { return model_; }

 private:
  TrainConfig config_;
  TrainData data_;
  std::string config_hash_;
  SegmentationModel<float> model_;
  Optimizer optimizer_;
  History history_;
  CyclicSampler source_sampler_;
  std::optional<CyclicSampler> target_sampler_;
  int steps_per_epoch_ = 1;
  int next_epoch_ = 0;
  double best_target_dice_ = -1.0;
};

struct TrainResult {
  SegmentationModel<float> model;
  History history;
};

TrainResult train(const TrainConfig& config, const TrainData& data, const TrainHooks& hooks = {},
                  const std::string& config_hash = {});

// Argmax predictions for labeled or unlabeled images, batched.
std::vector<LabelMap> predict_labels(const SegmentationModel<float>& model, std::span<const Image* const> images,
                                     int batch_size = 8);

// Checkpoint archive: parameters keyed by layout name plus metadata.
void write_checkpoint(const std::filesystem::path& path, const SegmentationModel<float>& model,
                      const Optimizer* optimizer, const CheckpointMeta& meta);
struct LoadedCheckpoint {
  SegmentationModel<float> model;
  Optimizer optimizer;
  CheckpointMeta meta;
};
LoadedCheckpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tist
