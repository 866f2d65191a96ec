#include "tist/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "tist/config.hpp"
#include "tist/pseudolabel.hpp"

namespace tist {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::supervised:
      return "supervised";
    case Method::st:
      return "st";
    case Method::tist:
      return "tist";
  }
  return "?";
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd:
      return "sgd";
    case OptimizerKind::momentum:
      return "momentum";
    case OptimizerKind::adam:
      return "adam";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "supervised") return Method::supervised;
  if (s == "st") return Method::st;
  if (s == "tist") return Method::tist;
  throw InvalidConfig("unknown method '" + s + "' (expected supervised, st or tist)");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidConfig("unknown optimizer '" + s + "' (expected sgd, momentum or adam)");
}

void validate(const TrainConfig& c) {
  if (!(c.tau > 0.5 && c.tau < 1.0)) throw InvalidConfig("tau must lie in (0.5, 1)");
  if (c.epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (!(c.lr > 0) || !std::isfinite(c.lr)) throw InvalidConfig("lr must be positive");
  if (!(c.lr_gamma > 0 && c.lr_gamma <= 1)) throw InvalidConfig("lr_gamma must lie in (0, 1]");
  if (c.lr_step_epochs < 1) throw InvalidConfig("lr_step_epochs must be >= 1");
  if (c.batch_source < 1 || c.batch_target < 1) throw InvalidConfig("batch sizes must be >= 1");
  if (c.steps_per_epoch < 0) throw InvalidConfig("steps_per_epoch must be >= 0");
  if (!(c.momentum >= 0 && c.momentum < 1)) throw InvalidConfig("momentum must lie in [0, 1)");
  if (!(c.adam_beta1 >= 0 && c.adam_beta1 < 1 && c.adam_beta2 >= 0 && c.adam_beta2 < 1 && c.adam_eps > 0))
    throw InvalidConfig("adam betas must lie in [0, 1) and eps must be positive");
  if (c.augment.max_rotation_degrees < 0 || c.augment.max_rotation_degrees > kMaxRotationDegrees)
    throw InvalidConfig("max_rotation_degrees must lie in [0, 30]");
  if (!(c.augment.min_crop_fraction > 0 && c.augment.min_crop_fraction <= 1))
    throw InvalidConfig("min_crop_fraction must lie in (0, 1]");
  validate(c.loss);
  model_config(c);
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_gamma, epoch / config.lr_step_epochs);
}

ModelConfig model_config(const TrainConfig& config) {
  ModelConfig m;
  m.in_channels = config.in_channels;
  m.num_classes = config.num_classes;
  m.base_width = config.base_width;
  m.levels = config.levels;
  m.seed = config.seed;
  if (m.in_channels < 1 || m.num_classes < 2 || m.base_width < 1 || m.levels < 2)
    throw InvalidConfig("model: need in_channels>=1, num_classes>=2, base_width>=1, levels>=2");
  return m;
}

Optimizer::Optimizer(const TrainConfig& config, std::size_t parameter_count)
    : kind_(config.optimizer),
      momentum_(config.momentum),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps) {
  if (kind_ != OptimizerKind::sgd) m_.assign(parameter_count, 0.0F);
  if (kind_ == OptimizerKind::adam) v_.assign(parameter_count, 0.0F);
}

void Optimizer::step(std::span<float> params, std::span<const float> grad, double lr) {
  if (params.size() != grad.size()) throw InvalidInput("Optimizer::step: gradient size mismatch");
  ++t_;
  switch (kind_) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= static_cast<float>(lr * grad[i]);
      break;
    case OptimizerKind::momentum:
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = static_cast<float>(momentum_ * m_[i] + grad[i]);
        params[i] -= static_cast<float>(lr * m_[i]);
      }
      break;
    case OptimizerKind::adam: {
      const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = static_cast<float>(beta1_ * m_[i] + (1.0 - beta1_) * g);
        v_[i] = static_cast<float>(beta2_ * v_[i] + (1.0 - beta2_) * g * g);
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
      break;
    }
  }
}

template <typename T>
ObjectiveResult<T> evaluate_objective(const SegmentationModel<T>& model, const PreparedBatch<T>& batch, Method method,
                                      double tau, double lambda, const LossWeights& weights,
                                      const LabelBatch* fixed_pseudo, bool compute_grad) {
  ObjectiveResult<T> result;
  if (compute_grad) result.grad.assign(model.parameter_count(), T(0));
  result.metrics.lambda = lambda;

  typename SegmentationModel<T>::Cache source_cache;
  const Tensor<T> source_probs = softmax(model.forward(batch.source_images, compute_grad ? &source_cache : nullptr));
  const LossResult<T> sup = supervised_loss(source_probs, batch.source_labels, weights);
  result.metrics.sup_loss = sup.value;
  if (compute_grad && !sup.empty) model.backward(source_cache, softmax_backward(source_probs, sup.grad), result.grad);

  double ps_value = 0.0;
  if (method != Method::supervised) {
    typename SegmentationModel<T>::Cache target_cache;
    const Tensor<T> probs_transformed =
        softmax(model.forward(batch.target_transformed, compute_grad ? &target_cache : nullptr));
    if (fixed_pseudo) {
      result.pseudo_labels = *fixed_pseudo;
      result.mask = ConfidenceMask(fixed_pseudo->n, fixed_pseudo->height, fixed_pseudo->width);
      for (std::size_t i = 0; i < fixed_pseudo->labels.size(); ++i)
        result.mask.mask[i] = fixed_pseudo->labels[i] != kIgnoreIndex ? 1 : 0;
    } else if (method == Method::st) {
      result.mask = confidence_mask(probs_transformed, tau);
      result.pseudo_labels = make_pseudo_labels(probs_transformed, result.mask);
    } else {
      // Plain view only feeds the mask: inference forward, no cache.
      const Tensor<T> probs_plain = softmax(model.forward(batch.target_plain));
      result.pseudo_labels = transformation_invariant_labels(probs_plain, probs_transformed, tau, &result.mask);
    }
    LossResult<T> ps = pseudo_supervised_loss(probs_transformed, result.pseudo_labels);
    ps_value = ps.value;
    result.metrics.retained_fraction =
        static_cast<double>(result.mask.count()) / static_cast<double>(std::max<std::size_t>(1, result.mask.mask.size()));
    if (compute_grad && !ps.empty && lambda > 0) {
      for (auto& g : ps.grad.values()) g = static_cast<T>(g * lambda);
      model.backward(target_cache, softmax_backward(probs_transformed, ps.grad), result.grad);
    }
  }
  result.metrics.ps_loss = ps_value;
  result.metrics.overall_loss = overall_loss(result.metrics.sup_loss, ps_value, lambda);
  return result;
}

template ObjectiveResult<float> evaluate_objective(const SegmentationModel<float>&, const PreparedBatch<float>&, Method,
                                                   double, double, const LossWeights&, const LabelBatch*, bool);
template ObjectiveResult<double> evaluate_objective(const SegmentationModel<double>&, const PreparedBatch<double>&,
                                                    Method, double, double, const LossWeights&, const LabelBatch*,
                                                    bool);

PreparedBatch<float> prepare_batch(std::span<const Sample* const> source, std::span<const Image* const> target,
                                   std::span<const std::string> target_ids, const AugmentConfig& augment, Rng& rng) {
  PreparedBatch<float> batch;
  std::vector<Image> images;
  std::vector<LabelMap> labels;
  for (const Sample* s : source) {
    if (!s->label) throw InvalidInput("source sample '" + s->id + "' has no label");
    const SpatialSpec spatial = sample_spatial(rng, s->image.height, s->image.width, augment);
    auto [image, label] = apply_spatial(s->image, *s->label, spatial);
    const NonSpatialSpec photometric = sample_nonspatial(rng, augment);
    images.push_back(apply_nonspatial(image, photometric));
    labels.push_back(std::move(label));
    batch.source_ids.push_back(s->id);
  }
  batch.source_images = stack_images<float>(images);
  batch.source_labels = stack_labels(labels);

  if (!target.empty()) {
    std::vector<Image> plain, transformed;
    for (const Image* im : target) {
      plain.push_back(*im);
      transformed.push_back(apply_nonspatial(*im, sample_nonspatial(rng, augment)));
    }
    batch.target_plain = stack_images<float>(plain);
    batch.target_transformed = stack_images<float>(transformed);
    batch.target_ids.assign(target_ids.begin(), target_ids.end());
  }
  return batch;
}

TrainData make_train_data(const Dataset& source, const Dataset& target, const FoldSplit& split, double source_fraction,
                          std::uint64_t seed) {
  if (!(source_fraction > 0 && source_fraction <= 1)) throw InvalidConfig("source fraction must lie in (0, 1]");
  TrainData data;
  auto source_idx = indices_of(source, split.train_source_ids);
  if (source_fraction < 1.0) {
    Rng rng(Rng::derive(seed, {0xf4ac}));
    rng.shuffle(source_idx);
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(source_fraction * static_cast<double>(source_idx.size()) - 1e-9)));
    source_idx.resize(std::min(keep, source_idx.size()));
    std::sort(source_idx.begin(), source_idx.end());
  }
  for (auto i : source_idx) data.source_train.push_back(&source[i]);
  data.target_train = UnlabeledView(target, indices_of(target, split.train_target_ids));
  auto labeled = [](const Dataset& ds, const std::vector<std::string>& ids, std::vector<const Sample*>& out) {
    for (auto i : indices_of(ds, ids)) {
      if (!ds[i].label) throw InvalidInput("evaluation sample '" + ds[i].id + "' has no mask");
      out.push_back(&ds[i]);
    }
  };
  labeled(target, split.test_ids, data.target_test);
  labeled(source, split.source_test_ids, data.source_test);
  return data;
}

std::vector<LabelMap> predict_labels(const SegmentationModel<float>& model, std::span<const Image* const> images,
                                     int batch_size) {
  std::vector<LabelMap> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Image> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(*images[i]);
    const LabelBatch labels = argmax_labels(predict_probs(model, stack_images<float>(chunk)));
    for (int i = 0; i < labels.n; ++i) out.push_back(unstack_label(labels, i));
  }
  return out;
}

Trainer::Trainer(TrainConfig config, TrainData data, std::string config_hash)
    : config_(std::move(config)),
      data_(std::move(data)),
      config_hash_(std::move(config_hash)),
      model_((validate(config_), model_config(config_))),
      optimizer_(config_, model_.parameter_count()),
      source_sampler_(std::max<std::size_t>(1, data_.source_train.size()), config_.seed, 11) {
  if (data_.source_train.empty()) throw InvalidInput("Trainer: no labeled source samples");
  for (const Sample* s : data_.source_train) {
    if (!s->label) throw InvalidInput("Trainer: source sample '" + s->id + "' has no label");
    if (s->image.channels != config_.in_channels)
      throw InvalidInput("Trainer: sample '" + s->id + "' has " + std::to_string(s->image.channels) +
                         " channels, model expects " + std::to_string(config_.in_channels));
  }
  if (config_.method != Method::supervised && data_.target_train.size() == 0)
    throw InvalidInput("Trainer: self-training needs unlabeled target samples");
  if (data_.target_train.size() > 0) target_sampler_.emplace(data_.target_train.size(), config_.seed, 13);

  if (config_.steps_per_epoch > 0) {
    steps_per_epoch_ = config_.steps_per_epoch;
  } else {
    const auto ceil_div = [](std::size_t a, std::size_t b) { return static_cast<int>((a + b - 1) / b); };
    steps_per_epoch_ = std::max(ceil_div(data_.source_train.size(), config_.batch_source),
                                ceil_div(data_.target_train.size(), config_.batch_target));
  }
}

StepMetrics Trainer::train_step(int epoch, int step) {
  const std::uint64_t global = static_cast<std::uint64_t>(epoch) * steps_per_epoch_ + step;
  const double lr = learning_rate_at(config_, epoch);
  const double lambda = lambda_at(RampSchedule{config_.epochs, config_.ramp_squared}, epoch);

  std::vector<const Sample*> source;
  for (int j = 0; j < config_.batch_source; ++j)
    source.push_back(data_.source_train[source_sampler_.index_at(global * config_.batch_source + j)]);
  std::vector<const Image*> target;
  std::vector<std::string> target_ids;
  if (config_.method != Method::supervised) {
    for (int j = 0; j < config_.batch_target; ++j) {
      const std::size_t i = target_sampler_->index_at(global * config_.batch_target + j);
      target.push_back(&data_.target_train.image(i));
      target_ids.push_back(data_.target_train.id(i));
    }
  }
  Rng rng(Rng::derive(config_.seed, {0xa11, global}));
  const PreparedBatch<float> batch = prepare_batch(source, target, target_ids, config_.augment, rng);
  ObjectiveResult<float> result =
      evaluate_objective(model_, batch, config_.method, config_.tau, lambda, config_.loss);

  StepMetrics metrics = result.metrics;
  metrics.epoch = epoch;
  metrics.step = step;
  metrics.lr = lr;
  if (!std::isfinite(metrics.overall_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << " step " << step << " (sup " << metrics.sup_loss << ", ps "
        << metrics.ps_loss << ", lambda " << lambda << ", lr " << lr << "); source batch:";
    for (const auto& id : batch.source_ids) msg << ' ' << id;
    msg << "; target batch:";
    for (const auto& id : batch.target_ids) msg << ' ' << id;
    throw TrainingDiverged(msg.str());
  }
  optimizer_.step(model_.parameters(), result.grad, lr);
  history_.steps.push_back(metrics);
  return metrics;
}

EpochRecord Trainer::evaluate(int epoch) const {
  EpochRecord record;
  record.epoch = epoch;
  record.lr = learning_rate_at(config_, epoch);
  record.lambda = lambda_at(RampSchedule{config_.epochs, config_.ramp_squared}, epoch);
  int count = 0;
  for (const auto& m : history_.steps) {
    if (m.epoch != epoch) continue;
    record.mean_sup_loss += m.sup_loss;
    record.mean_ps_loss += m.ps_loss;
    record.mean_overall_loss += m.overall_loss;
    record.mean_retained_fraction += m.retained_fraction;
    ++count;
  }
  if (count > 0) {
    record.mean_sup_loss /= count;
    record.mean_ps_loss /= count;
    record.mean_overall_loss /= count;
    record.mean_retained_fraction /= count;
  }
  auto score = [&](const std::vector<const Sample*>& samples) -> std::optional<DiceResult> {
    if (samples.empty()) return std::nullopt;
    std::vector<const Image*> images;
    std::vector<LabelMap> truth;
    for (const Sample* s : samples) {
      images.push_back(&s->image);
      truth.push_back(*s->label);
    }
    const auto predictions = predict_labels(model_, images);
    return evaluate_dice(predictions, truth, config_.num_classes);
  };
  if (auto r = score(data_.target_test)) {
    record.target_dice = r->mean;
    record.target_dice_pooled = r->pooled_mean;
    record.target_dice_per_class = r->per_class;
  }
  if (auto r = score(data_.source_test)) {
    record.source_dice = r->mean;
    record.source_dice_pooled = r->pooled_mean;
  }
  return record;
}

void Trainer::run(const TrainHooks& hooks) {
  int done = 0;
  if (hooks.checkpoint_dir) fs::create_directories(*hooks.checkpoint_dir);
  while (next_epoch_ < config_.epochs) {
    if (hooks.max_epochs_this_call && done >= *hooks.max_epochs_this_call) break;
    const int epoch = next_epoch_;
    for (int step = 0; step < steps_per_epoch_; ++step) {
      const StepMetrics m = train_step(epoch, step);
      if (hooks.on_step) hooks.on_step(m);
    }
    const EpochRecord record = evaluate(epoch);
    history_.epochs.push_back(record);
    next_epoch_ = epoch + 1;
    ++done;
    const bool improved = record.target_dice > best_target_dice_;
    if (improved) best_target_dice_ = record.target_dice;
    if (hooks.checkpoint_dir) {
      save_checkpoint(*hooks.checkpoint_dir / "last.ckpt");
      if (improved) save_checkpoint(*hooks.checkpoint_dir / "best.ckpt");
    }
    if (hooks.on_epoch) hooks.on_epoch(record);
  }
}

void Trainer::save_checkpoint(const fs::path& path) const {
  CheckpointMeta meta;
  meta.next_epoch = next_epoch_;
  meta.config_hash = config_hash_;
  meta.seed = config_.seed;
  meta.next_global_step = static_cast<std::int64_t>(next_epoch_) * steps_per_epoch_;
  meta.optimizer_steps = optimizer_.steps_taken();
  meta.best_target_dice = best_target_dice_;
  meta.config = config_;
  meta.history = history_;
  write_checkpoint(path, model_, &optimizer_, meta);
}

void Trainer::resume(const fs::path& checkpoint) {
  LoadedCheckpoint loaded = read_checkpoint(checkpoint);
  if (!(loaded.meta.config == config_))
    throw InvalidConfig("checkpoint " + checkpoint.string() + " was written with a different configuration");
  if (!config_hash_.empty() && !loaded.meta.config_hash.empty() && loaded.meta.config_hash != config_hash_)
    throw InvalidConfig("checkpoint " + checkpoint.string() + " has config hash " + loaded.meta.config_hash +
                        ", run expects " + config_hash_);
  if (loaded.meta.next_global_step != static_cast<std::int64_t>(loaded.meta.next_epoch) * steps_per_epoch_)
    throw InvalidInput("checkpoint step counter does not match this dataset's steps per epoch");
  std::copy(loaded.model.parameters().begin(), loaded.model.parameters().end(), model_.parameters().begin());
  optimizer_ = std::move(loaded.optimizer);
  history_ = std::move(loaded.meta.history);
  next_epoch_ = loaded.meta.next_epoch;
  best_target_dice_ = loaded.meta.best_target_dice;
}

TrainResult train(const TrainConfig& config, const TrainData& data, const TrainHooks& hooks,
                  const std::string& config_hash) {
  Trainer trainer(config, data, config_hash);
  trainer.run(hooks);
  return {trainer.model(), trainer.history()};
}

// ---------------------------------------------------------------------------
// Checkpoint archive
//
//   "TISTCKPT" | u32 version | u64 meta length | meta JSON
//   u32 array count | per array: u32 name length, name, u32 rank,
//   i32 dims[rank], u64 element count, f32 data[count]

namespace {

constexpr char kMagic[8] = {'T', 'I', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

void put_array(std::ostream& os, const std::string& name, const std::vector<int>& dims, const float* data,
               std::size_t count) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) put<std::int32_t>(os, d);
  put<std::uint64_t>(os, count);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
}

struct RawArray {
  std::vector<int> dims;
  std::vector<float> values;
};

}  // namespace

void write_checkpoint(const fs::path& path, const SegmentationModel<float>& model, const Optimizer* optimizer,
                      const CheckpointMeta& meta) {
  Json j{{"next_epoch", meta.next_epoch},
         {"config_hash", meta.config_hash},
         {"rng", {{"scheme", "derived-per-step"}, {"seed", meta.seed}, {"next_global_step", meta.next_global_step}}},
         {"optimizer_steps", meta.optimizer_steps},
         {"best_target_dice", meta.best_target_dice},
         {"config", meta.config},
         {"history", meta.history}};
  const std::string text = j.dump();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint32_t n_arrays = static_cast<std::uint32_t>(model.layout().size());
    const bool with_m = optimizer && !optimizer->first_moment().empty();
    const bool with_v = optimizer && !optimizer->second_moment().empty();
    n_arrays += with_m + with_v;
    put<std::uint32_t>(os, n_arrays);
    for (const auto& info : model.layout())
      put_array(os, "model." + info.name, info.dims, model.parameters().data() + info.offset, info.count);
    if (with_m)
      put_array(os, "optimizer.m", {static_cast<int>(optimizer->first_moment().size())},
                optimizer->first_moment().data(), optimizer->first_moment().size());
    if (with_v)
      put_array(os, "optimizer.v", {static_cast<int>(optimizer->second_moment().size())},
                optimizer->second_moment().data(), optimizer->second_moment().size());
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint read_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(is) != kVersion) throw IoError(path.string() + ": unsupported checkpoint version");
  const auto meta_len = get<std::uint64_t>(is);
  std::string text(meta_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw IoError("checkpoint truncated");
  const Json j = Json::parse(text);

  CheckpointMeta meta;
  meta.next_epoch = j.at("next_epoch").get<int>();
  meta.config_hash = j.at("config_hash").get<std::string>();
  meta.seed = j.at("rng").at("seed").get<std::uint64_t>();
  meta.next_global_step = j.at("rng").at("next_global_step").get<std::int64_t>();
  meta.optimizer_steps = j.at("optimizer_steps").get<std::int64_t>();
  meta.best_target_dice = j.at("best_target_dice").get<double>();
  meta.config = j.at("config").get<TrainConfig>();
  meta.history = j.at("history").get<History>();

  std::map<std::string, RawArray> arrays;
  const auto n_arrays = get<std::uint32_t>(is);
  for (std::uint32_t a = 0; a < n_arrays; ++a) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    RawArray raw;
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) raw.dims.push_back(get<std::int32_t>(is));
    const auto count = get<std::uint64_t>(is);
    raw.values.resize(count);
    is.read(reinterpret_cast<char*>(raw.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw IoError("checkpoint truncated in array '" + name + "'");
    arrays.emplace(std::move(name), std::move(raw));
  }

  SegmentationModel<float> model(model_config(meta.config));
  for (const auto& info : model.layout()) {
    auto it = arrays.find("model." + info.name);
    if (it == arrays.end()) throw IoError("checkpoint lacks parameter '" + info.name + "'");
    if (it->second.dims != info.dims) throw IoError("checkpoint parameter '" + info.name + "' has the wrong shape");
    std::copy(it->second.values.begin(), it->second.values.end(), model.parameters().begin() + info.offset);
  }
  Optimizer optimizer(meta.config, model.parameter_count());
  if (auto it = arrays.find("optimizer.m"); it != arrays.end()) optimizer.first_moment() = it->second.values;
  if (auto it = arrays.find("optimizer.v"); it != arrays.end()) optimizer.second_moment() = it->second.values;
  optimizer.set_steps_taken(meta.optimizer_steps);
  return {std::move(model), std::move(optimizer), std::move(meta)};
}

}  // namespace tist
