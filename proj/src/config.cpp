#include "tist/config.hpp"

#include <cstdio>

namespace tist {

void to_json(Json& j, const AugmentConfig& c) {
  j = Json{{"max_rotation_degrees", c.max_rotation_degrees},
           {"min_crop_fraction", c.min_crop_fraction},
           {"brightness", c.brightness},
           {"contrast", c.contrast},
           {"saturation", c.saturation},
           {"jitter_floor", c.jitter_floor},
           {"blur_probability", c.blur_probability},
           {"max_blur_sigma", c.max_blur_sigma},
           {"max_sharpen", c.max_sharpen}};
}

void from_json(const Json& j, AugmentConfig& c) {
  c.max_rotation_degrees = j.at("max_rotation_degrees").get<double>();
  c.min_crop_fraction = j.at("min_crop_fraction").get<double>();
  c.brightness = j.at("brightness").get<double>();
  c.contrast = j.at("contrast").get<double>();
  c.saturation = j.at("saturation").get<double>();
  c.jitter_floor = j.at("jitter_floor").get<double>();
  c.blur_probability = j.at("blur_probability").get<double>();
  c.max_blur_sigma = j.at("max_blur_sigma").get<double>();
  c.max_sharpen = j.at("max_sharpen").get<double>();
}

void to_json(Json& j, const LossWeights& c) {
  j = Json{{"ce_weight", c.ce_weight}, {"log_dice_weight", c.log_dice_weight}, {"dice_smooth", c.dice_smooth}};
}

void from_json(const Json& j, LossWeights& c) {
  c.ce_weight = j.at("ce_weight").get<double>();
  c.log_dice_weight = j.at("log_dice_weight").get<double>();
  c.dice_smooth = j.at("dice_smooth").get<double>();
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"method", to_string(c.method)},
           {"tau", c.tau},
           {"epochs", c.epochs},
           {"lr", c.lr},
           {"lr_gamma", c.lr_gamma},
           {"lr_step_epochs", c.lr_step_epochs},
           {"optimizer", to_string(c.optimizer)},
           {"momentum", c.momentum},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"batch_source", c.batch_source},
           {"batch_target", c.batch_target},
           {"steps_per_epoch", c.steps_per_epoch},
           {"loss", c.loss},
           {"ramp_squared", c.ramp_squared},
           {"augment", c.augment},
           {"base_width", c.base_width},
           {"levels", c.levels},
           {"num_classes", c.num_classes},
           {"in_channels", c.in_channels},
           {"seed", c.seed},
           {"fold", c.fold}};
}

void from_json(const Json& j, TrainConfig& c) {
  c.method = parse_method(j.at("method").get<std::string>());
  c.tau = j.at("tau").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_gamma = j.at("lr_gamma").get<double>();
  c.lr_step_epochs = j.at("lr_step_epochs").get<int>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.momentum = j.at("momentum").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.batch_source = j.at("batch_source").get<int>();
  c.batch_target = j.at("batch_target").get<int>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  c.loss = j.at("loss").get<LossWeights>();
  c.ramp_squared = j.at("ramp_squared").get<bool>();
  c.augment = j.at("augment").get<AugmentConfig>();
  c.base_width = j.at("base_width").get<int>();
  c.levels = j.at("levels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.fold = j.at("fold").get<int>();
}

void to_json(Json& j, const DomainShift& c) {
  j = Json{{"brightness", c.brightness}, {"noise_sigma", c.noise_sigma}, {"blur_sigma", c.blur_sigma}};
}

void from_json(const Json& j, DomainShift& c) {
  c.brightness = j.at("brightness").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.blur_sigma = j.at("blur_sigma").get<double>();
}

void to_json(Json& j, const SynthConfig& c) {
  j = Json{{"num_source", c.num_source}, {"num_target", c.num_target}, {"height", c.height},
           {"width", c.width},           {"channels", c.channels},     {"num_classes", c.num_classes},
           {"shift", c.shift}};
}

void from_json(const Json& j, SynthConfig& c) {
  c.num_source = j.at("num_source").get<int>();
  c.num_target = j.at("num_target").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.shift = j.at("shift").get<DomainShift>();
}

void to_json(Json& j, const StepMetrics& m) {
  j = Json{{"epoch", m.epoch},
           {"step", m.step},
           {"sup_loss", m.sup_loss},
           {"ps_loss", m.ps_loss},
           {"lambda", m.lambda},
           {"overall_loss", m.overall_loss},
           {"retained_fraction", m.retained_fraction},
           {"lr", m.lr}};
}

void from_json(const Json& j, StepMetrics& m) {
  m.epoch = j.at("epoch").get<int>();
  m.step = j.at("step").get<int>();
  m.sup_loss = j.at("sup_loss").get<double>();
  m.ps_loss = j.at("ps_loss").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.overall_loss = j.at("overall_loss").get<double>();
  m.retained_fraction = j.at("retained_fraction").get<double>();
  m.lr = j.at("lr").get<double>();
}

void to_json(Json& j, const EpochRecord& r) {
  j = Json{{"epoch", r.epoch},
           {"lr", r.lr},
           {"lambda", r.lambda},
           {"mean_sup_loss", r.mean_sup_loss},
           {"mean_ps_loss", r.mean_ps_loss},
           {"mean_overall_loss", r.mean_overall_loss},
           {"mean_retained_fraction", r.mean_retained_fraction},
           {"target_dice", r.target_dice},
           {"target_dice_pooled", r.target_dice_pooled},
           {"source_dice", r.source_dice},
           {"source_dice_pooled", r.source_dice_pooled},
           {"target_dice_per_class", r.target_dice_per_class}};
}

void from_json(const Json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.lambda = j.at("lambda").get<double>();
  r.mean_sup_loss = j.at("mean_sup_loss").get<double>();
  r.mean_ps_loss = j.at("mean_ps_loss").get<double>();
  r.mean_overall_loss = j.at("mean_overall_loss").get<double>();
  r.mean_retained_fraction = j.at("mean_retained_fraction").get<double>();
  r.target_dice = j.at("target_dice").get<double>();
  r.target_dice_pooled = j.at("target_dice_pooled").get<double>();
  r.source_dice = j.at("source_dice").get<double>();
  r.source_dice_pooled = j.at("source_dice_pooled").get<double>();
  r.target_dice_per_class = j.at("target_dice_per_class").get<std::vector<double>>();
}

void to_json(Json& j, const History& h) { j = Json{{"steps", h.steps}, {"epochs", h.epochs}}; }

void from_json(const Json& j, History& h) {
  h.steps = j.at("steps").get<std::vector<StepMetrics>>();
  h.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
}

void to_json(Json& j, const DiceResult& r) {
  j = Json{{"class_ids", r.class_ids},
           {"per_class", r.per_class},
           {"pooled_per_class", r.pooled_per_class},
           {"absent_classes", r.absent_classes},
           {"mean", r.mean},
           {"pooled_mean", r.pooled_mean},
           {"n_images", r.n_images},
           {"n_excluded", r.n_excluded}};
}

void to_json(Json& j, const FoldSplit& f) {
  j = Json{{"fold_index", f.fold_index},
           {"train_source_ids", f.train_source_ids},
           {"train_target_ids", f.train_target_ids},
           {"test_ids", f.test_ids},
           {"source_test_ids", f.source_test_ids}};
}

std::string config_hash(const Json& canonical) {
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tist
