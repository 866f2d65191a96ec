#include "tist/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tist {

namespace {

// Floor for probabilities entering a logarithm.
constexpr double kProbFloor = 1e-12;

template <typename T>
void check_shapes(const Tensor<T>& probs, const LabelBatch& labels, const char* what) {
  if (probs.n() != labels.n || probs.h() != labels.height || probs.w() != labels.width)
    throw InvalidInput(std::string(what) + ": probabilities and labels differ in shape");
}

template <typename T>
void check_label_range(std::int32_t label, const Tensor<T>& probs, std::int32_t ignore_index, const char* what) {
  if (label != ignore_index && (label < 0 || label >= probs.c()))
    throw InvalidInput(std::string(what) + ": label " + std::to_string(label) + " outside [0, " +
                       std::to_string(probs.c()) + ")");
}

// Mean cross-entropy over non-ignored pixels, gradient scaled by `scale`.
template <typename T>
std::size_t cross_entropy(const Tensor<T>& probs, const LabelBatch& labels, std::int32_t ignore_index, double scale,
                          double& value, Tensor<T>& grad, const char* what) {
  const std::size_t hw = probs.plane_size();
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    check_label_range(labels.labels[i], probs, ignore_index, what);
    if (labels.labels[i] != ignore_index) ++count;
  }
  value = 0.0;
  if (count == 0) return 0;
  double total = 0.0;
  for (int n = 0; n < probs.n(); ++n) {
    const std::int32_t* lab = labels.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      if (lab[i] == ignore_index) continue;
      const double p = std::max(static_cast<double>(probs.plane(n, lab[i])[i]), kProbFloor);
      total -= std::log(p);
      grad.plane(n, lab[i])[i] += static_cast<T>(-scale / (p * static_cast<double>(count)));
    }
  }
  value = total / static_cast<double>(count);
  return count;
}

template <typename T>
void dice_stats(const Tensor<T>& probs, const LabelBatch& gt, std::int32_t ignore_index, std::vector<double>& inter,
                std::vector<double>& denom) {
  const int classes = probs.c();
  inter.assign(classes, 0.0);
  denom.assign(classes, 0.0);
  const std::size_t hw = probs.plane_size();
  for (int n = 0; n < probs.n(); ++n) {
    const std::int32_t* lab = gt.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      if (lab[i] == ignore_index) continue;
      check_label_range(lab[i], probs, ignore_index, "soft dice");
      for (int c = 0; c < classes; ++c) denom[c] += probs.plane(n, c)[i];
      inter[lab[i]] += probs.plane(n, lab[i])[i];
      denom[lab[i]] += 1.0;
    }
  }
}

}  // namespace

double lambda_at(const RampSchedule& schedule, double epoch) {
  if (schedule.total_epochs < 1) throw InvalidConfig("RampSchedule: total_epochs must be >= 1");
  if (!(epoch >= 0.0 && epoch <= schedule.total_epochs))
    throw InvalidInput("lambda_at: epoch " + std::to_string(epoch) + " outside [0, " +
                       std::to_string(schedule.total_epochs) + "]");
  const double remaining = 1.0 - epoch / schedule.total_epochs;
  return std::exp(-5.0 * (schedule.squared ? remaining * remaining : remaining));
}

void validate(const LossWeights& weights) {
  if (!(weights.ce_weight >= 0 && weights.log_dice_weight >= 0) || weights.ce_weight + weights.log_dice_weight <= 0)
    throw InvalidConfig("LossWeights: weights must be non-negative with a positive sum");
  if (!(weights.dice_smooth > 0)) throw InvalidConfig("LossWeights: dice_smooth must be positive");
}

template <typename T>
std::vector<double> soft_dice_per_class(const Tensor<T>& probs, const LabelBatch& gt, double smooth,
                                        std::int32_t ignore_index) {
  check_shapes(probs, gt, "soft_dice_per_class");
  const int classes = probs.c();
  std::vector<double> inter, denom;
  dice_stats(probs, gt, ignore_index, inter, denom);
  std::vector<double> dice(classes);
  for (int c = 0; c < classes; ++c) dice[c] = (2.0 * inter[c] + smooth) / (denom[c] + smooth);
  return dice;
}

template <typename T>
LossResult<T> supervised_loss(const Tensor<T>& probs, const LabelBatch& gt, const LossWeights& weights,
                              std::int32_t ignore_index) {
  validate(weights);
  check_shapes(probs, gt, "supervised_loss");
  LossResult<T> result;
  result.grad = Tensor<T>(probs.n(), probs.c(), probs.h(), probs.w());
  double ce = 0.0;
  const std::size_t count =
      cross_entropy(probs, gt, ignore_index, weights.ce_weight, ce, result.grad, "supervised_loss");
  if (count == 0) {
    result.empty = true;
    return result;
  }

  const int classes = probs.c();
  const double s = weights.dice_smooth;
  std::vector<double> inter, denom;
  dice_stats(probs, gt, ignore_index, inter, denom);
  const std::size_t hw = probs.plane_size();
  double mean_dice = 0.0;
  for (int c = 0; c < classes; ++c) mean_dice += (2.0 * inter[c] + s) / (denom[c] + s);
  mean_dice /= classes;
  result.value = weights.ce_weight * ce - weights.log_dice_weight * std::log(mean_dice);

  if (weights.log_dice_weight > 0) {
    // d(-log D)/dp_{i,c} = -(1 / (C D)) * (2 g_ic (S_c + s) - (2 I_c + s)) / (S_c + s)^2
    const double outer = -weights.log_dice_weight / (classes * mean_dice);
    std::vector<double> on_class(classes), off_class(classes);
    for (int c = 0; c < classes; ++c) {
      const double d2 = (denom[c] + s) * (denom[c] + s);
      off_class[c] = outer * (-(2.0 * inter[c] + s)) / d2;
      on_class[c] = outer * (2.0 * (denom[c] + s) - (2.0 * inter[c] + s)) / d2;
    }
    for (int n = 0; n < probs.n(); ++n) {
      const std::int32_t* lab = gt.sample(n);
      for (std::size_t i = 0; i < hw; ++i) {
        if (lab[i] == ignore_index) continue;
        for (int c = 0; c < classes; ++c)
          result.grad.plane(n, c)[i] += static_cast<T>(c == lab[i] ? on_class[c] : off_class[c]);
      }
    }
  }
  return result;
}

template <typename T>
LossResult<T> pseudo_supervised_loss(const Tensor<T>& probs_transformed, const LabelBatch& pseudo,
                                     std::int32_t ignore_index) {
  check_shapes(probs_transformed, pseudo, "pseudo_supervised_loss");
  LossResult<T> result;
  result.grad = Tensor<T>(probs_transformed.n(), probs_transformed.c(), probs_transformed.h(), probs_transformed.w());
  const std::size_t count = cross_entropy(probs_transformed, pseudo, ignore_index, 1.0, result.value, result.grad,
                                          "pseudo_supervised_loss");
  result.empty = count == 0;
  return result;
}

template std::vector<double> soft_dice_per_class(const Tensor<float>&, const LabelBatch&, double, std::int32_t);
template std::vector<double> soft_dice_per_class(const Tensor<double>&, const LabelBatch&, double, std::int32_t);
template LossResult<float> supervised_loss(const Tensor<float>&, const LabelBatch&, const LossWeights&, std::int32_t);
template LossResult<double> supervised_loss(const Tensor<double>&, const LabelBatch&, const LossWeights&,
                                            std::int32_t);
template LossResult<float> pseudo_supervised_loss(const Tensor<float>&, const LabelBatch&, std::int32_t);
template LossResult<double> pseudo_supervised_loss(const Tensor<double>&, const LabelBatch&, std::int32_t);

}  // namespace tist
