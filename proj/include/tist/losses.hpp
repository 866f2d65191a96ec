#pragma once

#include <vector>

#include "tist/tensor.hpp"

namespace tist {

struct LossWeights {
  double ce_weight = 1.0;
  double log_dice_weight = 1.0;
  double dice_smooth = 1e-6;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Ramp-up of the pseudo-supervised weight: exp(-5 (1 - e/E)), or
// exp(-5 (1 - e/E)^2) when squared is set.
struct RampSchedule {
  int total_epochs = 1;
  bool squared = false;

  friend bool operator==(const RampSchedule&, const RampSchedule&) = default;
};

// Loss value together with its gradient w.r.t. the probability tensor.
template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
  // Set when no pixel contributed (everything ignored).
  bool empty = false;
};

double lambda_at(const RampSchedule& schedule, double epoch);

void validate(const LossWeights& weights);

// Soft Dice per class over the non-ignored pixels of the whole batch:
// (2 sum p g + s) / (sum p + sum g + s).
template <typename T>
std::vector<double> soft_dice_per_class(const Tensor<T>& probs, const LabelBatch& gt, double smooth,
                                        std::int32_t ignore_index = kIgnoreIndex);

// ce_weight * CE + log_dice_weight * (-log mean_c softDice_c).
template <typename T>
LossResult<T> supervised_loss(const Tensor<T>& probs, const LabelBatch& gt, const LossWeights& weights,
                              std::int32_t ignore_index = kIgnoreIndex);

// Mean cross-entropy over non-ignored pseudo-labelled pixels; 0 if none.
template <typename T>
LossResult<T> pseudo_supervised_loss(const Tensor<T>& probs_transformed, const LabelBatch& pseudo,
                                     std::int32_t ignore_index = kIgnoreIndex);

inline double overall_loss(double sup, double ps, double lam) {
  if (lam < 0) throw InvalidInput("overall_loss: lambda must be non-negative");
  return sup + lam * ps;
}

}  // namespace tist
