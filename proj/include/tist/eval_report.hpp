#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tist/tensor.hpp"

namespace tist {

// 2|P n G| / (|P| + |G|) for one class, ignoring pixels where gt carries
// the ignore index. Both sets empty scores 1.
double dice_score(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id,
                  std::int32_t ignore_index = kIgnoreIndex);

struct DiceResult {
  std::vector<std::int32_t> class_ids;
  // Per-image Dice averaged over images, one entry per class_ids element.
  std::vector<double> per_class;
  // Dice over all evaluated pixels pooled across images.
  std::vector<double> pooled_per_class;
  // Classes missing from every prediction and ground truth; not in per_class.
  std::vector<std::int32_t> absent_classes;
  double mean = 0.0;
  double pooled_mean = 0.0;
  int n_images = 0;
  // Images whose ground truth is entirely ignore; skipped.
  int n_excluded = 0;
};

// Scores classes 1..num_classes-1 (and 0 when include_background is set).
DiceResult evaluate_dice(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truth,
                         int num_classes, bool include_background = false,
                         std::int32_t ignore_index = kIgnoreIndex);

// Percentage-point improvement of a method over the supervised baseline.
double relative_dice(double method_dice_percent, double supervised_dice_percent);

struct FoldSummary {
  std::vector<std::int32_t> class_ids;
  std::vector<double> mean_per_class;
  std::vector<double> std_per_class;
  double mean = 0.0;
  double std = 0.0;
  int n_folds = 0;
};

// Mean and sample standard deviation (0 for a single fold) over folds.
FoldSummary aggregate_folds(std::span<const DiceResult> folds);

}  // namespace tist
