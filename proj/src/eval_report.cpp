#include "tist/eval_report.hpp"

#include <algorithm>
#include <cmath>

namespace tist {

namespace {

struct Counts {
  std::size_t pred = 0, gt = 0, both = 0;
};

Counts count_class(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id, std::int32_t ignore_index) {
  Counts k;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == ignore_index) continue;
    const bool p = pred.labels[i] == class_id;
    const bool g = gt.labels[i] == class_id;
    k.pred += p;
    k.gt += g;
    k.both += p && g;
  }
  return k;
}

double dice_from(const Counts& k) {
  if (k.pred + k.gt == 0) return 1.0;
  return 2.0 * static_cast<double>(k.both) / static_cast<double>(k.pred + k.gt);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

}  // namespace

double dice_score(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id, std::int32_t ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width) throw InvalidInput("dice_score: maps differ in shape");
  return dice_from(count_class(pred, gt, class_id, ignore_index));
}

DiceResult evaluate_dice(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truth,
                         int num_classes, bool include_background, std::int32_t ignore_index) {
  if (predictions.size() != ground_truth.size())
    throw InvalidInput("evaluate_dice: prediction and ground-truth counts differ");
  if (num_classes < 2) throw InvalidInput("evaluate_dice: num_classes must be >= 2");

  std::vector<std::size_t> kept;
  DiceResult result;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    const auto& gt = ground_truth[i];
    if (predictions[i].height != gt.height || predictions[i].width != gt.width)
      throw InvalidInput("evaluate_dice: image " + std::to_string(i) + " prediction and ground truth differ in shape");
    const bool all_ignored =
        std::all_of(gt.labels.begin(), gt.labels.end(), [&](std::int32_t v) { return v == ignore_index; });
    if (all_ignored) {
      ++result.n_excluded;
      continue;
    }
    kept.push_back(i);
  }
  result.n_images = static_cast<int>(kept.size());

  for (std::int32_t c = include_background ? 0 : 1; c < num_classes; ++c) {
    Counts pooled;
    std::vector<double> per_image;
    for (auto i : kept) {
      const Counts k = count_class(predictions[i], ground_truth[i], c, ignore_index);
      pooled.pred += k.pred;
      pooled.gt += k.gt;
      pooled.both += k.both;
      per_image.push_back(dice_from(k));
    }
    if (pooled.pred + pooled.gt == 0) {
      result.absent_classes.push_back(c);
      continue;
    }
    result.class_ids.push_back(c);
    result.per_class.push_back(mean_of(per_image));
    result.pooled_per_class.push_back(dice_from(pooled));
  }
  result.mean = mean_of(result.per_class);
  result.pooled_mean = mean_of(result.pooled_per_class);
  return result;
}

double relative_dice(double method_dice_percent, double supervised_dice_percent) {
  return method_dice_percent - supervised_dice_percent;
}

FoldSummary aggregate_folds(std::span<const DiceResult> folds) {
  if (folds.empty()) throw InvalidInput("aggregate_folds: no fold results");
  FoldSummary summary;
  summary.n_folds = static_cast<int>(folds.size());
  // Union of scored classes; a fold that did not score a class is skipped for it.
  for (const auto& f : folds)
    for (auto c : f.class_ids)
      if (std::find(summary.class_ids.begin(), summary.class_ids.end(), c) == summary.class_ids.end())
        summary.class_ids.push_back(c);
  std::sort(summary.class_ids.begin(), summary.class_ids.end());

  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = mean_of(v);
    sd = 0.0;
    if (v.size() < 2) return;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  for (auto c : summary.class_ids) {
    std::vector<double> values;
    for (const auto& f : folds) {
      auto it = std::find(f.class_ids.begin(), f.class_ids.end(), c);
      if (it != f.class_ids.end()) values.push_back(f.per_class[static_cast<std::size_t>(it - f.class_ids.begin())]);
    }
    double m = 0, s = 0;
    stats(values, m, s);
    summary.mean_per_class.push_back(m);
    summary.std_per_class.push_back(s);
  }
  std::vector<double> overall;
  for (const auto& f : folds) overall.push_back(f.mean);
  stats(overall, summary.mean, summary.std);
  return summary;
}

}  // namespace tist
