#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tist/model.hpp"
#include "tist/trainer.hpp"

namespace tist {

// Final-epoch metrics of one run directory, read from its config and
// metrics stream.
struct RunSummary {
  std::filesystem::path run_dir;
  std::string config_hash;
  Method method = Method::tist;
  double tau = 0.0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  int fold = 0;
  int epochs_done = 0;
  int epochs_total = 0;
  double target_dice = 0.0;
  double target_dice_pooled = 0.0;
  double source_dice = 0.0;
  double best_target_dice = 0.0;

  bool complete() const { return epochs_done == epochs_total && epochs_total > 0; }
};

RunSummary summarize_run(const std::filesystem::path& run_dir);

struct ExpectedPoint {
  Method method = Method::tist;
  double tau = 0.0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  int fold = 0;
  // Empty when the run finished; otherwise why it is missing.
  std::string problem;
};

// Mean over seeds and folds for one (method, tau, fraction).
struct AggregatePoint {
  Method method = Method::tist;
  double tau = 0.0;
  double fraction = 1.0;
  int n_runs = 0;
  int n_missing = 0;
  double mean_target_dice = 0.0;
  double std_target_dice = 0.0;
  double mean_target_dice_pooled = 0.0;
  double mean_source_dice = 0.0;
  // TI-ST minus ST at the same tau and fraction, when both exist.
  std::optional<double> gap;
};

struct SweepReport {
  std::vector<RunSummary> runs;
  std::vector<ExpectedPoint> missing;
  std::vector<AggregatePoint> aggregates;
  std::vector<std::filesystem::path> files;
};

std::vector<AggregatePoint> aggregate_runs(const std::vector<RunSummary>& runs,
                                           const std::vector<ExpectedPoint>& missing = {});

// Writes results.csv (one row per run), summary.csv, report.md and SVG
// plots of Dice against tau and, when several fractions are present,
// against the labeled fraction.
SweepReport sweep_report(const std::vector<RunSummary>& runs, const std::vector<ExpectedPoint>& missing,
                         const std::filesystem::path& out_dir);

// Methods x tasks table with relative Dice over the supervised row in
// parentheses and an average-relative column. Values in percent.
struct TaskColumn {
  std::string name;
  std::optional<double> supervised;
  std::optional<double> st;
  std::optional<double> tist;
};
std::string relative_dice_table(const std::vector<TaskColumn>& tasks);

// Writes, per target image, the two views, the confidence mask and the
// pseudo-labels with ignored pixels painted turquoise.
void dump_pseudo_labels(const SegmentationModel<float>& model, const std::vector<const Image*>& images,
                        const std::vector<std::string>& ids, Method method, double tau, const AugmentConfig& augment,
                        std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace tist
