#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tist/config.hpp"
#include "tist/data.hpp"
#include "tist/trainer.hpp"

namespace tist {

enum class Profile { desk, paper };

std::string to_string(Profile p);
Profile parse_profile(const std::string& s);

struct DataSource {
  enum class Kind { synthetic, folder };
  Kind kind = Kind::synthetic;
  // Synthetic generator settings; channels and classes come from TrainConfig.
  SynthConfig synth;
  std::uint64_t seed = 0;
  std::filesystem::path source_dir;
  std::filesystem::path target_dir;
  int num_folds = 4;
  std::uint64_t fold_seed = 0;

  friend bool operator==(const DataSource&, const DataSource&) = default;
};

// Start from profile_defaults; a default-constructed value carries the
// bare TrainConfig defaults.
struct ExperimentConfig {
  Profile profile = Profile::desk;
  double source_fraction = 1.0;
  DataSource data;
  TrainConfig train;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig profile_defaults(Profile profile);

void validate(const ExperimentConfig& config);

// Every settable key as "section.key" mapped to its current value. This is
// the layout of the config file.
Json full_json(const ExperimentConfig& config);
ExperimentConfig from_full_json(const Json& j);

// full_json with settings that cannot affect the run removed (synthetic
// parameters of a folder run, tau of a supervised run, ...).
Json canonical_json(const ExperimentConfig& config);
std::string experiment_hash(const ExperimentConfig& config);

// Sets "section.key" from text, parsed as the type the key already holds.
// Setting experiment.profile replaces the whole config with that profile's
// defaults.
void set_option(ExperimentConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> option_keys();

// Section/key text form of full_json.
std::string to_ini(const ExperimentConfig& config);

// INI file with [section] headers and key = value lines, as
// ("section.key", value) pairs in file order.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// Starts from the defaults of the last experiment.profile setting (desk
// when none) and applies the remaining settings in order, so later
// entries win.
ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& settings);

struct LoadedData {
  Dataset source;
  Dataset target;
  std::vector<FoldSplit> folds;
};

LoadedData load_data(const ExperimentConfig& config);

// "<method>_tau<tau>_frac<fraction>_s<seed>_f<fold>_<hash prefix>".
std::string run_name(const ExperimentConfig& config);

struct RunOptions {
  std::function<void(const std::string&)> log;
  std::optional<int> max_epochs_this_call;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::string config_hash;
  History history;
  bool complete = false;
};

// Trains one configuration into run_dir: config.ini, config.json,
// manifest.json, metrics.jsonl, history.json and checkpoints. An existing
// run_dir written for a different configuration is refused.
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                         const RunOptions& options = {}, const LoadedData* data = nullptr);

// Continues the run owning checkpoint (its parent directory). The metrics
// stream is rewritten from the checkpoint history before training resumes.
RunResult resume_experiment(const std::filesystem::path& checkpoint, const RunOptions& options = {});

ExperimentConfig read_run_config(const std::filesystem::path& run_dir);

// Line-delimited records: {"type":"step",...} and {"type":"epoch",...}.
History read_metrics(const std::filesystem::path& metrics_file);

struct AblationSpec {
  ExperimentConfig base;
  std::vector<Method> methods{Method::st, Method::tist};
  std::vector<double> taus{0.80, 0.85, 0.90, 0.95};
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> fractions{1.0};
  std::vector<int> folds{0};
  // Keeps completed runs whose manifest matches instead of retraining.
  bool reuse_completed = false;
};

struct GridPoint {
  Method method = Method::tist;
  double tau = 0.85;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  int fold = 0;
};

// A supervised method contributes one point per (fraction, seed, fold)
// at the base tau, since tau does not enter its objective.
std::vector<GridPoint> expand_grid(const AblationSpec& spec);
ExperimentConfig point_config(const ExperimentConfig& base, const GridPoint& point);

struct PointOutcome {
  GridPoint point;
  std::filesystem::path run_dir;
  bool ok = false;
  std::string error;
};

struct AblationResult {
  std::filesystem::path sweep_dir;
  std::vector<PointOutcome> outcomes;
  int failures() const;
};

// Runs every grid point under sweep_dir/runs, records sweep.json and
// writes the sweep report into sweep_dir/report. Failed points are
// recorded and skipped.
AblationResult run_ablation(const AblationSpec& spec, const std::filesystem::path& sweep_dir,
                            const RunOptions& options = {});

}  // namespace tist
