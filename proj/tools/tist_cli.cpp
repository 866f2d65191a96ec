#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tist/config.hpp"
#include "tist/error.hpp"
#include "tist/experiment.hpp"
#include "tist/report.hpp"

namespace fs = std::filesystem;
using namespace tist;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kFailure = 2;
constexpr int kPartial = 3;

fs::path output_root() {
  if (const char* env = std::getenv("TIST_OUTPUT_ROOT"); env && *env) return env;
  return "tist-output";
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !is.eof()) throw InvalidConfig("bad " + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidConfig(what + " list is empty");
  return out;
}

// Options shared by train and ablate; collected as section.key settings
// so that one resolution path serves files and flags alike.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::string profile, method, optimizer, data_dir;
  std::optional<double> tau, lr, fraction;
  std::optional<int> epochs, fold, width;
  std::optional<std::uint64_t> seed, data_seed;

  void add(CLI::App* app, bool with_method) {
    app->add_option("-c,--config", config_file, "INI config file ([section] key = value)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override section.key=value (repeatable)");
    app->add_option("--profile", profile, "desk or paper");
    if (with_method) {
      app->add_option("--method", method, "supervised, st or tist");
      app->add_option("--tau", tau, "Confidence threshold in (0.5, 1)");
      app->add_option("--seed", seed, "Training seed");
      app->add_option("--fold", fold, "Fold index");
      app->add_option("--fraction", fraction, "Share of the labeled source pool to keep");
    }
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--optimizer", optimizer, "sgd, momentum or adam");
    app->add_option("--width", width, "Base channel width of the network");
    app->add_option("--data", data_dir, "Dataset root with source/ and target/ folders (from generate)");
    app->add_option("--data-seed", data_seed, "Seed of the synthetic dataset");
  }

  ExperimentConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> settings;
    if (!config_file.empty()) settings = read_config_file(config_file);
    auto put = [&](const std::string& k, const std::string& v) { settings.emplace_back(k, v); };
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    if (!profile.empty()) put("experiment.profile", profile);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InvalidConfig("--set expects section.key=value, got '" + s + "'");
      put(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!method.empty()) put("train.method", method);
    if (tau) put("train.tau", num(*tau));
    if (seed) put("train.seed", std::to_string(*seed));
    if (fold) put("train.fold", std::to_string(*fold));
    if (fraction) put("experiment.source_fraction", num(*fraction));
    if (epochs) put("train.epochs", std::to_string(*epochs));
    if (lr) put("train.lr", num(*lr));
    if (!optimizer.empty()) put("train.optimizer", optimizer);
    if (width) put("train.base_width", std::to_string(*width));
    if (data_seed) put("data.seed", std::to_string(*data_seed));
    if (!data_dir.empty()) {
      put("data.kind", "folder");
      put("data.source_dir", (fs::absolute(data_dir) / "source").lexically_normal().string());
      put("data.target_dir", (fs::absolute(data_dir) / "target").lexically_normal().string());
    }
    ExperimentConfig c = resolve_config(settings);
    validate(c);
    return c;
  }

  bool any_set() const {
    return !config_file.empty() || !sets.empty() || !profile.empty() || !method.empty() || tau || lr || fraction ||
           epochs || fold || width || seed || data_seed || !optimizer.empty() || !data_dir.empty();
  }
};

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::uint64_t seed = 0;
  int num_source = 64, num_target = 64, size = 128, channels = 3, classes = 2;
  std::string shift = "default";
  std::optional<double> brightness, noise, blur;
  bool force = false;
};

int cmd_generate(const GenerateArgs& a) {
  const fs::path out = a.out.empty() ? output_root() / "data" : fs::path(a.out);
  if (non_empty_dir(out) && !a.force) {
    std::cerr << "error: " << out.string() << " exists and is not empty (use --force to overwrite)\n";
    return kUsage;
  }
  SynthConfig cfg;
  cfg.num_source = a.num_source;
  cfg.num_target = a.num_target;
  cfg.height = cfg.width = a.size;
  cfg.channels = a.channels;
  cfg.num_classes = a.classes;
  if (a.shift == "none") {
    cfg.shift = {0.0, 0.0, 0.0};
  } else if (a.shift != "default") {
    std::cerr << "error: --shift must be 'default' or 'none'\n";
    return kUsage;
  }
  if (a.brightness) cfg.shift.brightness = *a.brightness;
  if (a.noise) cfg.shift.noise_sigma = *a.noise;
  if (a.blur) cfg.shift.blur_sigma = *a.blur;
  validate(cfg);

  const auto [source, target] = generate_synthetic(cfg, a.seed);
  if (a.force) {
    fs::remove_all(out / "source");
    fs::remove_all(out / "target");
  }
  export_folder_dataset(source, out / "source");
  export_folder_dataset(target, out / "target");
  const Json manifest{{"generator", "synthetic"}, {"seed", a.seed}, {"config", cfg},
                      {"source_count", source.size()}, {"target_count", target.size()}};
  std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
  std::cout << "wrote " << source.size() << " source and " << target.size() << " target samples to "
            << out.string() << '\n';
  return kOk;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, const std::string& run_dir_arg, const std::string& resume, bool quiet) {
  RunOptions options;
  if (!quiet) options.log = log_line;
  RunResult result;
  if (!resume.empty()) {
    if (flags.any_set()) {
      std::cerr << "error: --resume takes its configuration from the checkpoint's run directory; drop other "
                   "config flags\n";
      return kUsage;
    }
    if (!fs::exists(resume)) {
      std::cerr << "error: checkpoint " << resume << " does not exist\n";
      return kUsage;
    }
    result = resume_experiment(resume, options);
  } else {
    const ExperimentConfig c = flags.resolve();
    const fs::path run_dir = run_dir_arg.empty() ? output_root() / "runs" / run_name(c) : fs::path(run_dir_arg);
    std::cerr << "run " << run_dir.string() << " (config " << experiment_hash(c) << ")\n";
    result = run_experiment(c, run_dir, options);
  }
  const auto& epochs = result.history.epochs;
  std::cout << result.run_dir.string() << '\n';
  if (!epochs.empty())
    std::cout << "final target Dice " << percent(epochs.back().target_dice) << "%  source Dice "
              << percent(epochs.back().source_dice) << "%\n";
  return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, baseline, split = "test", out, dump;
  std::string dump_method = "tist";
  int dump_count = 4;
};

struct EvalSet {
  Dataset owned;
  std::vector<const Sample*> samples;
  std::string description;
};

EvalSet eval_set_for(const EvalArgs& a, const fs::path& run_dir, const ExperimentConfig* run_config,
                     LoadedData& holder) {
  EvalSet set;
  if (!a.data.empty()) {
    set.owned = load_folder_dataset(a.data);
    for (const auto& s : set.owned)
      if (s.label) set.samples.push_back(&s);
    set.description = a.data;
    if (set.samples.empty()) throw InvalidInput("dataset " + a.data + " has no masks to evaluate against");
    return set;
  }
  if (!run_config) throw InvalidInput("no --data given and " + run_dir.string() + " has no config.json");
  holder = load_data(*run_config);
  const FoldSplit& split = holder.folds.at(static_cast<std::size_t>(run_config->train.fold));
  const std::vector<std::string>* ids = nullptr;
  const Dataset* pool = &holder.target;
  if (a.split == "test") {
    ids = &split.test_ids;
  } else if (a.split == "train") {
    ids = &split.train_source_ids;
    pool = &holder.source;
  } else if (a.split == "target-train") {
    ids = &split.train_target_ids;
  } else if (a.split == "source-test") {
    ids = &split.source_test_ids;
    pool = &holder.source;
  } else {
    throw InvalidConfig("--split must be test, train, target-train or source-test");
  }
  for (auto i : indices_of(*pool, *ids)) set.samples.push_back(&(*pool)[i]);
  set.description = "fold " + std::to_string(run_config->train.fold) + " " + a.split;
  return set;
}

void check_compatible(const SegmentationModel<float>& model, const std::vector<const Sample*>& samples) {
  const int classes = model.config().num_classes;
  for (const Sample* s : samples) {
    if (s->image.channels != model.config().in_channels)
      throw InvalidInput("sample '" + s->id + "' has " + std::to_string(s->image.channels) +
                         " channels; checkpoint expects " + std::to_string(model.config().in_channels));
    for (auto v : s->label->labels)
      if (v != kIgnoreIndex && (v < 0 || v >= classes))
        throw InvalidInput("class-count mismatch: mask of '" + s->id + "' contains class " + std::to_string(v) +
                           " but the checkpoint predicts " + std::to_string(classes) + " classes");
  }
}

DiceResult score(const SegmentationModel<float>& model, const std::vector<const Sample*>& samples) {
  std::vector<const Image*> images;
  std::vector<LabelMap> truth;
  for (const Sample* s : samples) {
    images.push_back(&s->image);
    truth.push_back(*s->label);
  }
  return evaluate_dice(predict_labels(model, images), truth, model.config().num_classes);
}

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint)) {
    std::cerr << "error: checkpoint " << a.checkpoint << " does not exist\n";
    return kUsage;
  }
  const LoadedCheckpoint ckpt = read_checkpoint(a.checkpoint);
  const fs::path run_dir = fs::path(a.checkpoint).parent_path();
  std::optional<ExperimentConfig> run_config;
  if (fs::exists(run_dir / "config.json")) run_config = read_run_config(run_dir);

  LoadedData holder;
  const EvalSet set = eval_set_for(a, run_dir, run_config ? &*run_config : nullptr, holder);
  check_compatible(ckpt.model, set.samples);
  const DiceResult dice = score(ckpt.model, set.samples);
  if (dice.n_excluded > 0)
    std::cerr << "warning: " << dice.n_excluded << " image(s) whose mask is entirely ignore were excluded\n";

  std::cout << "checkpoint " << a.checkpoint << " (" << to_string(ckpt.meta.config.method) << ", epoch "
            << ckpt.meta.next_epoch << ") on " << set.description << ", " << dice.n_images << " images\n";
  for (std::size_t i = 0; i < dice.class_ids.size(); ++i)
    std::cout << "  class " << dice.class_ids[i] << ": Dice " << percent(dice.per_class[i]) << "%  pooled "
              << percent(dice.pooled_per_class[i]) << "%\n";
  for (auto c : dice.absent_classes) std::cout << "  class " << c << ": absent from predictions and masks\n";
  std::cout << "  mean Dice " << percent(dice.mean) << "%  pooled " << percent(dice.pooled_mean) << "%\n";

  Json out{{"checkpoint", a.checkpoint}, {"eval_set", set.description}, {"config_hash", ckpt.meta.config_hash},
           {"dice", dice}};
  if (!a.baseline.empty()) {
    if (!fs::exists(a.baseline)) {
      std::cerr << "error: baseline checkpoint " << a.baseline << " does not exist\n";
      return kUsage;
    }
    const LoadedCheckpoint base = read_checkpoint(a.baseline);
    check_compatible(base.model, set.samples);
    const DiceResult base_dice = score(base.model, set.samples);
    const double rel = relative_dice(100.0 * dice.mean, 100.0 * base_dice.mean);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.2f", rel);
    std::cout << "  baseline mean Dice " << percent(base_dice.mean) << "%  relative Dice " << buf << " pp\n";
    out["baseline"] = {{"checkpoint", a.baseline}, {"dice", base_dice}, {"relative_dice_pp", rel}};
  }
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw IoError("cannot write " + a.out);
    os << out.dump(2) << '\n';
  }
  if (!a.dump.empty()) {
    std::vector<const Image*> images;
    std::vector<std::string> ids;
    for (const Sample* s : set.samples) {
      if (static_cast<int>(images.size()) >= a.dump_count) break;
      images.push_back(&s->image);
      ids.push_back(s->id);
    }
    const auto& cfg = ckpt.meta.config;
    dump_pseudo_labels(ckpt.model, images, ids, parse_method(a.dump_method), cfg.tau, cfg.augment, cfg.seed, a.dump);
    std::cout << "  pseudo-label dump written to " << a.dump << '\n';
  }
  return kOk;
}

// ---- ablate / report -------------------------------------------------------

struct AblateArgs {
  std::string methods = "st,tist", taus = "0.80,0.85,0.90,0.95", seeds = "0", fractions = "1", folds = "0";
  std::string out, name = "sweep";
  bool reuse = false, quiet = false;
};

int cmd_ablate(const ConfigFlags& flags, const AblateArgs& a) {
  AblationSpec spec;
  spec.base = flags.resolve();
  spec.methods.clear();
  for (const auto& m : parse_list<std::string>(a.methods, "method")) spec.methods.push_back(parse_method(m));
  spec.taus = parse_list<double>(a.taus, "tau");
  spec.seeds = parse_list<std::uint64_t>(a.seeds, "seed");
  spec.fractions = parse_list<double>(a.fractions, "fraction");
  spec.folds = parse_list<int>(a.folds, "fold");
  spec.reuse_completed = a.reuse;
  for (const auto& p : expand_grid(spec)) validate(point_config(spec.base, p));

  const fs::path dir = a.out.empty() ? output_root() / "sweeps" / a.name : fs::path(a.out);
  RunOptions options;
  options.log = log_line;
  if (a.quiet) options.log = [](const std::string& s) {
    if (s.rfind("epoch", 0) != 0) log_line(s);
  };
  const AblationResult result = run_ablation(spec, dir, options);
  const int failed = result.failures();
  std::cout << "sweep " << dir.string() << ": " << result.outcomes.size() - failed << "/" << result.outcomes.size()
            << " runs complete; report in " << (dir / "report").string() << '\n';
  if (failed == 0) return kOk;
  return failed < static_cast<int>(result.outcomes.size()) ? kPartial : kFailure;
}

int cmd_report(const std::string& sweep, const std::vector<std::string>& run_dirs, const std::string& out_arg) {
  std::vector<RunSummary> runs;
  std::vector<ExpectedPoint> missing;
  fs::path out = out_arg;
  if (!sweep.empty()) {
    if (out.empty()) out = fs::path(sweep) / "report";
    const fs::path listing = fs::path(sweep) / "sweep.json";
    if (fs::exists(listing)) {
      std::ifstream is(listing);
      const Json j = Json::parse(is);
      for (const auto& p : j.at("points")) {
        const fs::path dir = fs::path(sweep) / p.at("run_dir").get<std::string>();
        const ExpectedPoint expected{parse_method(p.at("method").get<std::string>()), p.at("tau").get<double>(),
                                     p.at("fraction").get<double>(), p.at("seed").get<std::uint64_t>(),
                                     p.at("fold").get<int>(), p.value("error", std::string("not run"))};
        if (fs::exists(dir / "metrics.jsonl") && fs::exists(dir / "config.json")) {
          runs.push_back(summarize_run(dir));
        } else {
          missing.push_back(expected);
        }
      }
    } else {
      for (const auto& entry : fs::directory_iterator(fs::path(sweep) / "runs"))
        if (fs::exists(entry.path() / "metrics.jsonl")) runs.push_back(summarize_run(entry.path()));
    }
  }
  for (const auto& d : run_dirs) runs.push_back(summarize_run(d));
  if (runs.empty() && missing.empty()) {
    std::cerr << "error: no runs found\n";
    return kUsage;
  }
  if (out.empty()) out = output_root() / "report";
  const SweepReport report = sweep_report(runs, missing, out);
  std::cout << "report over " << report.runs.size() << " run(s), " << report.missing.size()
            << " missing point(s), written to " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformation-invariant self-training for segmentation under domain shift"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic source/target dataset");
  generate->add_option("-o,--out", gen.out, "Output directory (default $TIST_OUTPUT_ROOT/data)");
  generate->add_option("--seed", gen.seed);
  generate->add_option("--num-source", gen.num_source)->check(CLI::PositiveNumber);
  generate->add_option("--num-target", gen.num_target)->check(CLI::PositiveNumber);
  generate->add_option("--size", gen.size, "Image height and width")->check(CLI::PositiveNumber);
  generate->add_option("--channels", gen.channels)->check(CLI::PositiveNumber);
  generate->add_option("--classes", gen.classes, "Class count including background")->check(CLI::Range(2, 254));
  generate->add_option("--shift", gen.shift, "default or none");
  generate->add_option("--brightness", gen.brightness, "Target brightness offset");
  generate->add_option("--noise", gen.noise, "Target noise sigma");
  generate->add_option("--blur", gen.blur, "Target blur sigma");
  generate->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  ConfigFlags train_flags;
  std::string run_dir, resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train one configuration");
  train_flags.add(train, true);
  train->add_option("--run-dir", run_dir, "Run directory (default $TIST_OUTPUT_ROOT/runs/<name>)");
  train->add_option("--resume", resume, "Continue from a checkpoint inside a run directory");
  train->add_flag("-q,--quiet", quiet);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  eval->add_option("checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "Folder dataset (images/, masks/); default is the run's fold");
  eval->add_option("--split", eval_args.split, "test, train, target-train or source-test (without --data)");
  eval->add_option("--baseline", eval_args.baseline, "Checkpoint to compute relative Dice against");
  eval->add_option("-o,--out", eval_args.out, "Write the result as JSON");
  eval->add_option("--dump", eval_args.dump, "Write masks and pseudo-labels of a few images here");
  eval->add_option("--dump-method", eval_args.dump_method, "st or tist masking for --dump");
  eval->add_option("--dump-count", eval_args.dump_count)->check(CLI::PositiveNumber);

  ConfigFlags ablate_flags;
  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Sweep methods, thresholds, labeled fractions and seeds");
  ablate_flags.add(ablate, false);
  ablate->add_option("--methods", ablate_args.methods, "Comma list from supervised, st, tist");
  ablate->add_option("--taus", ablate_args.taus, "Comma list of thresholds");
  ablate->add_option("--seeds", ablate_args.seeds, "Comma list of training seeds");
  ablate->add_option("--fractions", ablate_args.fractions, "Comma list of labeled fractions");
  ablate->add_option("--folds", ablate_args.folds, "Comma list of fold indices");
  ablate->add_option("-o,--out", ablate_args.out, "Sweep directory (default $TIST_OUTPUT_ROOT/sweeps/<name>)");
  ablate->add_option("--name", ablate_args.name);
  ablate->add_flag("--reuse", ablate_args.reuse, "Keep completed runs with a matching config hash");
  ablate->add_flag("-q,--quiet", ablate_args.quiet, "Only log run starts and failures");

  std::string sweep, report_out;
  std::vector<std::string> report_runs;
  auto* report = app.add_subcommand("report", "Rebuild a sweep report from run directories");
  report->add_option("--sweep", sweep, "Sweep directory")->check(CLI::ExistingDirectory);
  report->add_option("--runs", report_runs, "Run directories")->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", report_out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*train) return cmd_train(train_flags, run_dir, resume, quiet);
    if (*eval) return cmd_eval(eval_args);
    if (*ablate) return cmd_ablate(ablate_flags, ablate_args);
    if (*report) return cmd_report(sweep, report_runs, report_out);
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
