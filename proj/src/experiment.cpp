#include "tist/experiment.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tist/error.hpp"
#include "tist/pseudolabel.hpp"
#include "tist/report.hpp"

namespace fs = std::filesystem;

namespace tist {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << text;
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string value_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

Json parse_like(const Json& current, const std::string& key, const std::string& text) {
  auto bad = [&](const char* what) {
    return InvalidConfig("option " + key + ": '" + text + "' is not " + what);
  };
  try {
    std::size_t used = 0;
    if (current.is_boolean()) {
      if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "off" || text == "no") return false;
      throw bad("a boolean");
    }
    if (current.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') throw bad("a non-negative integer");
      const auto v = std::stoull(text, &used);
      if (used != text.size()) throw bad("a non-negative integer");
      return v;
    }
    if (current.is_number_integer()) {
      const auto v = std::stoll(text, &used);
      if (used != text.size()) throw bad("an integer");
      return v;
    }
    if (current.is_number_float()) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw bad("a number");
      return v;
    }
  } catch (const std::invalid_argument&) {
    throw bad("a valid value");
  } catch (const std::out_of_range&) {
    throw bad("in range");
  }
  return text;
}

}  // namespace

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper" || s == "paper-scale") return Profile::paper;
  throw InvalidConfig("unknown profile '" + s + "' (expected desk or paper)");
}

ExperimentConfig profile_defaults(Profile profile) {
  ExperimentConfig c;
  c.profile = profile;
  if (profile == Profile::desk) {
    c.train.epochs = 30;
    c.train.base_width = 8;
    c.train.optimizer = OptimizerKind::adam;
    c.data.synth.height = c.data.synth.width = 128;
  } else {
    c.train.epochs = 100;
    c.train.base_width = 16;
    c.train.optimizer = OptimizerKind::sgd;
    c.data.synth.height = c.data.synth.width = 512;
  }
  return c;
}

void validate(const ExperimentConfig& c) {
  validate(c.train);
  if (!(c.source_fraction > 0 && c.source_fraction <= 1)) throw InvalidConfig("source_fraction must lie in (0, 1]");
  if (c.data.num_folds < 2) throw InvalidConfig("data.folds must be at least 2");
  if (c.train.fold < 0 || c.train.fold >= c.data.num_folds)
    throw InvalidConfig("train.fold must lie in [0, " + std::to_string(c.data.num_folds) + ")");
  if (c.data.kind == DataSource::Kind::synthetic) {
    SynthConfig s = c.data.synth;
    s.channels = c.train.in_channels;
    s.num_classes = c.train.num_classes;
    validate(s);
  } else if (c.data.source_dir.empty() || c.data.target_dir.empty()) {
    throw InvalidConfig("folder data needs data.source_dir and data.target_dir");
  }
}

Json full_json(const ExperimentConfig& c) {
  Json train = c.train;
  Json loss = train["loss"];
  Json augment = train["augment"];
  train.erase("loss");
  train.erase("augment");
  const auto& s = c.data.synth;
  return Json{{"experiment", {{"profile", to_string(c.profile)}, {"source_fraction", c.source_fraction}}},
              {"data",
               {{"kind", c.data.kind == DataSource::Kind::synthetic ? "synthetic" : "folder"},
                {"seed", c.data.seed},
                {"num_source", s.num_source},
                {"num_target", s.num_target},
                {"height", s.height},
                {"width", s.width},
                {"brightness", s.shift.brightness},
                {"noise_sigma", s.shift.noise_sigma},
                {"blur_sigma", s.shift.blur_sigma},
                {"source_dir", c.data.source_dir.string()},
                {"target_dir", c.data.target_dir.string()},
                {"folds", c.data.num_folds},
                {"fold_seed", c.data.fold_seed}}},
              {"train", train},
              {"loss", loss},
              {"augment", augment}};
}

ExperimentConfig from_full_json(const Json& j) {
  try {
    ExperimentConfig c;
    const auto& e = j.at("experiment");
    c.profile = parse_profile(e.at("profile").get<std::string>());
    c.source_fraction = e.at("source_fraction").get<double>();
    const auto& d = j.at("data");
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "synthetic") {
      c.data.kind = DataSource::Kind::synthetic;
    } else if (kind == "folder") {
      c.data.kind = DataSource::Kind::folder;
    } else {
      throw InvalidConfig("data.kind must be synthetic or folder, got '" + kind + "'");
    }
    c.data.seed = d.at("seed").get<std::uint64_t>();
    c.data.synth.num_source = d.at("num_source").get<int>();
    c.data.synth.num_target = d.at("num_target").get<int>();
    c.data.synth.height = d.at("height").get<int>();
    c.data.synth.width = d.at("width").get<int>();
    c.data.synth.shift.brightness = d.at("brightness").get<double>();
    c.data.synth.shift.noise_sigma = d.at("noise_sigma").get<double>();
    c.data.synth.shift.blur_sigma = d.at("blur_sigma").get<double>();
    c.data.source_dir = d.at("source_dir").get<std::string>();
    c.data.target_dir = d.at("target_dir").get<std::string>();
    c.data.num_folds = d.at("folds").get<int>();
    c.data.fold_seed = d.at("fold_seed").get<std::uint64_t>();
    Json train = j.at("train");
    train["loss"] = j.at("loss");
    train["augment"] = j.at("augment");
    c.train = train.get<TrainConfig>();
    c.data.synth.channels = c.train.in_channels;
    c.data.synth.num_classes = c.train.num_classes;
    return c;
  } catch (const Json::exception& e) {
    throw InvalidConfig(std::string("malformed configuration: ") + e.what());
  }
}

Json canonical_json(const ExperimentConfig& c) {
  Json j = full_json(c);
  j["experiment"].erase("profile");
  auto& d = j["data"];
  if (c.data.kind == DataSource::Kind::synthetic) {
    d.erase("source_dir");
    d.erase("target_dir");
  } else {
    for (const char* k : {"seed", "num_source", "num_target", "height", "width", "brightness", "noise_sigma",
                          "blur_sigma"})
      d.erase(k);
  }
  auto& t = j["train"];
  if (c.train.method == Method::supervised) {
    t.erase("tau");
    t.erase("ramp_squared");
  }
  if (c.train.optimizer != OptimizerKind::momentum) t.erase("momentum");
  if (c.train.optimizer != OptimizerKind::adam)
    for (const char* k : {"adam_beta1", "adam_beta2", "adam_eps"}) t.erase(k);
  return j;
}

std::string experiment_hash(const ExperimentConfig& c) { return config_hash(canonical_json(c)); }

std::vector<std::string> option_keys() {
  std::vector<std::string> keys;
  const Json j = full_json(ExperimentConfig{});
  for (const auto& [section, body] : j.items())
    for (const auto& [key, value] : body.items()) keys.push_back(section + "." + key);
  return keys;
}

void set_option(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw InvalidConfig("option '" + key + "' must be written section.key");
  const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
  if (section == "experiment" && name == "profile") {
    c = profile_defaults(parse_profile(value));
    return;
  }
  Json j = full_json(c);
  if (!j.contains(section) || !j[section].contains(name)) throw InvalidConfig("unknown option '" + key + "'");
  j[section][name] = parse_like(j[section][name], key, value);
  c = from_full_json(j);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  bool first = true;
  const Json j = full_json(c);
  for (const auto& [section, body] : j.items()) {
    if (!first) os << '\n';
    first = false;
    os << '[' << section << "]\n";
    for (const auto& [key, value] : body.items()) os << key << " = " << value_text(value) << '\n';
  }
  return os.str();
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(is);
  } catch (const CLI::Error& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    settings.emplace_back(item.fullname(), value);
  }
  return settings;
}

ExperimentConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& settings) {
  Profile profile = Profile::desk;
  for (const auto& [k, v] : settings)
    if (k == "experiment.profile") profile = parse_profile(v);
  ExperimentConfig c = profile_defaults(profile);
  for (const auto& [k, v] : settings)
    if (k != "experiment.profile") set_option(c, k, v);
  return c;
}

LoadedData load_data(const ExperimentConfig& c) {
  LoadedData out;
  if (c.data.kind == DataSource::Kind::synthetic) {
    SynthConfig s = c.data.synth;
    s.channels = c.train.in_channels;
    s.num_classes = c.train.num_classes;
    std::tie(out.source, out.target) = generate_synthetic(s, c.data.seed);
  } else {
    out.source = load_folder_dataset(c.data.source_dir, {"images", "masks", Domain::source});
    out.target = load_folder_dataset(c.data.target_dir, {"images", "masks", Domain::target});
  }
  out.folds = make_folds(out.source, out.target, c.data.num_folds, c.data.fold_seed);
  return out;
}

std::string run_name(const ExperimentConfig& c) {
  std::ostringstream os;
  os << to_string(c.train.method);
  if (c.train.method != Method::supervised) os << "_tau" << format_number(c.train.tau);
  os << "_frac" << format_number(c.source_fraction) << "_s" << c.train.seed << "_f" << c.train.fold << '_'
     << experiment_hash(c).substr(0, 8);
  return os.str();
}

ExperimentConfig read_run_config(const fs::path& run_dir) {
  return from_full_json(read_json_file(run_dir / "config.json").at("config"));
}

History read_metrics(const fs::path& metrics_file) {
  std::ifstream is(metrics_file);
  if (!is) throw IoError("cannot read " + metrics_file.string());
  History h;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "step") {
        h.steps.push_back(j.get<StepMetrics>());
      } else if (type == "epoch") {
        h.epochs.push_back(j.get<EpochRecord>());
      }
    } catch (const Json::exception& e) {
      throw IoError(metrics_file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return h;
}

namespace {

Json manifest_json(const ExperimentConfig& c, const std::string& hash, const LoadedData& data, const History& history,
                   const std::string& status) {
  const FoldSplit& split = data.folds.at(static_cast<std::size_t>(c.train.fold));
  Json m{{"config_hash", hash},
         {"run", run_name(c)},
         {"status", status},
         {"epochs_completed", history.epochs.size()},
         {"epochs_total", c.train.epochs},
         {"split", split}};
  if (!history.epochs.empty()) {
    const auto& last = history.epochs.back();
    m["final_target_dice"] = last.target_dice;
    m["final_source_dice"] = last.source_dice;
  }
  return m;
}

std::string step_line(const StepMetrics& s, const std::string& hash) {
  Json j = s;
  j["type"] = "step";
  j["config_hash"] = hash;
  return j.dump();
}

std::string epoch_line(const EpochRecord& r, const std::string& hash) {
  Json j = r;
  j["type"] = "epoch";
  j["config_hash"] = hash;
  return j.dump();
}

RunResult execute(const ExperimentConfig& c, const fs::path& run_dir, const LoadedData& data,
                  const std::optional<fs::path>& resume_from, const RunOptions& options) {
  const std::string hash = experiment_hash(c);
  const FoldSplit& split = data.folds.at(static_cast<std::size_t>(c.train.fold));
  Trainer trainer(c.train, make_train_data(data.source, data.target, split, c.source_fraction, c.train.seed), hash);
  if (resume_from) trainer.resume(*resume_from);

  fs::create_directories(run_dir);
  write_text(run_dir / "config.ini", to_ini(c));
  write_text(run_dir / "config.json",
             Json{{"config_hash", hash}, {"config", full_json(c)}, {"canonical", canonical_json(c)}}.dump(2) + "\n");
  write_text(run_dir / "manifest.json", manifest_json(c, hash, data, trainer.history(), "running").dump(2) + "\n");

  // The stream always restates the history the trainer starts from, so a
  // resumed run is contiguous with what was checkpointed.
  const fs::path metrics = run_dir / "metrics.jsonl";
  {
    std::ofstream os(metrics, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + metrics.string());
    std::size_t si = 0;
    const auto& h = trainer.history();
    for (const auto& e : h.epochs) {
      while (si < h.steps.size() && h.steps[si].epoch <= e.epoch) os << step_line(h.steps[si++], hash) << '\n';
      os << epoch_line(e, hash) << '\n';
    }
  }
  std::ofstream stream(metrics, std::ios::binary | std::ios::app);

  TrainHooks hooks;
  hooks.checkpoint_dir = run_dir;
  hooks.max_epochs_this_call = options.max_epochs_this_call;
  hooks.on_step = [&](const StepMetrics& s) { stream << step_line(s, hash) << '\n'; };
  hooks.on_epoch = [&](const EpochRecord& r) {
    stream << epoch_line(r, hash) << '\n';
    stream.flush();
    if (options.log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d/%d  lr %.3g  lambda %.4f  loss %.4f  kept %.3f  target %.4f  source %.4f",
                    r.epoch + 1, c.train.epochs, r.lr, r.lambda, r.mean_overall_loss, r.mean_retained_fraction,
                    r.target_dice, r.source_dice);
      options.log(buf);
    }
  };
  try {
    trainer.run(hooks);
  } catch (...) {
    stream.flush();
    write_text(run_dir / "manifest.json", manifest_json(c, hash, data, trainer.history(), "failed").dump(2) + "\n");
    throw;
  }
  stream.close();

  RunResult result;
  result.run_dir = run_dir;
  result.config_hash = hash;
  result.history = trainer.history();
  result.complete = trainer.next_epoch() >= c.train.epochs;
  write_text(run_dir / "history.json", Json(result.history).dump() + "\n");
  write_text(run_dir / "manifest.json",
             manifest_json(c, hash, data, result.history, result.complete ? "complete" : "interrupted").dump(2) +
                 "\n");
  return result;
}

void check_run_dir(const fs::path& run_dir, const std::string& hash) {
  const fs::path cfg = run_dir / "config.json";
  if (!fs::exists(cfg)) return;
  const auto existing = read_json_file(cfg).value("config_hash", std::string{});
  if (existing != hash)
    throw InvalidConfig("run directory " + run_dir.string() + " belongs to configuration " + existing +
                        ", not " + hash);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& c, const fs::path& run_dir, const RunOptions& options,
                         const LoadedData* data) {
  validate(c);
  check_run_dir(run_dir, experiment_hash(c));
  std::optional<LoadedData> owned;
  if (!data) data = &owned.emplace(load_data(c));
  return execute(c, run_dir, *data, std::nullopt, options);
}

RunResult resume_experiment(const fs::path& checkpoint, const RunOptions& options) {
  const fs::path run_dir = checkpoint.parent_path().empty() ? fs::path(".") : checkpoint.parent_path();
  const ExperimentConfig c = read_run_config(run_dir);
  validate(c);
  const LoadedData data = load_data(c);
  return execute(c, run_dir, data, checkpoint, options);
}

std::vector<GridPoint> expand_grid(const AblationSpec& spec) {
  if (spec.methods.empty()) throw InvalidConfig("ablation needs at least one method");
  if (spec.taus.empty()) throw InvalidConfig("ablation needs at least one tau");
  if (spec.seeds.empty() || spec.fractions.empty() || spec.folds.empty())
    throw InvalidConfig("ablation needs at least one seed, fraction and fold");
  for (double t : spec.taus) check_tau(t);
  std::vector<GridPoint> grid;
  for (double fraction : spec.fractions)
    for (Method m : spec.methods) {
      const std::vector<double> taus = m == Method::supervised ? std::vector<double>{spec.base.train.tau} : spec.taus;
      for (double tau : taus)
        for (auto seed : spec.seeds)
          for (int fold : spec.folds) grid.push_back({m, tau, fraction, seed, fold});
    }
  return grid;
}

ExperimentConfig point_config(const ExperimentConfig& base, const GridPoint& p) {
  ExperimentConfig c = base;
  c.train.method = p.method;
  c.train.tau = p.tau;
  c.train.seed = p.seed;
  c.train.fold = p.fold;
  c.source_fraction = p.fraction;
  return c;
}

int AblationResult::failures() const {
  return static_cast<int>(std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return !o.ok; }));
}

namespace {

Json point_json(const GridPoint& p) {
  return Json{{"method", to_string(p.method)}, {"tau", p.tau}, {"fraction", p.fraction}, {"seed", p.seed},
              {"fold", p.fold}};
}

bool completed_run(const fs::path& run_dir, const std::string& hash) {
  const fs::path manifest = run_dir / "manifest.json";
  if (!fs::exists(manifest)) return false;
  const Json m = read_json_file(manifest);
  return m.value("config_hash", std::string{}) == hash && m.value("status", std::string{}) == "complete";
}

}  // namespace

AblationResult run_ablation(const AblationSpec& spec, const fs::path& sweep_dir, const RunOptions& options) {
  validate(spec.base);
  const auto grid = expand_grid(spec);
  for (const auto& p : grid) validate(point_config(spec.base, p));

  AblationResult result;
  result.sweep_dir = sweep_dir;
  fs::create_directories(sweep_dir / "runs");

  // Every grid point shares one dataset; fractions and folds select from it.
  std::optional<LoadedData> data;
  std::string data_error;
  try {
    data = load_data(spec.base);
  } catch (const std::exception& e) {
    data_error = e.what();
  }

  auto record = [&] {
    Json points = Json::array();
    for (const auto& o : result.outcomes) {
      Json p = point_json(o.point);
      p["run_dir"] = fs::relative(o.run_dir, sweep_dir).generic_string();
      p["ok"] = o.ok;
      if (!o.ok) p["error"] = o.error;
      points.push_back(p);
    }
    write_text(sweep_dir / "sweep.json",
               Json{{"base_config", full_json(spec.base)}, {"points", points}}.dump(2) + "\n");
  };

  for (std::size_t i = 0; i < grid.size(); ++i) {
    const ExperimentConfig c = point_config(spec.base, grid[i]);
    PointOutcome outcome{grid[i], sweep_dir / "runs" / run_name(c), false, {}};
    if (options.log)
      options.log("[" + std::to_string(i + 1) + "/" + std::to_string(grid.size()) + "] " + run_name(c));
    if (!data) {
      outcome.error = "dataset could not be loaded: " + data_error;
    } else if (spec.reuse_completed && completed_run(outcome.run_dir, experiment_hash(c))) {
      outcome.ok = true;
    } else {
      try {
        RunOptions point_options = options;
        point_options.max_epochs_this_call.reset();
        outcome.ok = run_experiment(c, outcome.run_dir, point_options, &*data).complete;
        if (!outcome.ok) outcome.error = "run stopped before its final epoch";
      } catch (const std::exception& e) {
        outcome.error = e.what();
      }
    }
    if (!outcome.ok && options.log) options.log("  failed: " + outcome.error);
    result.outcomes.push_back(outcome);
    record();
  }

  std::vector<RunSummary> runs;
  std::vector<ExpectedPoint> missing;
  for (const auto& o : result.outcomes) {
    if (o.ok) {
      try {
        runs.push_back(summarize_run(o.run_dir));
        continue;
      } catch (const std::exception& e) {
        missing.push_back({o.point.method, o.point.tau, o.point.fraction, o.point.seed, o.point.fold,
                           std::string("unreadable run: ") + e.what()});
        continue;
      }
    }
    missing.push_back({o.point.method, o.point.tau, o.point.fraction, o.point.seed, o.point.fold, o.error});
  }
  sweep_report(runs, missing, sweep_dir / "report");
  return result;
}

}  // namespace tist
