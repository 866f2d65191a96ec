// Prints one PASS/FAIL line per acceptance criterion and exits non-zero when
// any selected criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles/oracles.hpp"
#include "tist/eval_report.hpp"
#include "tist/experiment.hpp"
#include "tist/losses.hpp"
#include "tist/pseudolabel.hpp"
#include "tist/report.hpp"
#include "tist/trainer.hpp"

namespace fs = std::filesystem;
using namespace tist;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Class distribution for one pixel. Every fourth pixel puts exactly tau on
// its peak to exercise the strict threshold.
std::vector<double> random_pixel(std::mt19937_64& gen, int classes, double tau) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(classes);
  if (u(gen) < 0.25) {
    const int peak = static_cast<int>(u(gen) * classes) % classes;
    for (int c = 0; c < classes; ++c) p[c] = c == peak ? tau : (1.0 - tau) / (classes - 1);
    return p;
  }
  const double sharpness = 0.5 + 6.0 * u(gen);
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0;
  for (auto& v : p) {
    v = std::exp(sharpness * normal(gen));
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

Tensor<double> pack(const std::vector<std::vector<double>>& pixels, int classes) {
  Tensor<double> t(1, classes, 1, static_cast<int>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i)
    for (int c = 0; c < classes; ++c) t.at(0, c, 0, static_cast<int>(i)) = pixels[i][c];
  return t;
}

Outcome criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 gen(1);
  int disagreements = 0, pixels = 0, retained = 0;
  for (int classes : {2, 3, 5})
    for (double tau : {0.6, 0.85, 0.95}) {
      const int n = 10000 / 9 + 1;
      std::vector<std::vector<double>> plain, transformed;
      for (int i = 0; i < n; ++i) {
        plain.push_back(random_pixel(gen, classes, tau));
        transformed.push_back(random_pixel(gen, classes, tau));
      }
      const LabelBatch labels = transformation_invariant_labels(pack(plain, classes), pack(transformed, classes), tau);
      for (int i = 0; i < n; ++i) {
        const auto expected = oracle::naive_tist_pixel(plain[i], transformed[i], tau);
        const std::int32_t want = expected ? *expected : kIgnoreIndex;
        disagreements += labels.labels[i] != want;
        retained += expected.has_value();
        ++pixels;
      }
    }
  const double t = seconds_since(start);
  return {disagreements == 0 && pixels >= 10000 && t < 10,
          std::to_string(pixels) + " pixels, " + std::to_string(retained) + " retained, " +
              std::to_string(disagreements) + " disagreements, " + fmt("%.2f s", t)};
}

Outcome criterion2() {
  const auto start = Clock::now();
  std::mt19937_64 gen(2);
  int violations = 0, strict_pairs = 0;
  const int classes = 3, side = 8;
  for (int pair = 0; pair < 1000; ++pair) {
    const double tau = 0.55 + 0.4 * (pair % 10) / 10.0;
    std::vector<std::vector<double>> plain, transformed;
    for (int i = 0; i < side * side; ++i) {
      plain.push_back(random_pixel(gen, classes, tau));
      transformed.push_back(random_pixel(gen, classes, tau));
    }
    ConfidenceMask ti;
    transformation_invariant_labels(pack(plain, classes), pack(transformed, classes), tau, &ti);
    const ConfidenceMask st = confidence_mask(pack(transformed, classes), tau);
    bool strict = false;
    for (std::size_t i = 0; i < ti.mask.size(); ++i) {
      violations += ti.mask[i] > st.mask[i];
      strict |= ti.mask[i] < st.mask[i];
    }
    strict_pairs += strict;
  }
  // Constructed case: the views disagree, the transformed view is confident.
  const Tensor<double> plain = pack({{0.6, 0.2, 0.2}, {0.95, 0.03, 0.02}}, classes);
  const Tensor<double> transformed = pack({{0.05, 0.9, 0.05}, {0.96, 0.02, 0.02}}, classes);
  ConfidenceMask ti;
  const LabelBatch labels = transformation_invariant_labels(plain, transformed, 0.85, &ti);
  const ConfidenceMask st = confidence_mask(transformed, 0.85);
  const bool constructed = st.mask == std::vector<std::uint8_t>{1, 1} && ti.mask == std::vector<std::uint8_t>{0, 1} &&
                           labels.labels == std::vector<std::int32_t>{kIgnoreIndex, 0};
  const double t = seconds_since(start);
  return {violations == 0 && constructed && t < 10,
          "1000 pairs, " + std::to_string(violations) + " subset violations, strict in " +
              std::to_string(strict_pairs) + " pairs, constructed case " + (constructed ? "strict" : "wrong") + ", " +
              fmt("%.2f s", t)};
}

Outcome criterion3() {
  const int total = 30;
  const RampSchedule schedule{total, false};
  double worst = 0;
  for (double e : {0.0, total / 2.0, static_cast<double>(total)})
    worst = std::max(worst, std::abs(lambda_at(schedule, e) - std::exp(-5.0 * (1.0 - e / total))));
  const bool spot = std::abs(lambda_at(schedule, 0) - std::exp(-5.0)) < 1e-12 &&
                    std::abs(lambda_at(schedule, total / 2.0) - std::exp(-2.5)) < 1e-12;
  bool increasing = true;
  for (int k = 1; k <= 3000; ++k)
    increasing &= lambda_at(schedule, total * k / 3000.0) > lambda_at(schedule, total * (k - 1) / 3000.0);
  const bool unit = lambda_at(schedule, total) == 1.0;
  return {worst < 1e-12 && spot && increasing && unit,
          "max error " + fmt("%.3g", worst) + ", lambda(0)=" + fmt("%.6f", lambda_at(schedule, 0)) +
              ", lambda(E/2)=" + fmt("%.6f", lambda_at(schedule, total / 2.0)) + ", lambda(E)=" +
              fmt("%.17g", lambda_at(schedule, total)) + (increasing ? ", strictly increasing" : ", NOT increasing")};
}

PreparedBatch<double> gradient_batch(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PreparedBatch<double> b;
  b.source_images = Tensor<double>(2, 3, 8, 8);
  b.target_plain = Tensor<double>(2, 3, 8, 8);
  b.target_transformed = Tensor<double>(2, 3, 8, 8);
  for (auto* t : {&b.source_images, &b.target_plain, &b.target_transformed})
    for (auto& v : t->values()) v = u(gen);
  b.source_labels = LabelBatch(2, 8, 8);
  for (auto& l : b.source_labels.labels) l = u(gen) < 0.35 ? 1 : 0;
  b.source_labels.labels[5] = kIgnoreIndex;
  return b;
}

Outcome criterion4() {
  const auto start = Clock::now();
  SegmentationModel<double> model(ModelConfig{3, 2, 4, 2, 8, 8, 4});
  std::mt19937_64 gen(4);
  // Zero biases put dead units exactly on the ReLU kink; move them off it.
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& v : model.parameters()) v += jitter(gen);
  auto batch = gradient_batch(gen);
  const double tau = 0.52, lambda = 0.7;
  const auto r = evaluate_objective(model, batch, Method::tist, tau, lambda, LossWeights{});

  // The mask and labels are constants of differentiation, so the numerical
  // derivative holds them fixed.
  const auto loss_of = [&](const std::vector<double>& params) {
    SegmentationModel<double> m = model;
    std::copy(params.begin(), params.end(), m.parameters().begin());
    return evaluate_objective(m, batch, Method::tist, tau, lambda, LossWeights{}, &r.pseudo_labels, false)
        .metrics.overall_loss;
  };
  const std::vector<double> params(model.parameters().begin(), model.parameters().end());
  const auto fd = oracle::fd_gradient_check(loss_of, params, r.grad, 1e-5, 1e-6);

  // Perturb the plain view by an amount that keeps the mask unchanged: the
  // gradient must not move.
  std::normal_distribution<double> noise(0.0, 1e-7);
  auto perturbed = batch;
  for (auto& v : perturbed.target_plain.values()) v += noise(gen);
  const auto rp = evaluate_objective(model, perturbed, Method::tist, tau, lambda, LossWeights{});
  double moved = 0;
  for (std::size_t k = 0; k < r.grad.size(); ++k) moved = std::max(moved, std::abs(r.grad[k] - rp.grad[k]));
  const bool same_mask = rp.mask == r.mask;
  const double t = seconds_since(start);
  return {model.parameter_count() <= 10000 && r.mask.count() > 0 && fd.max_rel_error < 1e-4 && same_mask &&
              moved <= 1e-10 && t < 120,
          std::to_string(model.parameter_count()) + " params, " + std::to_string(r.mask.count()) +
              " retained pixels, max rel error " + fmt("%.3g", fd.max_rel_error) + ", plain-view perturbation moved " +
              "gradients by " + fmt("%.3g", moved) + (same_mask ? "" : " (mask changed)") + ", " + fmt("%.2f s", t)};
}

Outcome criterion5() {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> value(0, 9);
  int mismatches = 0, empty_pairs = 0;
  for (int t = 0; t < 1000; ++t) {
    LabelMap p(8, 8), g(8, 8);
    const int density = t % 6;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      p.labels[i] = value(gen) < density ? 1 : 0;
      g.labels[i] = value(gen) < density ? 1 : 0;
    }
    oracle::PixelSet ps, gs;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (p.at(y, x) == 1) ps.insert({y, x});
        if (g.at(y, x) == 1) gs.insert({y, x});
      }
    empty_pairs += ps.empty() && gs.empty();
    mismatches += dice_score(p, g, 1) != oracle::set_dice(ps, gs);
  }
  return {mismatches == 0 && empty_pairs > 0, "1000 pairs, " + std::to_string(empty_pairs) + " empty-empty, " +
                                                  std::to_string(mismatches) + " mismatches"};
}

Outcome criterion6() {
  const double a = relative_dice(37.69, 15.42), b = relative_dice(50.93, 22.87);
  const std::string sa = fmt("%+.2f", a), sb = fmt("%+.2f", b);
  return {sa == "+22.27" && sb == "+28.06", "(37.69, 15.42) -> " + sa + ", (50.93, 22.87) -> " + sb};
}

ExperimentConfig small_experiment() {
  auto c = profile_defaults(Profile::desk);
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{{"data.num_source", "16"},
                                                                             {"data.num_target", "16"},
                                                                             {"data.height", "32"},
                                                                             {"data.width", "32"},
                                                                             {"train.epochs", "3"},
                                                                             {"train.base_width", "4"},
                                                                             {"train.levels", "3"},
                                                                             {"train.batch_source", "4"},
                                                                             {"train.batch_target", "4"}})
    set_option(c, k, v);
  return c;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream s(line);
  std::string cell;
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Outcome criterion8(const fs::path& out) {
  const auto start = Clock::now();
  AblationSpec spec;
  spec.base = small_experiment();
  spec.methods = {Method::st, Method::tist};
  spec.taus = {0.80, 0.85, 0.90, 0.95};
  fs::remove_all(out / "c8_a");
  fs::remove_all(out / "c8_b");
  const auto first = run_ablation(spec, out / "c8_a");
  const auto second = run_ablation(spec, out / "c8_b");

  // Each results.csv row must equal the final epoch of its metrics stream.
  std::ifstream csv(out / "c8_a" / "report" / "results.csv");
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  int rows = 0, mismatches = 0;
  while (std::getline(csv, line)) {
    const auto cells = split_csv(line);
    const fs::path run = out / "c8_a" / "runs" / cells[col["run"]];
    const History h = read_metrics(run / "metrics.jsonl");
    if (h.epochs.empty()) {
      ++mismatches;
      continue;
    }
    const auto& last = h.epochs.back();
    mismatches += std::stod(cells[col["target_dice"]]) != last.target_dice;
    mismatches += std::stod(cells[col["target_dice_pooled"]]) != last.target_dice_pooled;
    mismatches += std::stod(cells[col["source_dice"]]) != last.source_dice;
    ++rows;
  }
  bool identical = true;
  for (const char* f : {"results.csv", "summary.csv", "report.md", "dice_vs_tau.svg"})
    identical &= slurp(out / "c8_a" / "report" / f) == slurp(out / "c8_b" / "report" / f);
  const double t = seconds_since(start);
  return {first.failures() == 0 && second.failures() == 0 && rows == 8 && mismatches == 0 && identical,
          std::to_string(rows) + " table rows, " + std::to_string(mismatches) + " mismatches against metrics, rerun " +
              (identical ? "bitwise identical" : "DIFFERS") + ", " + fmt("%.1f s", t)};
}

Outcome criterion9(const fs::path& out) {
  const auto start = Clock::now();
  const auto c = small_experiment();
  for (const char* d : {"c9_a", "c9_b", "c9_resume"}) fs::remove_all(out / d);
  const auto a = run_experiment(c, out / "c9_a");
  const auto b = run_experiment(c, out / "c9_b");
  const bool same = a.history == b.history &&
                    slurp(out / "c9_a" / "metrics.jsonl") == slurp(out / "c9_b" / "metrics.jsonl");
  RunOptions partial;
  partial.max_epochs_this_call = 1;
  run_experiment(c, out / "c9_resume", partial);
  const auto resumed = resume_experiment(out / "c9_resume" / "last.ckpt");
  const bool resume_exact =
      resumed.history == a.history && slurp(out / "c9_resume" / "metrics.jsonl") == slurp(out / "c9_a" / "metrics.jsonl");
  const double t = seconds_since(start);
  return {same && resume_exact,
          std::string("identical-seed runs ") + (same ? "identical" : "DIFFER") + ", resumed run " +
              (resume_exact ? "metric-exact" : "DIFFERS") + " over " + std::to_string(a.history.steps.size()) +
              " steps, " + fmt("%.1f s", t)};
}

Outcome criterion7(const fs::path& out, bool reuse, bool quiet) {
  const auto start = Clock::now();
  AblationSpec spec;
  spec.base = profile_defaults(Profile::desk);
  spec.methods = {Method::supervised, Method::st, Method::tist};
  spec.taus = {0.80, 0.85};
  spec.seeds = {0, 1, 2};
  spec.reuse_completed = reuse;
  RunOptions options;
  if (!quiet) options.log = [](const std::string& s) { std::cerr << s << std::endl; };
  const auto result = run_ablation(spec, out / "c7", options);
  const double t = seconds_since(start);
  if (result.failures() > 0)
    return {false, std::to_string(result.failures()) + " runs failed, see " + (out / "c7" / "sweep.json").string()};

  std::map<std::pair<int, double>, std::vector<double>> target;
  std::vector<double> sup_source, sup_target;
  for (const auto& o : result.outcomes) {
    const auto s = summarize_run(o.run_dir);
    target[{static_cast<int>(s.method), s.method == Method::supervised ? 0.0 : s.tau}].push_back(s.target_dice);
    if (s.method == Method::supervised) {
      sup_source.push_back(s.source_dice);
      sup_target.push_back(s.target_dice);
    }
  }
  const auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  const double sup_gap = 100 * (mean(sup_source) - mean(sup_target));
  const double sup = mean(target[{static_cast<int>(Method::supervised), 0.0}]);
  bool b = true, c = true;
  std::string detail = "supervised source-target gap " + fmt("%.2f pp", sup_gap) + ", supervised target " +
                       fmt("%.4f", sup);
  for (double tau : {0.80, 0.85}) {
    const double st = mean(target[{static_cast<int>(Method::st), tau}]);
    const double ti = mean(target[{static_cast<int>(Method::tist), tau}]);
    b &= ti >= st;
    c &= 100 * (ti - sup) >= 5;
    detail += "; tau " + fmt("%.2f", tau) + ": ST " + fmt("%.4f", st) + ", TI-ST " + fmt("%.4f", ti);
  }
  const bool a = sup_gap >= 10;
  detail += std::string("; (a) ") + (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " + (c ? "ok" : "no") +
            ", " + fmt("%.1f min", t / 60) + (reuse ? " (completed runs reused)" : "");
  return {a && b && c && (reuse || t < 45 * 60), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string out = "acceptance-output";
  bool reuse = false, quiet = false;
  app.add_option("criteria", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("-o,--out", out, "Scratch directory for training runs");
  app.add_flag("--reuse", reuse, "Reuse completed runs of the long experiment");
  app.add_flag("-q,--quiet", quiet, "No progress output");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  const std::map<int, std::function<Outcome()>> checks{
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, [&] { return criterion7(out_dir, reuse, quiet); }},
      {8, [&] { return criterion8(out_dir); }},
      {9, [&] { return criterion9(out_dir); }},
  };
  bool all = true;
  for (int k : selected) {
    Outcome o;
    try {
      o = checks.at(k)();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
