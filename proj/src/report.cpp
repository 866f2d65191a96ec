#include "tist/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "tist/augment.hpp"
#include "tist/error.hpp"
#include "tist/experiment.hpp"
#include "tist/png_io.hpp"
#include "tist/pseudolabel.hpp"

namespace fs = std::filesystem;

namespace tist {

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 2) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string signed_fixed(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%+.2f", v);
  return buf;
}

// Free text in one CSV cell: separators and line breaks become spaces.
std::string csv_text(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ' ';
  return s;
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string method_label(Method m) {
  switch (m) {
    case Method::supervised:
      return "Supervised";
    case Method::st:
      return "ST";
    case Method::tist:
      return "TI-ST";
  }
  return "?";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

auto point_key(Method m, double tau, double fraction) { return std::make_tuple(fraction, static_cast<int>(m), tau); }

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
};

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series, const std::string& footnote) {
  const double W = 640, H = 420, left = 70, right = 170, top = 40, bottom = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-12) xmin -= 0.05, xmax += 0.05;
  ymin = std::max(0.0, ymin - 0.05);
  ymax = std::min(1.0, ymax + 0.05);
  if (ymax - ymin < 0.1) ymax = std::min(1.0, ymin + 0.1), ymin = ymax - 0.1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return top + (1 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 5.0, xv = xmin + (xmax - xmin) * i / 5.0;
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << Y(yv) << "\" y2=\"" << Y(yv)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fixed(yv, 3)
       << "</text>\n";
    os << "<text x=\"" << X(xv) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fixed(xv, 3)
       << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 22 << "\" text-anchor=\"middle\">" << svg_escape(xlabel)
     << "</text>\n";
  os << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << svg_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    if (s.points.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\""
       << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (auto [x, y] : s.points) os << X(x) << ',' << Y(y) << ' ';
    os << "\"/>\n";
    for (auto [x, y] : s.points)
      os << "<circle cx=\"" << X(x) << "\" cy=\"" << Y(y) << "\" r=\"3.5\" fill=\"" << s.color << "\"/>\n";
    const double ly = top + 16 + 20.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
       << "/>\n";
    os << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << svg_escape(s.name) << "</text>\n";
  }
  if (!footnote.empty())
    os << "<text x=\"" << left << "\" y=\"" << H - 6 << "\" fill=\"#b00\">" << svg_escape(footnote) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

const char* color_of(Method m) {
  switch (m) {
    case Method::supervised:
      return "#777777";
    case Method::st:
      return "#1f77b4";
    case Method::tist:
      return "#d62728";
  }
  return "#000";
}

}  // namespace

RunSummary summarize_run(const fs::path& run_dir) {
  const ExperimentConfig c = read_run_config(run_dir);
  const History h = read_metrics(run_dir / "metrics.jsonl");
  RunSummary s;
  s.run_dir = run_dir;
  s.config_hash = experiment_hash(c);
  s.method = c.train.method;
  s.tau = c.train.tau;
  s.fraction = c.source_fraction;
  s.seed = c.train.seed;
  s.fold = c.train.fold;
  s.epochs_total = c.train.epochs;
  s.epochs_done = static_cast<int>(h.epochs.size());
  if (!h.epochs.empty()) {
    const auto& last = h.epochs.back();
    s.target_dice = last.target_dice;
    s.target_dice_pooled = last.target_dice_pooled;
    s.source_dice = last.source_dice;
    s.best_target_dice = last.target_dice;
    for (const auto& e : h.epochs) s.best_target_dice = std::max(s.best_target_dice, e.target_dice);
  }
  return s;
}

std::vector<AggregatePoint> aggregate_runs(const std::vector<RunSummary>& runs,
                                           const std::vector<ExpectedPoint>& missing) {
  std::map<std::tuple<double, int, double>, std::vector<const RunSummary*>> groups;
  std::map<std::tuple<double, int, double>, int> missing_count;
  for (const auto& r : runs) groups[point_key(r.method, r.tau, r.fraction)].push_back(&r);
  for (const auto& m : missing) {
    groups[point_key(m.method, m.tau, m.fraction)];
    ++missing_count[point_key(m.method, m.tau, m.fraction)];
  }
  std::vector<AggregatePoint> out;
  for (const auto& [key, members] : groups) {
    AggregatePoint a;
    a.fraction = std::get<0>(key);
    a.method = static_cast<Method>(std::get<1>(key));
    a.tau = std::get<2>(key);
    a.n_runs = static_cast<int>(members.size());
    a.n_missing = missing_count[key];
    if (!members.empty()) {
      for (const auto* r : members) {
        a.mean_target_dice += r->target_dice;
        a.mean_target_dice_pooled += r->target_dice_pooled;
        a.mean_source_dice += r->source_dice;
      }
      const double n = static_cast<double>(members.size());
      a.mean_target_dice /= n;
      a.mean_target_dice_pooled /= n;
      a.mean_source_dice /= n;
      if (members.size() > 1) {
        double ss = 0;
        for (const auto* r : members) ss += (r->target_dice - a.mean_target_dice) * (r->target_dice - a.mean_target_dice);
        a.std_target_dice = std::sqrt(ss / (n - 1));
      }
    }
    out.push_back(a);
  }
  for (auto& a : out) {
    if (a.method == Method::supervised || a.n_runs == 0) continue;
    const Method other = a.method == Method::st ? Method::tist : Method::st;
    for (const auto& b : out)
      if (b.method == other && b.tau == a.tau && b.fraction == a.fraction && b.n_runs > 0) {
        const double tist = a.method == Method::tist ? a.mean_target_dice : b.mean_target_dice;
        const double st = a.method == Method::st ? a.mean_target_dice : b.mean_target_dice;
        a.gap = tist - st;
      }
  }
  return out;
}

std::string relative_dice_table(const std::vector<TaskColumn>& tasks) {
  std::ostringstream os;
  os << "| Method |";
  for (const auto& t : tasks) os << ' ' << t.name << " |";
  os << " Avg. Rel. |\n|---|";
  for (std::size_t i = 0; i <= tasks.size(); ++i) os << "---|";
  os << '\n';
  const std::array<Method, 3> methods{Method::supervised, Method::st, Method::tist};
  for (Method m : methods) {
    os << "| " << method_label(m) << " |";
    double rel_total = 0;
    int rel_count = 0;
    for (const auto& t : tasks) {
      const std::optional<double>& v = m == Method::supervised ? t.supervised : m == Method::st ? t.st : t.tist;
      if (!v) {
        os << " missing |";
        continue;
      }
      os << ' ' << fixed(*v);
      if (m != Method::supervised && t.supervised) {
        const double rel = relative_dice(*v, *t.supervised);
        rel_total += rel;
        ++rel_count;
        os << " (" << signed_fixed(rel) << ')';
      }
      os << " |";
    }
    if (m == Method::supervised || rel_count == 0) {
      os << " |\n";
    } else {
      os << ' ' << signed_fixed(rel_total / rel_count) << " |\n";
    }
  }
  return os.str();
}

SweepReport sweep_report(const std::vector<RunSummary>& runs_in, const std::vector<ExpectedPoint>& missing_in,
                         const fs::path& out_dir) {
  fs::create_directories(out_dir);
  SweepReport report;
  report.runs = runs_in;
  report.missing = missing_in;
  std::sort(report.runs.begin(), report.runs.end(), [](const RunSummary& a, const RunSummary& b) {
    return std::make_tuple(a.fraction, static_cast<int>(a.method), a.tau, a.seed, a.fold) <
           std::make_tuple(b.fraction, static_cast<int>(b.method), b.tau, b.seed, b.fold);
  });
  // An unfinished run counts as missing; its partial numbers stay in results.csv.
  std::vector<RunSummary> finished;
  for (const auto& r : report.runs) {
    if (r.complete()) {
      finished.push_back(r);
    } else {
      report.missing.push_back({r.method, r.tau, r.fraction, r.seed, r.fold,
                                "incomplete: " + std::to_string(r.epochs_done) + "/" +
                                    std::to_string(r.epochs_total) + " epochs"});
    }
  }
  report.aggregates = aggregate_runs(finished, report.missing);

  {
    std::ostringstream os;
    os << "method,tau,fraction,seed,fold,status,epochs_done,epochs_total,target_dice,target_dice_pooled,source_dice,"
          "best_target_dice,config_hash,run,problem\n";
    for (const auto& r : report.runs)
      os << to_string(r.method) << ',' << exact(r.tau) << ',' << exact(r.fraction) << ',' << r.seed << ',' << r.fold
         << ',' << (r.complete() ? "complete" : "incomplete") << ',' << r.epochs_done << ',' << r.epochs_total << ','
         << exact(r.target_dice) << ',' << exact(r.target_dice_pooled) << ',' << exact(r.source_dice) << ','
         << exact(r.best_target_dice) << ',' << r.config_hash << ',' << r.run_dir.filename().string() << ",\n";
    for (const auto& m : missing_in)
      os << to_string(m.method) << ',' << exact(m.tau) << ',' << exact(m.fraction) << ',' << m.seed << ',' << m.fold
         << ",missing,,,,,,,,," << csv_text(m.problem) << '\n';
    write_file(out_dir / "results.csv", os.str());
    report.files.push_back(out_dir / "results.csv");
  }
  {
    std::ostringstream os;
    os << "method,tau,fraction,n_runs,n_missing,mean_target_dice,std_target_dice,mean_target_dice_pooled,"
          "mean_source_dice,gap_tist_minus_st\n";
    for (const auto& a : report.aggregates) {
      os << to_string(a.method) << ',' << exact(a.tau) << ',' << exact(a.fraction) << ',' << a.n_runs << ','
         << a.n_missing << ',';
      if (a.n_runs > 0) {
        os << exact(a.mean_target_dice) << ',' << exact(a.std_target_dice) << ',' << exact(a.mean_target_dice_pooled)
           << ',' << exact(a.mean_source_dice);
      } else {
        os << ",,,";
      }
      os << ',' << (a.gap ? exact(*a.gap) : "") << '\n';
    }
    write_file(out_dir / "summary.csv", os.str());
    report.files.push_back(out_dir / "summary.csv");
  }

  std::set<double> fractions;
  for (const auto& a : report.aggregates) fractions.insert(a.fraction);
  const double full = fractions.empty() ? 1.0 : *fractions.rbegin();

  std::ostringstream md;
  md << "# Sweep report\n\n";
  md << "Target Dice is the per-image foreground Dice on the held-out target fold after the final epoch, "
        "averaged over seeds and folds. An image in which a class is absent from both prediction and ground "
        "truth scores 1 for that class.\n\n";
  md << "| Method | tau | labeled fraction | runs | target Dice | std | pooled | source Dice | TI-ST - ST |\n";
  md << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& a : report.aggregates) {
    md << "| " << method_label(a.method) << " | " << (a.method == Method::supervised ? "-" : short_number(a.tau))
       << " | " << short_number(a.fraction) << " | " << a.n_runs;
    if (a.n_missing) md << " (" << a.n_missing << " missing)";
    if (a.n_runs > 0) {
      md << " | " << fixed(a.mean_target_dice, 4) << " | " << fixed(a.std_target_dice, 4) << " | "
         << fixed(a.mean_target_dice_pooled, 4) << " | " << fixed(a.mean_source_dice, 4);
    } else {
      md << " | missing | | | ";
    }
    md << " | " << (a.gap ? signed_fixed(*a.gap * 100.0) + " pp" : "") << " |\n";
  }

  // Relative Dice in percent, one column per tau at the full labeled set.
  std::optional<double> supervised;
  std::map<double, TaskColumn> columns;
  for (const auto& a : report.aggregates) {
    if (a.fraction != full || a.n_runs == 0) continue;
    if (a.method == Method::supervised) {
      supervised = a.mean_target_dice * 100.0;
      continue;
    }
    auto& col = columns[a.tau];
    col.name = "tau " + short_number(a.tau);
    (a.method == Method::st ? col.st : col.tist) = a.mean_target_dice * 100.0;
  }
  if (!columns.empty()) {
    std::vector<TaskColumn> tasks;
    for (auto& [tau, col] : columns) {
      col.supervised = supervised;
      tasks.push_back(col);
    }
    md << "\n## Dice (%) with relative Dice over Supervised\n\n" << relative_dice_table(tasks);
  }

  if (!report.missing.empty()) {
    md << "\n## Missing grid points\n\n";
    for (const auto& m : report.missing)
      md << "- " << method_label(m.method) << " tau " << short_number(m.tau) << " fraction "
         << short_number(m.fraction) << " seed " << m.seed << " fold " << m.fold << ": " << m.problem << '\n';
  }

  // Dice against tau at the full labeled set.
  {
    std::vector<Series> series;
    std::set<double> taus;
    for (const auto& a : report.aggregates)
      if (a.method != Method::supervised) taus.insert(a.tau);
    for (Method m : {Method::st, Method::tist}) {
      Series s{method_label(m), color_of(m), {}};
      for (const auto& a : report.aggregates)
        if (a.method == m && a.fraction == full && a.n_runs > 0) s.points.emplace_back(a.tau, a.mean_target_dice);
      if (!s.points.empty()) series.push_back(s);
    }
    if (supervised && !taus.empty()) {
      Series s{"Supervised", color_of(Method::supervised), {}, true};
      s.points = {{*taus.begin(), *supervised / 100.0}, {*taus.rbegin(), *supervised / 100.0}};
      series.push_back(s);
    }
    int gaps = 0;
    for (const auto& m : report.missing)
      if (m.fraction == full && m.method != Method::supervised) ++gaps;
    if (!series.empty()) {
      write_file(out_dir / "dice_vs_tau.svg",
                 line_plot("Target Dice vs. confidence threshold", "tau", "target Dice", series,
                           gaps ? std::to_string(gaps) + " grid point(s) missing" : ""));
      report.files.push_back(out_dir / "dice_vs_tau.svg");
      md << "\n![Dice vs tau](dice_vs_tau.svg)\n";
    }
  }

  // Dice against labeled fraction, at the tau closest to 0.85.
  if (fractions.size() > 1) {
    std::set<double> taus;
    for (const auto& a : report.aggregates)
      if (a.method != Method::supervised) taus.insert(a.tau);
    const double tau = taus.empty() ? 0.0
                                    : *std::min_element(taus.begin(), taus.end(), [](double a, double b) {
                                        return std::abs(a - 0.85) < std::abs(b - 0.85);
                                      });
    std::vector<Series> series;
    for (Method m : {Method::supervised, Method::st, Method::tist}) {
      Series s{method_label(m), color_of(m), {}, m == Method::supervised};
      for (const auto& a : report.aggregates)
        if (a.method == m && (m == Method::supervised || a.tau == tau) && a.n_runs > 0)
          s.points.emplace_back(a.fraction, a.mean_target_dice);
      if (!s.points.empty()) series.push_back(s);
    }
    write_file(out_dir / "dice_vs_fraction.svg",
               line_plot("Target Dice vs. labeled source fraction (tau " + short_number(tau) + ")",
                         "labeled fraction", "target Dice", series, ""));
    report.files.push_back(out_dir / "dice_vs_fraction.svg");
    md << "\n![Dice vs labeled fraction](dice_vs_fraction.svg)\n";
  }

  write_file(out_dir / "report.md", md.str());
  report.files.push_back(out_dir / "report.md");
  return report;
}

void dump_pseudo_labels(const SegmentationModel<float>& model, const std::vector<const Image*>& images,
                        const std::vector<std::string>& ids, Method method, double tau, const AugmentConfig& augment,
                        std::uint64_t seed, const fs::path& out_dir) {
  if (images.size() != ids.size()) throw InvalidInput("dump_pseudo_labels: image and id counts differ");
  check_tau(tau);
  fs::create_directories(out_dir);
  static constexpr std::array<std::array<float, 3>, 6> palette{
      {{0.1f, 0.1f, 0.1f}, {0.95f, 0.85f, 0.2f}, {0.9f, 0.3f, 0.3f}, {0.4f, 0.5f, 0.95f}, {0.6f, 0.9f, 0.4f},
       {0.85f, 0.5f, 0.9f}}};
  const std::array<float, 3> turquoise{64 / 255.f, 224 / 255.f, 208 / 255.f};
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng(Rng::derive(seed, {0xd0, i}));
    const Image& plain = *images[i];
    const Image transformed = apply_nonspatial(plain, sample_nonspatial(rng, augment));
    const auto p_plain = predict_probs(model, stack_images<float>(std::span<const Image>(&plain, 1)));
    const auto p_trans = predict_probs(model, stack_images<float>(std::span<const Image>(&transformed, 1)));
    ConfidenceMask mask;
    LabelBatch labels;
    if (method == Method::st) {
      mask = confidence_mask(p_trans, tau);
      labels = make_pseudo_labels(p_trans, mask);
    } else {
      labels = transformation_invariant_labels(p_plain, p_trans, tau, &mask);
    }
    const LabelMap pseudo = unstack_label(labels, 0);
    LabelMap mask_map(pseudo.height, pseudo.width);
    for (std::size_t k = 0; k < mask.mask.size(); ++k) mask_map.labels[k] = mask.mask[k] ? 255 : 0;

    Image overlay(3, pseudo.height, pseudo.width);
    const std::size_t hw = pseudo.labels.size();
    for (std::size_t k = 0; k < hw; ++k) {
      const auto v = pseudo.labels[k];
      const auto& col = v == kIgnoreIndex ? turquoise : palette[static_cast<std::size_t>(v) % palette.size()];
      for (int ch = 0; ch < 3; ++ch) overlay.pixels[ch * hw + k] = col[static_cast<std::size_t>(ch)];
    }
    write_png_image(out_dir / (ids[i] + "_plain.png"), plain);
    write_png_image(out_dir / (ids[i] + "_transformed.png"), transformed);
    write_png_labels(out_dir / (ids[i] + "_mask.png"), mask_map);
    write_png_image(out_dir / (ids[i] + "_pseudo.png"), overlay);
  }
}

}  // namespace tist
