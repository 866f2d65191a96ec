#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace oracle {

namespace {

int first_max(const std::vector<double>& p) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(p.size()); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

double peak(const std::vector<double>& p) { return p[first_max(p)]; }

}  // namespace

std::optional<int> naive_tist_pixel(const std::vector<double>& plain, const std::vector<double>& transformed,
                                    double tau) {
  const bool confident_plain = peak(plain) > tau;
  const bool confident_transformed = peak(transformed) > tau;
  if (confident_plain && confident_transformed) return first_max(transformed);
  return std::nullopt;
}

std::optional<int> naive_st_pixel(const std::vector<double>& transformed, double tau) {
  if (peak(transformed) > tau) return first_max(transformed);
  return std::nullopt;
}

double set_dice(const PixelSet& pred, const PixelSet& gt) {
  if (pred.empty() && gt.empty()) return 1.0;
  PixelSet both;
  std::set_intersection(pred.begin(), pred.end(), gt.begin(), gt.end(), std::inserter(both, both.begin()));
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(pred.size() + gt.size());
}

std::vector<double> naive_softmax(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out;
  double total = 0.0;
  for (double v : logits) {
    out.push_back(std::exp(v - m));
    total += out.back();
  }
  for (double& v : out) v /= total;
  return out;
}

double naive_ramp(double epoch, double total_epochs) { return std::exp(-5.0 * (1.0 - epoch / total_epochs)); }

OracleReport fd_gradient_check(const std::function<double(const std::vector<double>&)>& loss,
                               const std::vector<double>& params, const std::vector<double>& analytic, double eps,
                               double floor, const std::vector<std::size_t>* coordinates) {
  if (analytic.size() != params.size()) throw std::runtime_error("fd_gradient_check: gradient size mismatch");
  std::vector<std::size_t> all;
  if (!coordinates) {
    for (std::size_t i = 0; i < params.size(); ++i) all.push_back(i);
    coordinates = &all;
  }
  OracleReport report;
  std::vector<double> probe = params;
  for (std::size_t i : *coordinates) {
    probe[i] = params[i] + eps;
    const double up = loss(probe);
    probe[i] = params[i] - eps;
    const double down = loss(probe);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("fd_gradient_check: non-finite loss probing coordinate " + std::to_string(i));
    const double numeric = (up - down) / (2.0 * eps);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
    ++report.n_cases;
  }
  return report;
}

double naive_supervised_loss(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                             int num_classes, double ce_weight, double dice_weight, double smooth) {
  double ce = 0.0;
  int n = 0;
  std::vector<double> inter(num_classes, 0.0), psum(num_classes, 0.0), gsum(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) continue;
    ce -= std::log(std::max(probs[i][y], 1e-12));
    ++n;
    for (int c = 0; c < num_classes; ++c) {
      const double g = c == y ? 1.0 : 0.0;
      inter[c] += probs[i][c] * g;
      psum[c] += probs[i][c];
      gsum[c] += g;
    }
  }
  if (n == 0) return 0.0;
  double dice = 0.0;
  for (int c = 0; c < num_classes; ++c) dice += (2.0 * inter[c] + smooth) / (psum[c] + gsum[c] + smooth);
  dice /= num_classes;
  return ce_weight * ce / n - dice_weight * std::log(dice);
}

double naive_pseudo_loss(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                         int num_classes) {
  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) continue;
    total -= std::log(std::max(probs[i][labels[i]], 1e-12));
    ++n;
  }
  return n == 0 ? 0.0 : total / n;
}

}  // namespace oracle
