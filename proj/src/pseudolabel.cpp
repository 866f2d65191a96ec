#include "tist/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tist {

void check_tau(double tau) {
  if (!(tau > 0.5 && tau < 1.0))
    throw InvalidConfig("confidence threshold tau must lie in (0.5, 1), got " + std::to_string(tau));
}

template <typename T>
ConfidenceMask confidence_mask(const Tensor<T>& probs, double tau) {
  check_tau(tau);
  ConfidenceMask out(probs.n(), probs.h(), probs.w());
  const std::size_t hw = probs.plane_size();
  for (int n = 0; n < probs.n(); ++n) {
    std::uint8_t* dst = out.mask.data() + n * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      T peak = probs.plane(n, 0)[i];
      for (int c = 1; c < probs.c(); ++c) peak = std::max(peak, probs.plane(n, c)[i]);
      dst[i] = static_cast<double>(peak) > tau ? 1 : 0;
    }
  }
  return out;
}

ConfidenceMask ensemble_mask(const ConfidenceMask& a, const ConfidenceMask& b) {
  if (!a.same_shape(b)) throw InvalidInput("ensemble_mask: masks differ in shape");
  ConfidenceMask out(a.n, a.height, a.width);
  for (std::size_t i = 0; i < a.mask.size(); ++i) out.mask[i] = static_cast<std::uint8_t>(a.mask[i] * b.mask[i]);
  return out;
}

template <typename T>
LabelBatch make_pseudo_labels(const Tensor<T>& probs, const ConfidenceMask& mask, std::int32_t ignore_index) {
  if (mask.n != probs.n() || mask.height != probs.h() || mask.width != probs.w())
    throw InvalidInput("make_pseudo_labels: mask and probability map differ in shape");
  LabelBatch out(probs.n(), probs.h(), probs.w(), ignore_index);
  const std::size_t hw = probs.plane_size();
  for (int n = 0; n < probs.n(); ++n) {
    const std::uint8_t* m = mask.mask.data() + n * hw;
    std::int32_t* dst = out.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      if (m[i] > 1) throw InvalidInput("make_pseudo_labels: mask is not binary");
      if (m[i] == 0) continue;
      int best = 0;
      for (int c = 1; c < probs.c(); ++c)
        if (probs.plane(n, c)[i] > probs.plane(n, best)[i]) best = c;
      dst[i] = best;
    }
  }
  return out;
}

template <typename T>
LabelBatch transformation_invariant_labels(const Tensor<T>& probs_plain, const Tensor<T>& probs_transformed,
                                           double tau, ConfidenceMask* mask_out, std::int32_t ignore_index) {
  if (!probs_plain.same_shape(probs_transformed))
    throw InvalidInput("transformation_invariant_labels: views differ in shape");
  ConfidenceMask mask = ensemble_mask(confidence_mask(probs_plain, tau), confidence_mask(probs_transformed, tau));
  LabelBatch labels = make_pseudo_labels(probs_transformed, mask, ignore_index);
  if (mask_out) *mask_out = std::move(mask);
  return labels;
}

template ConfidenceMask confidence_mask(const Tensor<float>&, double);
template ConfidenceMask confidence_mask(const Tensor<double>&, double);
template LabelBatch make_pseudo_labels(const Tensor<float>&, const ConfidenceMask&, std::int32_t);
template LabelBatch make_pseudo_labels(const Tensor<double>&, const ConfidenceMask&, std::int32_t);
template LabelBatch transformation_invariant_labels(const Tensor<float>&, const Tensor<float>&, double,
                                                    ConfidenceMask*, std::int32_t);
template LabelBatch transformation_invariant_labels(const Tensor<double>&, const Tensor<double>&, double,
                                                    ConfidenceMask*, std::int32_t);

}  // namespace tist
