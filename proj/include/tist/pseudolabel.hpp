#pragma once

#include <cstdint>

#include "tist/tensor.hpp"

namespace tist {

// Pixels whose peak class probability strictly exceeds tau. tau must lie in
// the open interval (0.5, 1).
template <typename T>
ConfidenceMask confidence_mask(const Tensor<T>& probs, double tau);

// Elementwise (Hadamard) product of two binary masks.
ConfidenceMask ensemble_mask(const ConfidenceMask& a, const ConfidenceMask& b);

// argmax of probs where mask == 1, ignore_index elsewhere. Ties resolve to
// the lowest class index.
template <typename T>
LabelBatch make_pseudo_labels(const Tensor<T>& probs, const ConfidenceMask& mask,
                              std::int32_t ignore_index = kIgnoreIndex);

// Two-view filtering: confident in both the plain and the transformed view,
// labelled by the transformed view.
template <typename T>
LabelBatch transformation_invariant_labels(const Tensor<T>& probs_plain, const Tensor<T>& probs_transformed,
                                           double tau, ConfidenceMask* mask_out = nullptr,
                                           std::int32_t ignore_index = kIgnoreIndex);

void check_tau(double tau);

}  // namespace tist
