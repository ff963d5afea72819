// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_LOSSES_HPP
#define BEVSPLAT_LOSSES_HPP

#include "bevsplat/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace bevsplat {

enum class WeightMode { fixed, uncertainty };

// Balancing of the loss terms: fixed scalar weights, or homoscedastic
// uncertainty weighting sum_i exp(-s_i) L_i + s_i with learnable s.
struct LossWeights {
    WeightMode mode = WeightMode::fixed;
    double lambda_bce = 1.0;
    double lambda_depth = 0.05;
    std::vector<double> s_params; // one per loss part, uncertainty mode
};

struct ScalarLoss {
    double value = 0.0;
    std::vector<double> gradient; // wrt the first argument, same layout
};

// Mean binary cross-entropy over unmasked pixels, evaluated in the
// log-sum-exp form so it stays finite for extreme logits. The gradient is
// (sigmoid(x) - y) / count. Throws EmptyMask when nothing is unmasked.
ScalarLoss bce_loss(std::span<const double> logits, std::span<const std::uint8_t> target,
                    std::span<const std::uint8_t> mask = {});

// Mean |log z_gt - log z_pred| over unmasked entries; subgradient at equality
// is zero. Throws NonPositiveDepth if an unmasked depth is not positive.
ScalarLoss depth_loss(std::span<const double> z_pred, std::span<const double> z_gt,
                      std::span<const std::uint8_t> mask = {});

struct TotalLoss {
    double value = 0.0;
    std::vector<double> d_parts;
    std::vector<double> d_s; // empty in fixed mode
};

// Fixed mode: sum_i lambda_i * part_i. Uncertainty mode: sum_i exp(-s_i) *
// part_i + s_i (lambdas unused). lambdas/s_params must match parts in length.
TotalLoss total_loss(std::span<const double> parts, std::span<const double> lambdas,
                     const LossWeights& weights);

} // namespace bevsplat

#endif
