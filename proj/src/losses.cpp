// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/losses.hpp"

#include <cmath>

namespace bevsplat {

namespace {

bool unmasked(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

} // namespace

ScalarLoss bce_loss(std::span<const double> logits, std::span<const std::uint8_t> target,
                    std::span<const std::uint8_t> mask) {
    if (logits.size() != target.size() || (!mask.empty() && mask.size() != logits.size())) {
        throw ConfigMismatch("bce_loss: shape mismatch");
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (unmasked(mask, i)) {
            ++count;
        }
    }
    if (count == 0) {
        throw EmptyMask("bce_loss: no unmasked pixels");
    }

    ScalarLoss out;
    out.gradient.assign(logits.size(), 0.0);
    const double inv_count = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!unmasked(mask, i)) {
            continue;
        }
        const double x = logits[i];
        const double y = target[i] ? 1.0 : 0.0;
        // max(x,0) - x y + log(1 + exp(-|x|))
        sum += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        out.gradient[i] = (sigmoid(x) - y) * inv_count;
    }
    out.value = sum * inv_count;
    return out;
}

ScalarLoss depth_loss(std::span<const double> z_pred, std::span<const double> z_gt,
                      std::span<const std::uint8_t> mask) {
    if (z_pred.size() != z_gt.size() || (!mask.empty() && mask.size() != z_pred.size())) {
        throw ConfigMismatch("depth_loss: shape mismatch");
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < z_pred.size(); ++i) {
        if (unmasked(mask, i)) {
            if (!(z_pred[i] > 0.0) || !(z_gt[i] > 0.0)) {
                throw NonPositiveDepth("depth_loss: non-positive depth at index " + std::to_string(i));
            }
            ++count;
        }
    }
    if (count == 0) {
        throw EmptyMask("depth_loss: no unmasked pixels");
    }

    ScalarLoss out;
    out.gradient.assign(z_pred.size(), 0.0);
    const double inv_count = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t i = 0; i < z_pred.size(); ++i) {
        if (!unmasked(mask, i)) {
            continue;
        }
        const double diff = std::log(z_pred[i]) - std::log(z_gt[i]);
        sum += std::abs(diff);
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        out.gradient[i] = sign * inv_count / z_pred[i];
    }
    out.value = sum * inv_count;
    return out;
}

TotalLoss total_loss(std::span<const double> parts, std::span<const double> lambdas,
                     const LossWeights& weights) {
    TotalLoss out;
    out.d_parts.assign(parts.size(), 0.0);
    if (weights.mode == WeightMode::fixed) {
        if (lambdas.size() != parts.size()) {
            throw ConfigMismatch("total_loss: lambdas/parts length mismatch");
        }
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (lambdas[i] < 0.0) {
                throw ValidationFailed("total_loss: fixed-mode weights must be nonnegative");
            }
            out.value += lambdas[i] * parts[i];
            out.d_parts[i] = lambdas[i];
        }
        return out;
    }
    if (weights.s_params.size() != parts.size()) {
        throw ConfigMismatch("total_loss: s_params/parts length mismatch");
    }
    out.d_s.assign(parts.size(), 0.0);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const double w = std::exp(-weights.s_params[i]);
        out.value += w * parts[i] + weights.s_params[i];
        out.d_parts[i] = w;
        out.d_s[i] = -w * parts[i] + 1.0;
    }
    return out;
}

} // namespace bevsplat
