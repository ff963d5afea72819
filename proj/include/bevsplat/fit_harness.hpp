// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_FIT_HARNESS_HPP
#define BEVSPLAT_FIT_HARNESS_HPP

#include "bevsplat/bev_rasterizer.hpp"
#include "bevsplat/camera_geometry.hpp"
#include "bevsplat/losses.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bevsplat {

// Per-pixel segmentation logit from rendered features: <B(px), weight> + bias.
struct LinearHead {
    std::vector<double> weight;
    double bias = 0.0;
};

struct OptimizerConfig {
    double learning_rate = 0.05;
    int steps = 400;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

// Inverse-rendering problem: per-pixel raw head outputs stand in for the
// prediction heads. The RawHeadGrid entries here are stored PRE-activation
// (disparity and opacity as logits, quaternion and scale unactivated); the
// optimizer owns them together with the linear head.
struct FitProblem {
    std::vector<CameraCalib> calibs;
    std::vector<RawHeadGrid> raw;
    std::vector<std::uint8_t> target_mask;      // rows * cols of cfg
    std::vector<std::vector<double>> depth_gt;  // per camera, per feature pixel; may be empty
    LinearHead head;
    RenderConfig cfg;
    LossWeights weights;
    OptimizerConfig optimizer;
};

struct FitReport {
    std::vector<double> losses;       // entry k = loss before step k; last entry = final loss
    double final_iou = 0.0;
    double final_depth_log_error = 0.0; // mean |log z_gt - log z_pred|, unweighted
    double wall_time_ms = 0.0;
};

struct SynthScene {
    std::vector<std::uint8_t> target_mask;
    std::vector<CameraCalib> calibs;
    std::vector<std::vector<double>> depth_gt;
    RenderConfig cfg;
};

// Deterministic synthetic targets: "single-box", "two-boxes" or "lane-stripe".
// Throws UnknownPreset otherwise.
SynthScene synth_scene(const std::string& preset, std::uint64_t seed);

// synth_scene plus seeded initialization of the optimization variables.
FitProblem make_fit_problem(const std::string& preset, std::uint64_t seed);

// One forward/backward evaluation of the fitting objective.
struct FitEvaluation {
    double loss = 0.0;
    double part_bce = 0.0;
    double part_depth = 0.0;
    std::vector<std::vector<double>> gradients; // aligned with parameter_blocks()
    std::vector<double> logits;                 // rows * cols
    GaussianScene scene;
};

// Mutable views of every optimized array, in a fixed order: per camera
// (disparity, offset, quat_raw, scale_raw, opacity_logit, embedding), then
// head weight, head bias, then s_params in uncertainty mode.
std::vector<std::span<double>> parameter_blocks(FitProblem& problem);

FitEvaluation evaluate(const FitProblem& problem);

struct FitResult {
    FitReport report;
    GaussianScene scene;
};

// Gradient descent with momentum on all raw parameters and the head. Throws
// DivergenceDetected (naming the step) if the loss becomes non-finite.
FitResult fit(const FitProblem& problem);

// |intersection| / |union| of binary masks; 1.0 when both are empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);

} // namespace bevsplat

#endif
