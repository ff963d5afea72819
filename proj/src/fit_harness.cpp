// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/fit_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace bevsplat {

namespace {

struct Box {
    double x0, x1, y0, y1, z0, z1;
};

CameraCalib forward_camera(const std::string& name, const Vec3& position, double yaw_sign) {
    // Optical axis along +y (yaw_sign = +1) or -y (-1); image-down maps to
    // world-down either way.
    CameraCalib c;
    c.name = name;
    c.fx = c.fy = 8.0;
    c.f_ref = 0.5;
    c.width = 12;
    c.height = 12;
    c.cx = (c.width - 1) / 2.0;
    c.cy = (c.height - 1) / 2.0;
    c.R.col(0) = Vec3{yaw_sign, 0.0, 0.0};
    c.R.col(1) = Vec3{0.0, 0.0, -1.0};
    c.R.col(2) = Vec3{0.0, yaw_sign, 0.0};
    c.t = position;
    return c;
}

RenderConfig preset_config() {
    RenderConfig cfg;
    cfg.x_min = -12.5;
    cfg.x_max = 12.5;
    cfg.y_min = -12.5;
    cfg.y_max = 12.5;
    cfg.resolution = 0.5;
    return cfg;
}

std::vector<std::uint8_t> rasterize_boxes(const RenderConfig& cfg, std::span<const Box> boxes) {
    const int rows = cfg.rows();
    const int cols = cfg.cols();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(rows) * cols, 0);
    for (int r = 0; r < rows; ++r) {
        const double y = cfg.y_max - (r + 0.5) * cfg.resolution;
        for (int c = 0; c < cols; ++c) {
            const double x = cfg.x_min + (c + 0.5) * cfg.resolution;
            for (const Box& b : boxes) {
                if (x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1) {
                    mask[static_cast<std::size_t>(r) * cols + c] = 1;
                    break;
                }
            }
        }
    }
    return mask;
}

// Camera-depth of the first box surface hit by the ray through pixel (u, v),
// else the ground-plane hit, else a far default. Always positive.
double ray_depth(const CameraCalib& calib, double u, double v, std::span<const Box> boxes) {
    constexpr double kFar = 28.0;
    const Vec3 dir_c{(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, 1.0};
    const Vec3 dir = calib.R * dir_c; // point(s) = t + s * dir has camera depth s
    double best = kFar;
    for (const Box& b : boxes) {
        double s_enter = 0.0;
        double s_exit = std::numeric_limits<double>::infinity();
        const double lo[3] = {b.x0, b.y0, b.z0};
        const double hi[3] = {b.x1, b.y1, b.z1};
        bool miss = false;
        for (int a = 0; a < 3; ++a) {
            const double o = calib.t[a];
            const double d = dir[a];
            if (std::abs(d) < 1e-12) {
                if (o < lo[a] || o > hi[a]) {
                    miss = true;
                    break;
                }
                continue;
            }
            double s0 = (lo[a] - o) / d;
            double s1 = (hi[a] - o) / d;
            if (s0 > s1) {
                std::swap(s0, s1);
            }
            s_enter = std::max(s_enter, s0);
            s_exit = std::min(s_exit, s1);
        }
        if (!miss && s_enter <= s_exit && s_enter > 0.0) {
            best = std::min(best, s_enter);
        }
    }
    if (best == kFar && dir.z() < 0.0) {
        const double s_ground = -calib.t.z() / dir.z();
        if (s_ground > 0.0) {
            best = std::min(best, s_ground);
        }
    }
    return std::clamp(best, 0.5, kFar);
}

std::vector<double> depth_map(const CameraCalib& calib, std::span<const Box> boxes) {
    std::vector<double> z(static_cast<std::size_t>(calib.width) * calib.height);
    for (int v = 0; v < calib.height; ++v) {
        for (int u = 0; u < calib.width; ++u) {
            z[static_cast<std::size_t>(v) * calib.width + u] = ray_depth(calib, u, v, boxes);
        }
    }
    return z;
}

} // namespace

SynthScene synth_scene(const std::string& preset, std::uint64_t seed) {
    (void)seed; // geometry is preset-determined; the seed only drives parameter init
    SynthScene out;
    out.cfg = preset_config();
    std::vector<Box> boxes;
    if (preset == "single-box") {
        boxes.push_back({-4.0, 4.0, 4.0, 12.0, 0.0, 1.5});
        out.calibs.push_back(forward_camera("front", {0.0, -4.0, 1.6}, 1.0));
    } else if (preset == "two-boxes") {
        boxes.push_back({-6.0, -1.0, 4.0, 10.0, 0.0, 1.5});
        boxes.push_back({1.0, 6.0, -10.0, -4.0, 0.0, 1.5});
        out.calibs.push_back(forward_camera("front", {0.0, -4.0, 1.6}, 1.0));
        out.calibs.push_back(forward_camera("back", {0.0, 4.0, 1.6}, -1.0));
    } else if (preset == "lane-stripe") {
        boxes.push_back({-0.5, 0.5, 2.0, 20.0, 0.0, 0.3});
        out.calibs.push_back(forward_camera("front", {0.0, -2.0, 1.6}, 1.0));
    } else {
        throw UnknownPreset("unknown preset '" + preset + "'");
    }
    out.target_mask = rasterize_boxes(out.cfg, boxes);
    for (const CameraCalib& calib : out.calibs) {
        out.depth_gt.push_back(depth_map(calib, boxes));
    }
    return out;
}

FitProblem make_fit_problem(const std::string& preset, std::uint64_t seed) {
    const SynthScene synth = synth_scene(preset, seed);
    constexpr int kFeatureDim = 4;

    FitProblem p;
    p.calibs = synth.calibs;
    p.target_mask = synth.target_mask;
    p.depth_gt = synth.depth_gt;
    p.cfg = synth.cfg;
    p.weights.lambda_bce = 25.0;
    p.weights.lambda_depth = 0.05;
    p.optimizer.seed = seed;

    Rng rng(seed);
    for (const CameraCalib& calib : p.calibs) {
        RawHeadGrid raw;
        raw.resize(calib.width, calib.height, kFeatureDim);
        const int n = raw.n_pixels();
        for (int i = 0; i < n; ++i) {
            const double z0 = rng.uniform(6.0, 18.0);
            raw.disparity[i] = logit(encode_depth(z0, calib));
            for (int k = 0; k < 3; ++k) {
                raw.offset[3 * i + k] = 0.0;
            }
            raw.quat_raw[4 * i] = 1.0;
            for (int k = 1; k < 4; ++k) {
                raw.quat_raw[4 * i + k] = 0.1 * rng.uniform(-1.0, 1.0);
            }
            for (int k = 0; k < 3; ++k) {
                raw.scale_raw[3 * i + k] = rng.uniform(0.5, 1.0);
            }
            raw.opacity_logit[i] = 0.0;
            for (int k = 0; k < kFeatureDim; ++k) {
                raw.embedding[static_cast<std::size_t>(kFeatureDim) * i + k] = rng.uniform(-0.5, 0.5);
            }
        }
        p.raw.push_back(std::move(raw));
    }

    p.head.weight.resize(kFeatureDim);
    for (int k = 0; k < kFeatureDim; ++k) {
        p.head.weight[k] = rng.uniform(0.5, 1.0);
    }
    p.head.bias = -1.0;
    return p;
}

std::vector<std::span<double>> parameter_blocks(FitProblem& problem) {
    std::vector<std::span<double>> blocks;
    for (RawHeadGrid& raw : problem.raw) {
        blocks.emplace_back(raw.disparity);
        blocks.emplace_back(raw.offset);
        blocks.emplace_back(raw.quat_raw);
        blocks.emplace_back(raw.scale_raw);
        blocks.emplace_back(raw.opacity_logit);
        blocks.emplace_back(raw.embedding);
    }
    blocks.emplace_back(problem.head.weight);
    blocks.emplace_back(&problem.head.bias, 1);
    if (problem.weights.mode == WeightMode::uncertainty) {
        blocks.emplace_back(problem.weights.s_params);
    }
    return blocks;
}

FitEvaluation evaluate(const FitProblem& problem) {
    const std::size_t n_cams = problem.calibs.size();
    if (problem.raw.size() != n_cams) {
        throw ConfigMismatch("fit problem has " + std::to_string(problem.raw.size()) + " raw grids for " +
                             std::to_string(n_cams) + " cameras");
    }
    const int dim = problem.raw.empty() ? 0 : problem.raw.front().feature_dim;
    if (static_cast<int>(problem.head.weight.size()) != dim) {
        throw ConfigMismatch("head weight dim mismatch");
    }

    // Activate, decode, gather depth predictions.
    std::vector<RawHeadGrid> activated(n_cams);
    std::vector<DecodedCamera> decoded(n_cams);
    std::vector<GaussianScene> fragments;
    std::vector<double> z_pred;
    std::vector<double> z_gt;
    const bool use_depth = !problem.depth_gt.empty();
    for (std::size_t k = 0; k < n_cams; ++k) {
        activated[k] = problem.raw[k];
        for (double& d : activated[k].disparity) {
            d = sigmoid(d);
        }
        decoded[k] = decode_camera(activated[k], problem.calibs[k], problem.cfg.threads);
        fragments.push_back(decoded[k].scene);
        if (use_depth) {
            const std::vector<double>& gt = problem.depth_gt[k];
            for (int i = 0; i < activated[k].n_pixels(); ++i) {
                z_pred.push_back(decode_depth(activated[k].disparity[i], problem.calibs[k]).z);
                z_gt.push_back(gt[i]);
            }
        }
    }
    FitEvaluation out;
    out.scene = concat_scenes(fragments);

    const BevGrid grid = render(out.scene, problem.cfg);
    const std::size_t n_px = static_cast<std::size_t>(grid.rows) * grid.cols;
    if (problem.target_mask.size() != n_px) {
        throw ConfigMismatch("target mask size does not match the render config grid");
    }

    out.logits.resize(n_px);
    for (std::size_t px = 0; px < n_px; ++px) {
        double acc = problem.head.bias;
        for (int ch = 0; ch < dim; ++ch) {
            acc += grid.data[px * dim + ch] * problem.head.weight[ch];
        }
        out.logits[px] = acc;
    }

    const ScalarLoss bce = bce_loss(out.logits, problem.target_mask);
    ScalarLoss depth;
    if (use_depth) {
        depth = depth_loss(z_pred, z_gt);
    }
    out.part_bce = bce.value;
    out.part_depth = depth.value;

    const double parts[2] = {bce.value, depth.value};
    const double lambdas[2] = {problem.weights.lambda_bce, problem.weights.lambda_depth};
    const TotalLoss total = total_loss(parts, lambdas, problem.weights);
    out.loss = total.value;

    // Backward: loss -> logits -> grid (and head), then through the rasterizer
    // and the decode Jacobians to the raw parameters.
    BevGrid grad_grid = make_grid(problem.cfg, dim);
    std::vector<double> d_weight(dim, 0.0);
    double d_bias = 0.0;
    for (std::size_t px = 0; px < n_px; ++px) {
        const double d_logit = total.d_parts[0] * bce.gradient[px];
        d_bias += d_logit;
        for (int ch = 0; ch < dim; ++ch) {
            grad_grid.data[px * dim + ch] = d_logit * problem.head.weight[ch];
            d_weight[ch] += d_logit * grid.data[px * dim + ch];
        }
    }

    const GradientBundle bundle = render_backward(out.scene, problem.cfg, grad_grid);

    std::size_t first = 0;
    std::size_t depth_at = 0;
    for (std::size_t k = 0; k < n_cams; ++k) {
        const int n = activated[k].n_pixels();
        RawHeadGradients g = pull_back_decode(decoded[k].jacobians, activated[k], bundle, first);
        // Depth supervision acts on decoded depth directly, before the renderer.
        if (use_depth) {
            for (int i = 0; i < n; ++i) {
                g.d_disparity[i] +=
                    total.d_parts[1] * depth.gradient[depth_at + i] * decoded[k].jacobians.dz_dd[i];
            }
            depth_at += n;
        }
        // Disparity is optimized as a logit; chain through the sigmoid.
        for (int i = 0; i < n; ++i) {
            const double d = activated[k].disparity[i];
            g.d_disparity[i] *= d * (1.0 - d);
        }
        out.gradients.push_back(std::move(g.d_disparity));
        out.gradients.push_back(std::move(g.d_offset));
        out.gradients.push_back(std::move(g.d_quat_raw));
        out.gradients.push_back(std::move(g.d_scale_raw));
        out.gradients.push_back(std::move(g.d_opacity_logit));
        out.gradients.push_back(std::move(g.d_embedding));
        first += n;
    }
    out.gradients.push_back(std::move(d_weight));
    out.gradients.push_back({d_bias});
    if (problem.weights.mode == WeightMode::uncertainty) {
        out.gradients.push_back(total.d_s);
    }
    return out;
}

FitResult fit(const FitProblem& problem) {
    const auto start = std::chrono::steady_clock::now();
    FitProblem state = problem;
    std::vector<std::span<double>> blocks = parameter_blocks(state);
    std::vector<std::vector<double>> velocity(blocks.size());
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        velocity[j].assign(blocks[j].size(), 0.0);
    }

    FitResult result;
    const OptimizerConfig& opt = state.optimizer;
    for (int step = 0; step < opt.steps; ++step) {
        FitEvaluation ev = evaluate(state);
        if (!std::isfinite(ev.loss)) {
            throw DivergenceDetected("loss became non-finite at step " + std::to_string(step));
        }
        result.report.losses.push_back(ev.loss);
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            std::span<double> block = blocks[j];
            const std::vector<double>& grad = ev.gradients[j];
            std::vector<double>& vel = velocity[j];
            for (std::size_t i = 0; i < block.size(); ++i) {
                vel[i] = opt.momentum * vel[i] + grad[i];
                block[i] -= opt.learning_rate * vel[i];
            }
        }
    }

    FitEvaluation final_ev = evaluate(state);
    if (!std::isfinite(final_ev.loss)) {
        throw DivergenceDetected("loss became non-finite at step " + std::to_string(opt.steps));
    }
    result.report.losses.push_back(final_ev.loss);

    std::vector<std::uint8_t> pred(final_ev.logits.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = final_ev.logits[i] > 0.0 ? 1 : 0;
    }
    result.report.final_iou = iou(pred, state.target_mask);
    result.report.final_depth_log_error = final_ev.part_depth;
    result.scene = std::move(final_ev.scene);

    const auto end = std::chrono::steady_clock::now();
    result.report.wall_time_ms = std::chrono::duration<double, std::milli>(end - start).count();
    return result;
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) {
        throw ConfigMismatch("iou: mask shapes differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0;
        const bool b = target[i] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    if (uni == 0) {
        return 1.0;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace bevsplat
