// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_BEV_RASTERIZER_HPP
#define BEVSPLAT_BEV_RASTERIZER_HPP

#include "bevsplat/gaussian_scene.hpp"
#include "bevsplat/types.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace bevsplat {

// Metric BeV raster geometry plus the compositing thresholds inherited from the
// splatting rasterizer this module adapts. Every threshold is a field so tests
// can disable it (alpha_min = 0, t_stop = 0, alpha_max = 1, cutoff = inf).
struct RenderConfig {
    double x_min = -50.0;
    double x_max = 50.0;
    double y_min = -50.0;
    double y_max = 50.0;
    double resolution = 0.5; // meters per pixel

    double alpha_min = 1.0 / 255.0;
    double alpha_max = 0.99;
    double t_stop = 1e-4;
    int tile = 16;          // pixels
    double dilation = 0.3;  // px^2 added to the 2D covariance diagonal
    double cutoff = 3.0;    // sigma multiplier bounding each footprint

    int threads = 0; // 0 = hardware concurrency; output is thread-count invariant

    int rows() const { return static_cast<int>(std::ceil((y_max - y_min) / resolution)); }
    int cols() const { return static_cast<int>(std::ceil((x_max - x_min) / resolution)); }
};

// H_B x W_B x C feature raster. Pixel (row r, col c) center sits at world
// (x_min + (c + 0.5) * res, y_max - (r + 0.5) * res); row 0 is the max-y edge.
struct BevGrid {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<double> data; // rows * cols * channels, channel-fastest
    RenderConfig config;

    double& at(int r, int c, int ch) {
        return data[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
    double at(int r, int c, int ch) const {
        return data[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
};

BevGrid make_grid(const RenderConfig& cfg, int channels);

struct OrthoProjection {
    Vec2 mu;  // continuous pixel coords: mu = ((x - x_min)/res, (y_max - y)/res)
    Mat2 cov; // px^2, includes dilation
    double z; // world height, kept for compositing order only
};

// Orthographic top-down projection. The linear map from world (x,y) to pixel
// coords is diag(1/res, -1/res) (plus the translation above), so
// d(mu)/d(center) and d(cov2d)/d(cov3d) follow from that matrix.
OrthoProjection project_ortho(const Gaussian& g, const RenderConfig& cfg);
OrthoProjection project_ortho(const Vec3& center, const Mat3& cov3d, const RenderConfig& cfg);

// Per-gaussian gradients of a scalar loss through the renderer. d(loss)/dz is
// identically zero (compositing order is non-differentiable) but kept so the
// shapes stay uniform with the scene.
struct GradientBundle {
    std::size_t count = 0;
    int feature_dim = 0;
    std::vector<double> d_center;    // 3 per gaussian, z component always 0
    std::vector<double> d_scale;     // 3 per gaussian
    std::vector<double> d_rotation;  // 4 per gaussian (w, x, y, z)
    std::vector<double> d_opacity;   // 1 per gaussian
    std::vector<double> d_embedding; // feature_dim per gaussian
    bool z_gradient_is_zero = true;
};

// Tile-binned forward pass. Gaussians composite front-to-back in descending z
// (ties by ascending scene index): alpha = min(alpha_max, o * exp(-0.5 d^T
// cov2d^-1 d)), contributions below alpha_min are skipped, and the per-pixel
// loop stops once transmittance drops below t_stop.
BevGrid render(const GaussianScene& scene, const RenderConfig& cfg);

// Correctness oracle: per-pixel loop over all gaussians in one global sort,
// no tiling, no alpha_min skip, no t_stop early exit.
BevGrid render_naive(const GaussianScene& scene, const RenderConfig& cfg);

// Analytic adjoint of render. grad_wrt_output must have the grid shape implied
// by cfg (throws ConfigMismatch otherwise). Contributions skipped in the
// forward pass and alphas clamped at alpha_max receive zero gradient.
GradientBundle render_backward(const GaussianScene& scene, const RenderConfig& cfg,
                               const BevGrid& grad_wrt_output);

} // namespace bevsplat

#endif
