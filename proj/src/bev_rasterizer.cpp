// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/bev_rasterizer.hpp"

#include "bevsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace bevsplat {

namespace {

struct Splat {
    double mu_x, mu_y;
    double cov_a, cov_b, cov_c;       // 2D covariance (a = xx, b = xy, c = yy), px^2
    double conic_a, conic_b, conic_c; // its inverse
    double z;
    double opacity;
    int tx0, tx1, ty0, ty1; // inclusive touched-tile range; tx0 > tx1 means none
};

struct TileEntry {
    std::uint32_t tile;
    std::uint32_t gaussian;
};

struct Prepared {
    std::vector<Splat> splats;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<TileEntry> entries;       // sorted by (tile asc, z desc, index asc)
    std::vector<std::size_t> tile_begin;  // tiles_x * tiles_y + 1 offsets into entries
};

Splat project_one(const GaussianScene& scene, std::size_t i, const RenderConfig& cfg, int tiles_x,
                  int tiles_y) {
    const Mat3 cov3 = covariance_3d(scene.rotation(i), scene.scale(i));
    const Vec3 p = scene.center(i);
    Splat s;
    s.mu_x = (p.x() - cfg.x_min) / cfg.resolution;
    s.mu_y = (cfg.y_max - p.y()) / cfg.resolution;
    const double inv_r2 = 1.0 / (cfg.resolution * cfg.resolution);
    s.cov_a = cov3(0, 0) * inv_r2 + cfg.dilation;
    s.cov_b = -cov3(0, 1) * inv_r2;
    s.cov_c = cov3(1, 1) * inv_r2 + cfg.dilation;
    const double det = s.cov_a * s.cov_c - s.cov_b * s.cov_b;
    s.conic_a = s.cov_c / det;
    s.conic_b = -s.cov_b / det;
    s.conic_c = s.cov_a / det;
    s.z = p.z();
    s.opacity = scene.opacity(i);

    if (std::isinf(cfg.cutoff)) {
        s.tx0 = 0;
        s.tx1 = tiles_x - 1;
        s.ty0 = 0;
        s.ty1 = tiles_y - 1;
        return s;
    }
    const double rx = cfg.cutoff * std::sqrt(s.cov_a);
    const double ry = cfg.cutoff * std::sqrt(s.cov_c);
    const double px0 = s.mu_x - rx, px1 = s.mu_x + rx;
    const double py0 = s.mu_y - ry, py1 = s.mu_y + ry;
    if (px1 < 0.0 || py1 < 0.0 || px0 > cfg.cols() || py0 > cfg.rows()) {
        s.tx0 = 1;
        s.tx1 = 0; // empty
        s.ty0 = 1;
        s.ty1 = 0;
        return s;
    }
    s.tx0 = std::clamp(static_cast<int>(std::floor(px0 / cfg.tile)), 0, tiles_x - 1);
    s.tx1 = std::clamp(static_cast<int>(std::floor(px1 / cfg.tile)), 0, tiles_x - 1);
    s.ty0 = std::clamp(static_cast<int>(std::floor(py0 / cfg.tile)), 0, tiles_y - 1);
    s.ty1 = std::clamp(static_cast<int>(std::floor(py1 / cfg.tile)), 0, tiles_y - 1);
    return s;
}

Prepared prepare(const GaussianScene& scene, const RenderConfig& cfg) {
    Prepared prep;
    prep.tiles_x = (cfg.cols() + cfg.tile - 1) / cfg.tile;
    prep.tiles_y = (cfg.rows() + cfg.tile - 1) / cfg.tile;
    const std::size_t n = scene.size();
    prep.splats.resize(n);

    parallel_for(n, cfg.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            prep.splats[i] = project_one(scene, i, cfg, prep.tiles_x, prep.tiles_y);
        }
    });

    std::vector<std::size_t> offsets(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const Splat& s = prep.splats[i];
        const std::size_t count = (s.tx1 >= s.tx0 && s.ty1 >= s.ty0)
                                      ? static_cast<std::size_t>(s.tx1 - s.tx0 + 1) * (s.ty1 - s.ty0 + 1)
                                      : 0;
        offsets[i + 1] = offsets[i] + count;
    }
    prep.entries.resize(offsets[n]);
    parallel_for(n, cfg.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Splat& s = prep.splats[i];
            std::size_t at = offsets[i];
            for (int ty = s.ty0; ty <= s.ty1; ++ty) {
                for (int tx = s.tx0; tx <= s.tx1; ++tx) {
                    prep.entries[at++] = {static_cast<std::uint32_t>(ty * prep.tiles_x + tx),
                                          static_cast<std::uint32_t>(i)};
                }
            }
        }
    });

    // One global sort realizes the per-pixel order: tile, then depth (descending
    // z, the top-down camera looks along -z), ties broken by scene index.
    std::sort(prep.entries.begin(), prep.entries.end(), [&](const TileEntry& a, const TileEntry& b) {
        if (a.tile != b.tile) {
            return a.tile < b.tile;
        }
        const double za = prep.splats[a.gaussian].z;
        const double zb = prep.splats[b.gaussian].z;
        if (za != zb) {
            return za > zb;
        }
        return a.gaussian < b.gaussian;
    });

    const std::size_t n_tiles = static_cast<std::size_t>(prep.tiles_x) * prep.tiles_y;
    prep.tile_begin.assign(n_tiles + 1, 0);
    for (const TileEntry& e : prep.entries) {
        ++prep.tile_begin[e.tile + 1];
    }
    for (std::size_t t = 0; t < n_tiles; ++t) {
        prep.tile_begin[t + 1] += prep.tile_begin[t];
    }
    return prep;
}

} // namespace

BevGrid make_grid(const RenderConfig& cfg, int channels) {
    BevGrid grid;
    grid.rows = cfg.rows();
    grid.cols = cfg.cols();
    grid.channels = channels;
    grid.config = cfg;
    grid.data.assign(static_cast<std::size_t>(grid.rows) * grid.cols * channels, 0.0);
    return grid;
}

OrthoProjection project_ortho(const Vec3& center, const Mat3& cov3d, const RenderConfig& cfg) {
    OrthoProjection out;
    out.mu = {(center.x() - cfg.x_min) / cfg.resolution, (cfg.y_max - center.y()) / cfg.resolution};
    const double inv_r2 = 1.0 / (cfg.resolution * cfg.resolution);
    out.cov << cov3d(0, 0) * inv_r2 + cfg.dilation, -cov3d(0, 1) * inv_r2, //
        -cov3d(0, 1) * inv_r2, cov3d(1, 1) * inv_r2 + cfg.dilation;
    out.z = center.z();
    return out;
}

OrthoProjection project_ortho(const Gaussian& g, const RenderConfig& cfg) {
    return project_ortho(g.center, covariance_3d(g), cfg);
}

BevGrid render(const GaussianScene& scene, const RenderConfig& cfg) {
    BevGrid grid = make_grid(cfg, scene.feature_dim());
    if (scene.empty()) {
        return grid;
    }
    const Prepared prep = prepare(scene, cfg);
    const int dim = scene.feature_dim();
    const std::span<const double> emb = scene.embeddings();
    const std::size_t n_tiles = static_cast<std::size_t>(prep.tiles_x) * prep.tiles_y;

    parallel_for(n_tiles, cfg.threads, [&](std::size_t t_begin, std::size_t t_end) {
        for (std::size_t t = t_begin; t < t_end; ++t) {
            const std::size_t e0 = prep.tile_begin[t];
            const std::size_t e1 = prep.tile_begin[t + 1];
            if (e0 == e1) {
                continue;
            }
            const int tx = static_cast<int>(t % prep.tiles_x);
            const int ty = static_cast<int>(t / prep.tiles_x);
            const int r0 = ty * cfg.tile, r1 = std::min((ty + 1) * cfg.tile, grid.rows);
            const int c0 = tx * cfg.tile, c1 = std::min((tx + 1) * cfg.tile, grid.cols);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    const double px = c + 0.5;
                    const double py = r + 0.5;
                    double transmittance = 1.0;
                    double* out = &grid.at(r, c, 0);
                    for (std::size_t e = e0; e < e1; ++e) {
                        const Splat& s = prep.splats[prep.entries[e].gaussian];
                        const double dx = px - s.mu_x;
                        const double dy = py - s.mu_y;
                        const double power =
                            -0.5 * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
                        const double alpha = std::min(cfg.alpha_max, s.opacity * std::exp(power));
                        if (alpha < cfg.alpha_min) {
                            continue;
                        }
                        const double w = alpha * transmittance;
                        const double* e_ptr =
                            emb.data() + static_cast<std::size_t>(prep.entries[e].gaussian) * dim;
                        for (int ch = 0; ch < dim; ++ch) {
                            out[ch] += w * e_ptr[ch];
                        }
                        transmittance *= 1.0 - alpha;
                        if (transmittance < cfg.t_stop) {
                            break;
                        }
                    }
                }
            }
        }
    });
    return grid;
}

BevGrid render_naive(const GaussianScene& scene, const RenderConfig& cfg) {
    BevGrid grid = make_grid(cfg, scene.feature_dim());
    const std::size_t n = scene.size();
    if (n == 0) {
        return grid;
    }
    const int dim = scene.feature_dim();
    const std::span<const double> emb = scene.embeddings();

    std::vector<Splat> splats(n);
    for (std::size_t i = 0; i < n; ++i) {
        splats[i] = project_one(scene, i, cfg, 1, 1);
    }
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = static_cast<std::uint32_t>(i);
    }
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (splats[a].z != splats[b].z) {
            return splats[a].z > splats[b].z;
        }
        return a < b;
    });

    parallel_for(static_cast<std::size_t>(grid.rows), cfg.threads, [&](std::size_t r_begin, std::size_t r_end) {
        for (std::size_t r = r_begin; r < r_end; ++r) {
            for (int c = 0; c < grid.cols; ++c) {
                const double px = c + 0.5;
                const double py = static_cast<double>(r) + 0.5;
                double transmittance = 1.0;
                double* out = &grid.at(static_cast<int>(r), c, 0);
                for (std::uint32_t idx : order) {
                    const Splat& s = splats[idx];
                    const double dx = px - s.mu_x;
                    const double dy = py - s.mu_y;
                    const double power =
                        -0.5 * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
                    const double alpha = std::min(cfg.alpha_max, s.opacity * std::exp(power));
                    const double w = alpha * transmittance;
                    const double* e_ptr = emb.data() + static_cast<std::size_t>(idx) * dim;
                    for (int ch = 0; ch < dim; ++ch) {
                        out[ch] += w * e_ptr[ch];
                    }
                    transmittance *= 1.0 - alpha;
                }
            }
        }
    });
    return grid;
}

GradientBundle render_backward(const GaussianScene& scene, const RenderConfig& cfg,
                               const BevGrid& grad_wrt_output) {
    const int dim = scene.feature_dim();
    if (grad_wrt_output.rows != cfg.rows() || grad_wrt_output.cols != cfg.cols() ||
        grad_wrt_output.channels != dim) {
        throw ConfigMismatch("output gradient is " + std::to_string(grad_wrt_output.rows) + "x" +
                             std::to_string(grad_wrt_output.cols) + "x" +
                             std::to_string(grad_wrt_output.channels) + ", config implies " +
                             std::to_string(cfg.rows()) + "x" + std::to_string(cfg.cols()) + "x" +
                             std::to_string(dim));
    }

    const std::size_t n = scene.size();
    GradientBundle bundle;
    bundle.count = n;
    bundle.feature_dim = dim;
    bundle.d_center.assign(3 * n, 0.0);
    bundle.d_scale.assign(3 * n, 0.0);
    bundle.d_rotation.assign(4 * n, 0.0);
    bundle.d_opacity.assign(n, 0.0);
    bundle.d_embedding.assign(static_cast<std::size_t>(dim) * n, 0.0);
    if (n == 0) {
        return bundle;
    }

    const Prepared prep = prepare(scene, cfg);
    const std::span<const double> emb = scene.embeddings();
    const std::size_t n_pairs = prep.entries.size();
    const std::size_t n_tiles = static_cast<std::size_t>(prep.tiles_x) * prep.tiles_y;

    // Per-(tile, gaussian) partials; entries of distinct tiles never alias, so
    // tile workers write disjoint slots.
    std::vector<double> pd_mu(2 * n_pairs, 0.0);
    std::vector<double> pd_conic(3 * n_pairs, 0.0);
    std::vector<double> pd_opacity(n_pairs, 0.0);
    std::vector<double> pd_embedding(static_cast<std::size_t>(dim) * n_pairs, 0.0);

    struct Contribution {
        std::size_t entry;
        double alpha;
        double transmittance; // value before this contribution
        bool clamped;
    };

    parallel_for(n_tiles, cfg.threads, [&](std::size_t t_begin, std::size_t t_end) {
        std::vector<Contribution> record;
        std::vector<double> suffix(dim);
        for (std::size_t t = t_begin; t < t_end; ++t) {
            const std::size_t e0 = prep.tile_begin[t];
            const std::size_t e1 = prep.tile_begin[t + 1];
            if (e0 == e1) {
                continue;
            }
            const int tx = static_cast<int>(t % prep.tiles_x);
            const int ty = static_cast<int>(t / prep.tiles_x);
            const int r0 = ty * cfg.tile, r1 = std::min((ty + 1) * cfg.tile, grad_wrt_output.rows);
            const int c0 = tx * cfg.tile, c1 = std::min((tx + 1) * cfg.tile, grad_wrt_output.cols);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    const double px = c + 0.5;
                    const double py = r + 0.5;

                    // Replay the forward pass to capture the contributor set.
                    record.clear();
                    double transmittance = 1.0;
                    for (std::size_t e = e0; e < e1; ++e) {
                        const Splat& s = prep.splats[prep.entries[e].gaussian];
                        const double dx = px - s.mu_x;
                        const double dy = py - s.mu_y;
                        const double power =
                            -0.5 * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
                        const double raw_alpha = s.opacity * std::exp(power);
                        const double alpha = std::min(cfg.alpha_max, raw_alpha);
                        // alpha == 0 contributions are exact no-ops in the forward
                        // pass; dropping them here keeps alpha/opacity finite below.
                        if (alpha < cfg.alpha_min || alpha <= 0.0) {
                            continue;
                        }
                        record.push_back({e, alpha, transmittance, raw_alpha > cfg.alpha_max});
                        transmittance *= 1.0 - alpha;
                        if (transmittance < cfg.t_stop) {
                            break;
                        }
                    }
                    if (record.empty()) {
                        continue;
                    }

                    const double* dL =
                        grad_wrt_output.data.data() +
                        (static_cast<std::size_t>(r) * grad_wrt_output.cols + c) * dim;
                    std::fill(suffix.begin(), suffix.end(), 0.0);
                    for (auto it = record.rbegin(); it != record.rend(); ++it) {
                        const std::size_t e = it->entry;
                        const std::uint32_t g = prep.entries[e].gaussian;
                        const Splat& s = prep.splats[g];
                        const double* e_ptr = emb.data() + static_cast<std::size_t>(g) * dim;
                        const double w = it->alpha * it->transmittance;

                        double d_alpha = 0.0;
                        for (int ch = 0; ch < dim; ++ch) {
                            pd_embedding[static_cast<std::size_t>(dim) * e + ch] += w * dL[ch];
                            d_alpha += dL[ch] * it->transmittance * (e_ptr[ch] - suffix[ch]);
                        }
                        for (int ch = 0; ch < dim; ++ch) {
                            suffix[ch] = it->alpha * e_ptr[ch] + (1.0 - it->alpha) * suffix[ch];
                        }
                        if (it->clamped) {
                            continue; // alpha pinned at alpha_max: no upstream gradient
                        }
                        const double gauss = it->alpha / s.opacity; // exp(power)
                        pd_opacity[e] += gauss * d_alpha;
                        const double d_power = it->alpha * d_alpha;
                        const double dx = px - s.mu_x;
                        const double dy = py - s.mu_y;
                        pd_mu[2 * e] += d_power * (s.conic_a * dx + s.conic_b * dy);
                        pd_mu[2 * e + 1] += d_power * (s.conic_b * dx + s.conic_c * dy);
                        pd_conic[3 * e] += d_power * (-0.5 * dx * dx);
                        pd_conic[3 * e + 1] += d_power * (-dx * dy);
                        pd_conic[3 * e + 2] += d_power * (-0.5 * dy * dy);
                    }
                }
            }
        }
    });

    // Combine per-tile partials in tile index order: a fixed reduction order
    // keeps the sums identical for every thread count.
    std::vector<double> g_mu(2 * n, 0.0);
    std::vector<double> g_conic(3 * n, 0.0);
    for (std::size_t e = 0; e < n_pairs; ++e) {
        const std::uint32_t g = prep.entries[e].gaussian;
        g_mu[2 * g] += pd_mu[2 * e];
        g_mu[2 * g + 1] += pd_mu[2 * e + 1];
        g_conic[3 * g] += pd_conic[3 * e];
        g_conic[3 * g + 1] += pd_conic[3 * e + 1];
        g_conic[3 * g + 2] += pd_conic[3 * e + 2];
        bundle.d_opacity[g] += pd_opacity[e];
        for (int ch = 0; ch < dim; ++ch) {
            bundle.d_embedding[static_cast<std::size_t>(dim) * g + ch] +=
                pd_embedding[static_cast<std::size_t>(dim) * e + ch];
        }
    }

    // Chain pixel-space gradients to world-frame parameters.
    const double inv_res = 1.0 / cfg.resolution;
    parallel_for(n, cfg.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Splat& s = prep.splats[i];
            bundle.d_center[3 * i] = g_mu[2 * i] * inv_res;
            bundle.d_center[3 * i + 1] = -g_mu[2 * i + 1] * inv_res;
            bundle.d_center[3 * i + 2] = 0.0;

            Mat2 grad_conic;
            grad_conic << g_conic[3 * i], 0.5 * g_conic[3 * i + 1], //
                0.5 * g_conic[3 * i + 1], g_conic[3 * i + 2];
            if (grad_conic.cwiseAbs().maxCoeff() == 0.0) {
                continue;
            }
            Mat2 conic;
            conic << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
            const Mat2 grad_cov2 = -conic * grad_conic * conic;

            // cov2d = M cov3d M^T + dilation I with M = [[1/res,0,0],[0,-1/res,0]].
            Mat3 grad_cov3 = Mat3::Zero();
            const double inv_r2 = inv_res * inv_res;
            grad_cov3(0, 0) = grad_cov2(0, 0) * inv_r2;
            grad_cov3(0, 1) = -grad_cov2(0, 1) * inv_r2;
            grad_cov3(1, 0) = -grad_cov2(1, 0) * inv_r2;
            grad_cov3(1, 1) = grad_cov2(1, 1) * inv_r2;

            const CovarianceJacobian cj = covariance_3d_jacobian(scene.rotation(i), scene.scale(i));
            for (int k = 0; k < 4; ++k) {
                bundle.d_rotation[4 * i + k] = grad_cov3.cwiseProduct(cj.d_cov_d_quat[k]).sum();
            }
            for (int k = 0; k < 3; ++k) {
                bundle.d_scale[3 * i + k] = grad_cov3.cwiseProduct(cj.d_cov_d_scale[k]).sum();
            }
        }
    });
    return bundle;
}

} // namespace bevsplat
