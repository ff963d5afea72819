// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/gradcheck.hpp"

#include "bevsplat/bev_rasterizer.hpp"
#include "bevsplat/camera_geometry.hpp"
#include "bevsplat/fit_harness.hpp"
#include "bevsplat/gaussian_scene.hpp"
#include "bevsplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bevsplat {

std::vector<double> finite_difference_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& f, std::vector<double> x,
    double h) {
    const std::vector<double> f0 = f(x);
    const std::size_t m = f0.size();
    const std::size_t n = x.size();
    std::vector<double> jac(m * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double saved = x[j];
        x[j] = saved + h;
        const std::vector<double> fp = f(x);
        x[j] = saved - h;
        const std::vector<double> fm = f(x);
        x[j] = saved;
        for (std::size_t i = 0; i < m; ++i) {
            jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    return jac;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric[i])});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

namespace {

Quat random_unit_quat(Rng& rng) {
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    return q.normalized();
}

CameraCalib random_camera(Rng& rng) {
    CameraCalib c;
    c.fx = rng.uniform(50.0, 400.0);
    c.fy = rng.uniform(50.0, 400.0);
    c.cx = rng.uniform(4.0, 12.0);
    c.cy = rng.uniform(4.0, 12.0);
    c.f_ref = rng.uniform(100.0, 500.0);
    c.R = random_unit_quat(rng).to_matrix();
    c.t = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    c.width = 16;
    c.height = 16;
    return c;
}

struct Accumulator {
    double worst = 0.0;
    void update(const std::vector<double>& analytic, const std::vector<double>& numeric) {
        worst = std::max(worst, max_relative_error(analytic, numeric));
    }
};

CheckResult finish(const std::string& name, const Accumulator& acc, double tol) {
    return {name, acc.worst, tol, acc.worst <= tol};
}

} // namespace

std::vector<CheckResult> check_geometry_gradients(std::uint64_t seed, double tol, int configs) {
    Rng rng(seed);
    Accumulator depth_acc, backproject_acc, world_acc, compose_acc, decode_acc, cov_acc, loss_acc;

    for (int cfg_i = 0; cfg_i < configs; ++cfg_i) {
        const CameraCalib calib = random_camera(rng);

        {
            const double d = rng.uniform(0.05, 0.95);
            const auto f = [&](const std::vector<double>& x) {
                return std::vector<double>{decode_depth(x[0], calib).z};
            };
            depth_acc.update({decode_depth(d, calib).dz_dd}, finite_difference_jacobian(f, {d}));
        }

        {
            const double u = rng.uniform(0.0, 15.0);
            const double v = rng.uniform(0.0, 15.0);
            const double z = rng.uniform(0.5, 40.0);
            const auto f = [&](const std::vector<double>& x) {
                const Vec3 p = backproject(x[0], x[1], x[2], calib).p_c;
                return std::vector<double>{p.x(), p.y(), p.z()};
            };
            const Mat3 jac = backproject(u, v, z, calib).jacobian;
            std::vector<double> analytic(9);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    analytic[3 * i + j] = jac(i, j);
                }
            }
            backproject_acc.update(analytic, finite_difference_jacobian(f, {u, v, z}));
        }

        {
            const Vec3 p{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
            const auto f = [&](const std::vector<double>& x) {
                const Vec3 w = cam_to_world_point({x[0], x[1], x[2]}, calib);
                return std::vector<double>{w.x(), w.y(), w.z()};
            };
            std::vector<double> analytic(9);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    analytic[3 * i + j] = calib.R(i, j);
                }
            }
            world_acc.update(analytic, finite_difference_jacobian(f, {p.x(), p.y(), p.z()}));
        }

        {
            const double u = rng.uniform(0.0, 15.0);
            const double v = rng.uniform(0.0, 15.0);
            const Quat q_ray = ray_quaternion(u, v, calib);
            Vec4 q_raw{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
            q_raw *= rng.uniform(0.5, 2.0);
            // The w >= 0 canonicalization is discontinuous where q_w.w crosses
            // zero; stay off that set.
            if (std::abs(compose_rotation(q_ray, q_raw, calib).q_w.w) > 1e-2) {
                const auto f = [&](const std::vector<double>& x) {
                    const Quat q = compose_rotation(q_ray, Vec4{x[0], x[1], x[2], x[3]}, calib).q_w;
                    return std::vector<double>{q.w, q.x, q.y, q.z};
                };
                const Mat4 jac = compose_rotation(q_ray, q_raw, calib).d_qw_d_qraw;
                std::vector<double> analytic(16);
                for (int i = 0; i < 4; ++i) {
                    for (int j = 0; j < 4; ++j) {
                        analytic[4 * i + j] = jac(i, j);
                    }
                }
                compose_acc.update(analytic,
                                   finite_difference_jacobian(f, {q_raw[0], q_raw[1], q_raw[2], q_raw[3]}));
            }
        }

        {
            // Full decode chain at one pixel: world center vs (disparity, offset),
            // scale and opacity activations.
            CameraCalib small = calib;
            small.width = 2;
            small.height = 2;
            RawHeadGrid raw;
            raw.resize(2, 2, 1);
            for (int i = 0; i < 4; ++i) {
                raw.disparity[i] = rng.uniform(0.1, 0.9);
                for (int k = 0; k < 3; ++k) {
                    raw.offset[3 * i + k] = rng.uniform(-1.0, 1.0);
                    raw.scale_raw[3 * i + k] = rng.uniform(0.2, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                }
                raw.opacity_logit[i] = rng.uniform(-2.0, 2.0);
                raw.embedding[i] = rng.uniform(-1.0, 1.0);
            }
            const DecodedCamera dec = decode_camera(raw, small, 1);
            const int pix = static_cast<int>(rng.bits() % 4);

            const auto f = [&](const std::vector<double>& x) {
                RawHeadGrid r2 = raw;
                r2.disparity[pix] = x[0];
                r2.offset[3 * pix] = x[1];
                r2.offset[3 * pix + 1] = x[2];
                r2.offset[3 * pix + 2] = x[3];
                r2.scale_raw[3 * pix] = x[4];
                r2.opacity_logit[pix] = x[5];
                const DecodedCamera d2 = decode_camera(r2, small, 1);
                const Vec3 p = d2.scene.center(pix);
                return std::vector<double>{p.x(),  p.y(),  p.z(),
                                           d2.scene.scale(pix).x(), d2.scene.opacity(pix)};
            };
            std::vector<double> analytic(5 * 6, 0.0);
            const Vec3 dpdd = dec.jacobians.dpw_dd[pix];
            const Mat3& dpdo = dec.jacobians.dpw_doffset;
            for (int i = 0; i < 3; ++i) {
                analytic[6 * i] = dpdd[i];
                for (int j = 0; j < 3; ++j) {
                    analytic[6 * i + 1 + j] = dpdo(i, j);
                }
            }
            analytic[6 * 3 + 4] = dec.jacobians.dscale_draw[pix][0];
            analytic[6 * 4 + 5] = dec.jacobians.dopacity_dlogit[pix];
            decode_acc.update(analytic, finite_difference_jacobian(
                                            f, {raw.disparity[pix], raw.offset[3 * pix],
                                                raw.offset[3 * pix + 1], raw.offset[3 * pix + 2],
                                                raw.scale_raw[3 * pix], raw.opacity_logit[pix]}));
        }

        {
            const Quat q = random_unit_quat(rng);
            const Vec3 s{rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)};
            const CovarianceJacobian cj = covariance_3d_jacobian(q, s);
            const auto f = [&](const std::vector<double>& x) {
                const Mat3 cov = covariance_3d(Quat{x[0], x[1], x[2], x[3]}, Vec3{x[4], x[5], x[6]});
                std::vector<double> flat(9);
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        flat[3 * i + j] = cov(i, j);
                    }
                }
                return flat;
            };
            std::vector<double> analytic(9 * 7);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    for (int k = 0; k < 4; ++k) {
                        analytic[(3 * i + j) * 7 + k] = cj.d_cov_d_quat[k](i, j);
                    }
                    for (int k = 0; k < 3; ++k) {
                        analytic[(3 * i + j) * 7 + 4 + k] = cj.d_cov_d_scale[k](i, j);
                    }
                }
            }
            cov_acc.update(analytic,
                           finite_difference_jacobian(f, {q.w, q.x, q.y, q.z, s.x(), s.y(), s.z()}));
        }

        {
            const int n = 6;
            std::vector<double> logits(n), zp(n), zg(n);
            std::vector<std::uint8_t> target(n);
            for (int i = 0; i < n; ++i) {
                logits[i] = rng.uniform(-4.0, 4.0);
                target[i] = rng.uniform() < 0.5 ? 0 : 1;
                zp[i] = rng.uniform(1.0, 30.0);
                zg[i] = rng.uniform(1.0, 30.0);
            }
            const ScalarLoss bce = bce_loss(logits, target);
            const auto f_bce = [&](const std::vector<double>& x) {
                return std::vector<double>{bce_loss(x, target).value};
            };
            loss_acc.update(bce.gradient, finite_difference_jacobian(f_bce, logits, 1e-5));

            const ScalarLoss dl = depth_loss(zp, zg);
            const auto f_depth = [&](const std::vector<double>& x) {
                return std::vector<double>{depth_loss(x, zg).value};
            };
            loss_acc.update(dl.gradient, finite_difference_jacobian(f_depth, zp, 1e-5));

            LossWeights w;
            w.mode = WeightMode::uncertainty;
            w.s_params = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const std::vector<double> parts{rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0)};
            const TotalLoss tl = total_loss(parts, {}, w);
            const auto f_parts = [&](const std::vector<double>& x) {
                return std::vector<double>{total_loss(x, {}, w).value};
            };
            loss_acc.update(tl.d_parts, finite_difference_jacobian(f_parts, parts, 1e-6));
            const auto f_s = [&](const std::vector<double>& x) {
                LossWeights w2 = w;
                w2.s_params = x;
                return std::vector<double>{total_loss(parts, {}, w2).value};
            };
            loss_acc.update(tl.d_s, finite_difference_jacobian(f_s, w.s_params, 1e-6));
        }
    }

    return {finish("decode_depth dz/dd", depth_acc, tol),
            finish("backproject d(p_c)/d(u,v,z)", backproject_acc, tol),
            finish("cam_to_world d(p_w)/d(p_c)", world_acc, tol),
            finish("compose_rotation d(q_w)/d(q_raw)", compose_acc, tol),
            finish("decode_camera chain", decode_acc, tol),
            finish("covariance_3d d/d(q,s)", cov_acc, tol),
            finish("loss gradients", loss_acc, tol)};
}

namespace {

GaussianScene random_scene(Rng& rng, std::size_t count, int dim, double extent) {
    GaussianScene scene(dim);
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian g;
        g.center = {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-2.0, 2.0)};
        g.scale = {rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)};
        g.rotation = random_unit_quat(rng).canonical();
        g.opacity = rng.uniform(0.1, 0.85);
        g.embedding.resize(dim);
        for (int ch = 0; ch < dim; ++ch) {
            g.embedding[ch] = rng.uniform(-1.0, 1.0);
        }
        scene.push_back(g);
    }
    return scene;
}

std::vector<double> pack_scene(const GaussianScene& scene) {
    const int dim = scene.feature_dim();
    std::vector<double> x;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian g = scene.at(i);
        x.insert(x.end(), {g.center.x(), g.center.y(), g.center.z(), g.scale.x(), g.scale.y(), g.scale.z(),
                           g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z, g.opacity});
        x.insert(x.end(), g.embedding.begin(), g.embedding.end());
    }
    (void)dim;
    return x;
}

GaussianScene unpack_scene(const std::vector<double>& x, std::size_t count, int dim) {
    GaussianScene scene(dim);
    scene.resize(count);
    const std::size_t stride = 11 + dim;
    for (std::size_t i = 0; i < count; ++i) {
        const double* p = x.data() + i * stride;
        scene.set_center(i, Vec3{p[0], p[1], p[2]});
        scene.set_scale(i, Vec3{p[3], p[4], p[5]});
        scene.set_rotation(i, Quat{p[6], p[7], p[8], p[9]});
        scene.set_opacity(i, p[10]);
        scene.set_embedding(i, {p + 11, static_cast<std::size_t>(dim)});
    }
    return scene;
}

} // namespace

std::vector<CheckResult> check_render_gradients(std::uint64_t seed, double tol) {
    Rng rng(seed);
    const int dim = 3;
    const std::size_t count = 12;

    RenderConfig cfg;
    cfg.x_min = -8.0;
    cfg.x_max = 8.0;
    cfg.y_min = -8.0;
    cfg.y_max = 8.0;
    cfg.resolution = 0.5;
    // A smooth objective: no footprint truncation, no alpha/transmittance
    // thresholds. alpha stays below 1 because opacity does.
    cfg.alpha_min = 0.0;
    cfg.alpha_max = 1.0;
    cfg.t_stop = 0.0;
    cfg.cutoff = std::numeric_limits<double>::infinity();
    cfg.threads = 1;

    const GaussianScene scene = random_scene(rng, count, dim, 6.0);

    BevGrid weights = make_grid(cfg, dim);
    for (double& v : weights.data) {
        v = rng.uniform(-1.0, 1.0);
    }

    const auto loss_of = [&](const GaussianScene& s) {
        const BevGrid grid = render(s, cfg);
        double acc = 0.0;
        for (std::size_t i = 0; i < grid.data.size(); ++i) {
            acc += grid.data[i] * weights.data[i];
        }
        return acc;
    };

    const GradientBundle bundle = render_backward(scene, cfg, weights);
    std::vector<double> analytic;
    for (std::size_t i = 0; i < count; ++i) {
        analytic.insert(analytic.end(),
                        {bundle.d_center[3 * i], bundle.d_center[3 * i + 1], bundle.d_center[3 * i + 2],
                         bundle.d_scale[3 * i], bundle.d_scale[3 * i + 1], bundle.d_scale[3 * i + 2],
                         bundle.d_rotation[4 * i], bundle.d_rotation[4 * i + 1],
                         bundle.d_rotation[4 * i + 2], bundle.d_rotation[4 * i + 3],
                         bundle.d_opacity[i]});
        for (int ch = 0; ch < dim; ++ch) {
            analytic.push_back(bundle.d_embedding[static_cast<std::size_t>(dim) * i + ch]);
        }
    }

    const auto f = [&](const std::vector<double>& x) {
        return std::vector<double>{loss_of(unpack_scene(x, count, dim))};
    };
    const std::vector<double> numeric = finite_difference_jacobian(f, pack_scene(scene));

    Accumulator acc;
    acc.update(analytic, numeric);
    return {finish("render_backward full Jacobian", acc, tol)};
}

std::vector<CheckResult> check_end_to_end_gradients(std::uint64_t seed, double tol) {
    Rng rng(seed);

    FitProblem p;
    p.cfg.x_min = -5.0;
    p.cfg.x_max = 5.0;
    p.cfg.y_min = -5.0;
    p.cfg.y_max = 5.0;
    p.cfg.resolution = 0.5;
    p.cfg.alpha_min = 0.0;
    p.cfg.alpha_max = 1.0;
    p.cfg.t_stop = 0.0;
    p.cfg.cutoff = std::numeric_limits<double>::infinity();
    p.cfg.threads = 1;
    p.weights.lambda_bce = 1.0;
    p.weights.lambda_depth = 0.05;

    const int dim = 2;
    for (int cam = 0; cam < 2; ++cam) {
        CameraCalib c;
        c.name = "cam" + std::to_string(cam);
        c.fx = c.fy = 2.0;
        c.f_ref = 0.5;
        c.cx = c.cy = 0.5;
        c.width = 2;
        c.height = 2;
        c.R = random_unit_quat(rng).to_matrix();
        c.t = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0)};
        p.calibs.push_back(c);

        RawHeadGrid raw;
        raw.resize(2, 2, dim);
        for (int i = 0; i < 4; ++i) {
            raw.disparity[i] = rng.uniform(-1.0, 1.0); // pre-activation logit
            for (int k = 0; k < 3; ++k) {
                raw.offset[3 * i + k] = rng.uniform(-0.5, 0.5);
                raw.scale_raw[3 * i + k] = rng.uniform(0.4, 1.2);
            }
            for (int k = 0; k < 4; ++k) {
                raw.quat_raw[4 * i + k] = rng.normal();
            }
            raw.opacity_logit[i] = rng.uniform(-1.0, 1.0);
            for (int k = 0; k < dim; ++k) {
                raw.embedding[static_cast<std::size_t>(dim) * i + k] = rng.uniform(-1.0, 1.0);
            }
        }
        p.raw.push_back(std::move(raw));

        std::vector<double> gt(4);
        for (double& z : gt) {
            z = rng.uniform(1.0, 6.0);
        }
        p.depth_gt.push_back(std::move(gt));
    }

    const std::size_t n_px = static_cast<std::size_t>(p.cfg.rows()) * p.cfg.cols();
    p.target_mask.resize(n_px);
    for (std::size_t i = 0; i < n_px; ++i) {
        p.target_mask[i] = rng.uniform() < 0.3 ? 1 : 0;
    }
    p.head.weight = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
    p.head.bias = rng.uniform(-0.5, 0.5);

    const FitEvaluation ev = evaluate(p);
    std::vector<double> analytic;
    for (const std::vector<double>& g : ev.gradients) {
        analytic.insert(analytic.end(), g.begin(), g.end());
    }

    std::vector<std::span<double>> blocks = parameter_blocks(p);
    std::vector<double> x0;
    for (const auto& b : blocks) {
        x0.insert(x0.end(), b.begin(), b.end());
    }
    const auto f = [&](const std::vector<double>& x) {
        FitProblem p2 = p;
        std::vector<std::span<double>> b2 = parameter_blocks(p2);
        std::size_t at = 0;
        for (auto& b : b2) {
            for (double& v : b) {
                v = x[at++];
            }
        }
        return std::vector<double>{evaluate(p2).loss};
    };
    const std::vector<double> numeric = finite_difference_jacobian(f, x0);

    Accumulator acc;
    acc.update(analytic, numeric);
    return {finish("end-to-end loss gradient", acc, tol)};
}

std::vector<CheckResult> run_all_gradient_checks(std::uint64_t seed) {
    std::vector<CheckResult> results = check_geometry_gradients(seed, 1e-5);
    for (CheckResult& r : check_render_gradients(seed + 1, 1e-5)) {
        results.push_back(std::move(r));
    }
    for (CheckResult& r : check_end_to_end_gradients(seed + 2, 1e-4)) {
        results.push_back(std::move(r));
    }
    return results;
}

} // namespace bevsplat
