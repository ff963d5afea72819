// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/bev_rasterizer.hpp"
#include "bevsplat/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace bevsplat;

namespace {

// 21x21 grid at 0.5 m whose middle pixel center sits exactly on the world origin.
RenderConfig centered_config() {
    RenderConfig cfg;
    cfg.x_min = -5.25;
    cfg.x_max = 5.25;
    cfg.y_min = -5.25;
    cfg.y_max = 5.25;
    cfg.resolution = 0.5;
    cfg.threads = 1;
    return cfg;
}

RenderConfig thresholds_disabled(RenderConfig cfg) {
    cfg.alpha_min = 0.0;
    cfg.alpha_max = 1.0;
    cfg.t_stop = 0.0;
    cfg.cutoff = std::numeric_limits<double>::infinity();
    return cfg;
}

Gaussian unit_gaussian(const Vec3& center, double opacity, std::vector<double> embedding) {
    Gaussian g;
    g.center = center;
    g.scale = {1.0, 1.0, 1.0};
    g.opacity = opacity;
    g.embedding = std::move(embedding);
    return g;
}

GaussianScene random_scene(Rng& rng, std::size_t count, int dim, double extent) {
    GaussianScene scene(dim);
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian g;
        g.center = {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-3.0, 3.0)};
        g.scale = {rng.uniform(0.2, 1.2), rng.uniform(0.2, 1.2), rng.uniform(0.2, 1.2)};
        g.rotation = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized().canonical();
        g.opacity = rng.uniform(0.1, 0.9);
        g.embedding.resize(dim);
        for (int ch = 0; ch < dim; ++ch) {
            g.embedding[ch] = rng.uniform(-2.0, 2.0);
        }
        scene.push_back(g);
    }
    return scene;
}

} // namespace

TEST_SUITE_BEGIN("bev_rasterizer");

TEST_CASE("default config yields the 200x200 grid") {
    const RenderConfig cfg;
    CHECK(cfg.rows() == 200);
    CHECK(cfg.cols() == 200);
    CHECK(cfg.resolution == 0.5);
}

TEST_CASE("project_ortho maps world points and covariances to pixels") {
    RenderConfig cfg; // defaults: 100m x 100m, 0.5 m/px
    Gaussian g = unit_gaussian({0, 0, 1.3}, 0.5, {1.0});
    const OrthoProjection proj = project_ortho(g, cfg);
    CHECK(proj.mu.x() == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(proj.mu.y() == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(proj.z == 1.3);

    // Isotropic 1 m sigma at 0.5 m/px: (1/0.5)^2 = 4 px^2 plus dilation.
    CHECK(proj.cov(0, 0) == doctest::Approx(4.3).epsilon(1e-15));
    CHECK(proj.cov(1, 1) == doctest::Approx(4.3).epsilon(1e-15));
    CHECK(proj.cov(0, 1) == 0.0);
}

TEST_CASE("footprint at the +x boundary clips without wraparound") {
    RenderConfig cfg;
    cfg.threads = 1;
    GaussianScene scene(1);
    scene.push_back(unit_gaussian({50.0, 0.0, 0.0}, 0.8, {1.0}));
    const BevGrid grid = render(scene, cfg);

    double left_mass = 0.0;
    double right_mass = 0.0;
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < 20; ++c) {
            left_mass += std::abs(grid.at(r, c, 0));
        }
        for (int c = grid.cols - 20; c < grid.cols; ++c) {
            right_mass += std::abs(grid.at(r, c, 0));
        }
    }
    CHECK(right_mass > 0.0);
    CHECK(left_mass == 0.0);
}

TEST_CASE("single splat peak equals opacity times embedding") {
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    scene.push_back(unit_gaussian({0, 0, 0}, 0.8, {1.0}));
    const BevGrid grid = render(scene, cfg);
    CHECK(grid.at(10, 10, 0) == 0.8); // exp(0) = 1, below alpha_max
}

TEST_CASE("coincident gaussians composite front to back") {
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    Gaussian front = unit_gaussian({0, 0, 2.0}, 0.5, {1.0});
    Gaussian back = unit_gaussian({0, 0, 1.0}, 0.5, {0.0});
    scene.push_back(front);
    scene.push_back(back);
    const BevGrid grid = render(scene, cfg);
    CHECK(grid.at(10, 10, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("equal depths tie-break in scene order") {
    const RenderConfig cfg = centered_config();
    GaussianScene ab(1);
    ab.push_back(unit_gaussian({0, 0, 1.0}, 0.5, {1.0}));
    ab.push_back(unit_gaussian({0, 0, 1.0}, 0.5, {0.0}));
    GaussianScene ba(1);
    ba.push_back(unit_gaussian({0, 0, 1.0}, 0.5, {0.0}));
    ba.push_back(unit_gaussian({0, 0, 1.0}, 0.5, {1.0}));

    const double v_ab = render(ab, cfg).at(10, 10, 0);
    const double v_ba = render(ba, cfg).at(10, 10, 0);
    CHECK(v_ab == doctest::Approx(0.5).epsilon(1e-15));  // first gaussian in front
    CHECK(v_ba == doctest::Approx(0.25).epsilon(1e-15)); // swapped order swaps the composite
}

TEST_CASE("empty scene renders zeros") {
    const GaussianScene scene(3);
    const BevGrid grid = render(scene, RenderConfig{});
    for (double v : grid.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("tiled renderer matches the naive oracle with thresholds disabled") {
    Rng rng(101);
    for (int dim : {1, 3, 8}) {
        RenderConfig cfg = thresholds_disabled(centered_config());
        const GaussianScene scene = random_scene(rng, 40, dim, 4.5);
        const BevGrid fast = render(scene, cfg);
        const BevGrid naive = render_naive(scene, cfg);
        REQUIRE(fast.data.size() == naive.data.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < fast.data.size(); ++i) {
            worst = std::max(worst, std::abs(fast.data[i] - naive.data[i]));
        }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("single splat matches the closed form in the naive renderer") {
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    scene.push_back(unit_gaussian({0, 0, 0}, 0.8, {1.0}));
    CHECK(render_naive(scene, cfg).at(10, 10, 0) == 0.8);

    const BevGrid empty = render_naive(GaussianScene(2), cfg);
    for (double v : empty.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("rendering is linear in the embeddings") {
    Rng rng(107);
    const RenderConfig cfg = centered_config();
    const GaussianScene scene = random_scene(rng, 15, 2, 4.0);

    GaussianScene doubled = scene;
    std::vector<double> e(2);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        e[0] = 2.0 * scene.embedding(i)[0];
        e[1] = 2.0 * scene.embedding(i)[1];
        doubled.set_embedding(i, e);
    }
    const BevGrid base = render(scene, cfg);
    const BevGrid twice = render(doubled, cfg);
    for (std::size_t i = 0; i < base.data.size(); ++i) {
        CHECK(twice.data[i] == 2.0 * base.data[i]); // doubling is exact in floating point
    }

    GaussianScene other = scene;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        e[0] = rng.uniform(-1.0, 1.0);
        e[1] = rng.uniform(-1.0, 1.0);
        other.set_embedding(i, e);
    }
    GaussianScene mixed = scene;
    const double a = 0.7, b = -1.3;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        e[0] = a * scene.embedding(i)[0] + b * other.embedding(i)[0];
        e[1] = a * scene.embedding(i)[1] + b * other.embedding(i)[1];
        mixed.set_embedding(i, e);
    }
    const BevGrid ga = render(scene, cfg);
    const BevGrid gb = render(other, cfg);
    const BevGrid gm = render(mixed, cfg);
    for (std::size_t i = 0; i < gm.data.size(); ++i) {
        CHECK(gm.data[i] == doctest::Approx(a * ga.data[i] + b * gb.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward and backward are bit-identical across 1, 2 and 8 threads") {
    Rng rng(113);
    RenderConfig cfg = centered_config();
    const GaussianScene scene = random_scene(rng, 60, 3, 4.5);
    BevGrid upstream = make_grid(cfg, 3);
    for (double& v : upstream.data) {
        v = rng.uniform(-1.0, 1.0);
    }

    cfg.threads = 1;
    const BevGrid g1 = render(scene, cfg);
    const GradientBundle b1 = render_backward(scene, cfg, upstream);
    for (int threads : {2, 8}) {
        cfg.threads = threads;
        const BevGrid gn = render(scene, cfg);
        const GradientBundle bn = render_backward(scene, cfg, upstream);
        CHECK(gn.data == g1.data);
        CHECK(bn.d_center == b1.d_center);
        CHECK(bn.d_scale == b1.d_scale);
        CHECK(bn.d_rotation == b1.d_rotation);
        CHECK(bn.d_opacity == b1.d_opacity);
        CHECK(bn.d_embedding == b1.d_embedding);
    }
}

TEST_CASE("single gaussian output is bounded by alpha_max times the embedding") {
    Rng rng(127);
    const RenderConfig cfg = centered_config();
    GaussianScene scene(2);
    Gaussian g = unit_gaussian({rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0}, 0.97, {1.5, -2.5});
    g.scale = {0.4, 2.0, 0.7};
    scene.push_back(g);
    const BevGrid grid = render(scene, cfg);
    const double bound = cfg.alpha_max * std::sqrt(1.5 * 1.5 + 2.5 * 2.5);
    for (double v : grid.data) {
        CHECK(std::abs(v) <= bound);
    }
}

TEST_CASE("backward gradients match hand values for a single splat") {
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    scene.push_back(unit_gaussian({0, 0, 0}, 0.8, {1.0}));

    BevGrid upstream = make_grid(cfg, 1);
    upstream.at(10, 10, 0) = 1.0; // L = B(center px, ch 0)
    const GradientBundle bundle = render_backward(scene, cfg, upstream);
    CHECK(bundle.d_opacity[0] == doctest::Approx(1.0).epsilon(1e-15)); // exp(0), unclamped
    // Rendering is linear in the embedding with weight alpha * T.
    CHECK(bundle.d_embedding[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(bundle.d_center[3 * 0 + 2] == 0.0);
    CHECK(bundle.z_gradient_is_zero);
}

TEST_CASE("backward full Jacobian matches finite differences") {
    for (const CheckResult& r : check_render_gradients(999, 1e-5)) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("center-x gradient is antisymmetric under x-mirroring") {
    Rng rng(131);
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    for (int i = 0; i < 6; ++i) {
        Gaussian g = unit_gaussian({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1)},
                                   rng.uniform(0.2, 0.8), {rng.uniform(-1, 1)});
        g.scale = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
        scene.push_back(g);
    }
    GaussianScene mirrored = scene;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Vec3 c = scene.center(i);
        c.x() = -c.x();
        mirrored.set_center(i, c);
    }

    BevGrid upstream = make_grid(cfg, 1);
    for (int r = 0; r < upstream.rows; ++r) {
        for (int c = 0; c < upstream.cols; ++c) {
            upstream.at(r, c, 0) = rng.uniform(-1.0, 1.0);
        }
    }
    BevGrid upstream_mirror = upstream;
    for (int r = 0; r < upstream.rows; ++r) {
        for (int c = 0; c < upstream.cols; ++c) {
            upstream_mirror.at(r, c, 0) = upstream.at(r, upstream.cols - 1 - c, 0);
        }
    }

    const GradientBundle fwd = render_backward(scene, cfg, upstream);
    const GradientBundle mir = render_backward(mirrored, cfg, upstream_mirror);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        CHECK(mir.d_center[3 * i] == doctest::Approx(-fwd.d_center[3 * i]).epsilon(1e-9));
    }
}

TEST_CASE("backward rejects mismatched grids") {
    const RenderConfig cfg = centered_config();
    GaussianScene scene(1);
    scene.push_back(unit_gaussian({0, 0, 0}, 0.5, {1.0}));
    BevGrid wrong = make_grid(cfg, 2);
    CHECK_THROWS_AS(render_backward(scene, cfg, wrong), ConfigMismatch);
}

TEST_SUITE_END();
