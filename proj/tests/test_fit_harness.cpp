// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/fit_harness.hpp"
#include "bevsplat/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace bevsplat;

TEST_SUITE_BEGIN("fit_harness");

TEST_CASE("synth_scene is deterministic and rejects unknown presets") {
    const SynthScene a = synth_scene("single-box", 3);
    const SynthScene b = synth_scene("single-box", 3);
    CHECK(a.target_mask == b.target_mask);
    REQUIRE(a.depth_gt.size() == b.depth_gt.size());
    CHECK(a.depth_gt[0] == b.depth_gt[0]);
    CHECK_THROWS_AS(synth_scene("hexagon", 0), UnknownPreset);
}

TEST_CASE("single-box mask area matches the box footprint") {
    const SynthScene s = synth_scene("single-box", 0);
    std::size_t area = 0;
    for (std::uint8_t m : s.target_mask) {
        area += m;
    }
    // 8 m x 8 m box at 0.5 m resolution: 16 x 16 pixels.
    CHECK(area == 256);
}

TEST_CASE("lane-stripe mask is two pixels wide") {
    const SynthScene s = synth_scene("lane-stripe", 0);
    const int cols = s.cfg.cols();
    const int rows = s.cfg.rows();
    bool saw_stripe_row = false;
    for (int r = 0; r < rows; ++r) {
        int width = 0;
        for (int c = 0; c < cols; ++c) {
            width += s.target_mask[static_cast<std::size_t>(r) * cols + c];
        }
        if (width > 0) {
            saw_stripe_row = true;
            CHECK(width == 2); // 1 m stripe at 0.5 m/px
        }
    }
    CHECK(saw_stripe_row);
}

TEST_CASE("two-boxes preset uses two cameras with valid depth maps") {
    const SynthScene s = synth_scene("two-boxes", 0);
    REQUIRE(s.calibs.size() == 2);
    REQUIRE(s.depth_gt.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        s.calibs[k].check(1e-9);
        for (double z : s.depth_gt[k]) {
            CHECK(z > 0.0);
        }
    }
}

TEST_CASE("iou matches hand values") {
    const std::vector<std::uint8_t> a{1, 1, 0, 0};
    CHECK(iou(a, a) == 1.0);
    const std::vector<std::uint8_t> b{0, 0, 1, 1};
    CHECK(iou(a, b) == 0.0);
    // Half-overlapping equal-area boxes: |I| = 1, |U| = 3.
    const std::vector<std::uint8_t> c{1, 1, 0, 0};
    const std::vector<std::uint8_t> d{0, 1, 1, 0};
    CHECK(iou(c, d) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const std::vector<std::uint8_t> empty{0, 0, 0, 0};
    CHECK(iou(empty, empty) == 1.0);
}

TEST_CASE("zero learning rate leaves the loss constant") {
    FitProblem p = make_fit_problem("single-box", 0);
    p.optimizer.learning_rate = 0.0;
    p.optimizer.steps = 5;
    const FitResult r = fit(p);
    for (double loss : r.report.losses) {
        CHECK(loss == r.report.losses.front());
    }
}

TEST_CASE("loss decreases within 50 steps on single-box") {
    FitProblem p = make_fit_problem("single-box", 0);
    p.optimizer.steps = 50;
    const FitResult r = fit(p);
    CHECK(r.report.losses.back() < r.report.losses.front());
}

TEST_CASE("fit runs are bitwise reproducible") {
    FitProblem p = make_fit_problem("two-boxes", 7);
    p.optimizer.steps = 10;
    const FitResult a = fit(p);
    const FitResult b = fit(p);
    CHECK(a.report.losses == b.report.losses);
    CHECK(a.report.final_iou == b.report.final_iou);
    CHECK(a.report.final_depth_log_error == b.report.final_depth_log_error);
    REQUIRE(a.scene.size() == b.scene.size());
    for (std::size_t i = 0; i < a.scene.size(); ++i) {
        CHECK(a.scene.center(i) == b.scene.center(i));
    }
}

TEST_CASE("fit reports divergence with the failing step") {
    FitProblem p = make_fit_problem("single-box", 0);
    p.optimizer.steps = 3;
    p.head.bias = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(fit(p), doctest::Contains("step 0"), DivergenceDetected);
}

TEST_CASE("uncertainty mode optimizes the s parameters") {
    FitProblem p = make_fit_problem("single-box", 1);
    p.weights.mode = WeightMode::uncertainty;
    p.weights.s_params = {0.0, 0.0};
    p.optimizer.steps = 5;
    const FitResult r = fit(p);
    CHECK(std::isfinite(r.report.losses.back()));
    CHECK(r.report.losses.back() != r.report.losses.front());
}

TEST_CASE("end-to-end gradients match finite differences") {
    for (const CheckResult& r : check_end_to_end_gradients(4242, 1e-4)) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_SUITE_END();
