// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/gaussian_scene.hpp"
#include "bevsplat/gradcheck.hpp"

#include <doctest.h>

#include <cmath>

using namespace bevsplat;

namespace {

Gaussian make_gaussian(int dim = 1) {
    Gaussian g;
    g.embedding.assign(dim, 0.5);
    return g;
}

} // namespace

TEST_SUITE_BEGIN("gaussian_scene");

TEST_CASE("covariance of an axis-aligned gaussian is diagonal") {
    const Mat3 cov = covariance_3d(Quat::identity(), {1, 2, 3});
    CHECK(cov.isApprox(Vec3{1, 4, 9}.asDiagonal().toDenseMatrix(), 1e-15));
}

TEST_CASE("covariance follows the rotation") {
    // rot_z(90 deg) swaps the x/y principal axes.
    const Quat q{std::sqrt(0.5), 0, 0, std::sqrt(0.5)};
    const Mat3 cov = covariance_3d(q, {1, 2, 1});
    CHECK((cov - Vec3{4, 1, 1}.asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("covariance trace is rotation invariant") {
    Rng rng(41);
    for (int i = 0; i < 30; ++i) {
        const Quat q = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        const Vec3 s{rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
        const Mat3 cov = covariance_3d(q, s);
        CHECK(cov.trace() == doctest::Approx(s.squaredNorm()).epsilon(1e-12));
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
        // Exact sign-flip invariance: the matrix form is quadratic in q.
        const Mat3 flipped = covariance_3d(Quat{-q.w, -q.x, -q.y, -q.z}, s);
        CHECK((cov - flipped).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("covariance eigenvalues are the squared scales") {
    Rng rng(43);
    const Quat q = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
    const Vec3 s{0.4, 1.1, 2.3};
    Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance_3d(q, s));
    const Vec3 expected{0.16, 1.21, 5.29};
    CHECK(eig.eigenvalues().isApprox(expected, 1e-9));
}

TEST_CASE("covariance Jacobians match finite differences") {
    Rng rng(47);
    for (int i = 0; i < 10; ++i) {
        const Quat q = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        const Vec3 s{rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
        const CovarianceJacobian cj = covariance_3d_jacobian(q, s);
        const auto f = [&](const std::vector<double>& x) {
            const Mat3 cov = covariance_3d(Quat{x[0], x[1], x[2], x[3]}, Vec3{x[4], x[5], x[6]});
            std::vector<double> flat(9);
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) {
                    flat[3 * r + c] = cov(r, c);
                }
            }
            return flat;
        };
        const std::vector<double> fd = finite_difference_jacobian(f, {q.w, q.x, q.y, q.z, s.x(), s.y(), s.z()});
        std::vector<double> analytic(9 * 7);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                for (int k = 0; k < 4; ++k) {
                    analytic[(3 * r + c) * 7 + k] = cj.d_cov_d_quat[k](r, c);
                }
                for (int k = 0; k < 3; ++k) {
                    analytic[(3 * r + c) * 7 + 4 + k] = cj.d_cov_d_scale[k](r, c);
                }
            }
        }
        CHECK(max_relative_error(analytic, fd) <= 1e-5);
    }
}

TEST_CASE("concat preserves order and validates feature dims") {
    GaussianScene a(2);
    for (int i = 0; i < 3; ++i) {
        Gaussian g = make_gaussian(2);
        g.center = {static_cast<double>(i), 0, 0};
        a.push_back(g);
    }
    GaussianScene b(2);
    for (int i = 0; i < 2; ++i) {
        Gaussian g = make_gaussian(2);
        g.center = {10.0 + i, 0, 0};
        b.push_back(g);
    }

    const GaussianScene joined = concat_scenes(std::vector<GaussianScene>{a, b});
    REQUIRE(joined.size() == 5);
    CHECK(joined.center(0).x() == 0.0);
    CHECK(joined.center(2).x() == 2.0);
    CHECK(joined.center(3).x() == 10.0);

    CHECK(concat_scenes({}).size() == 0);
    const GaussianScene solo = concat_scenes(std::vector<GaussianScene>{a});
    CHECK(solo.size() == a.size());
    CHECK(solo.center(1) == a.center(1));

    GaussianScene mismatched(3);
    CHECK_THROWS_AS(concat_scenes(std::vector<GaussianScene>{a, mismatched}), FeatureDimMismatch);
}

TEST_CASE("validate reports invariant violations by index and field") {
    GaussianScene scene(1);
    scene.push_back(make_gaussian());
    scene.push_back(make_gaussian());
    CHECK(validate(scene).empty());

    scene.set_opacity(1, 1.5);
    auto violations = validate(scene);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].index == 1);
    CHECK(violations[0].field == "opacity");

    scene.set_opacity(1, 0.5);
    scene.set_rotation(0, Quat{2, 0, 0, 0});
    violations = validate(scene);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].index == 0);
    CHECK(violations[0].field == "rotation");

    scene.set_rotation(0, Quat::identity());
    scene.set_scale(1, {1.0, 0.0, 1.0});
    violations = validate(scene);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].field == "scale");
}

TEST_SUITE_END();
