// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_GRADCHECK_HPP
#define BEVSPLAT_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bevsplat {

// Central-difference Jacobian of f at x, row-major m x n. The numeric side of
// every gradient check; intentionally knows nothing about the analytic paths.
std::vector<double> finite_difference_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-4);

// max over entries of |a - b| / max(1, |a|, |b|).
double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Analytic-vs-central-difference suites for camera_geometry, gaussian_scene
// and the losses, over `configs` seeded random configurations each.
std::vector<CheckResult> check_geometry_gradients(std::uint64_t seed, double tol, int configs = 100);

// Same for render_backward on small random scenes (thresholds disabled so the
// objective is smooth).
std::vector<CheckResult> check_render_gradients(std::uint64_t seed, double tol);

// Scalar fitting loss vs finite differences over every raw parameter of a
// 2-camera, 4-pixel problem.
std::vector<CheckResult> check_end_to_end_gradients(std::uint64_t seed, double tol);

// Everything above, with the acceptance tolerances.
std::vector<CheckResult> run_all_gradient_checks(std::uint64_t seed);

} // namespace bevsplat

#endif
