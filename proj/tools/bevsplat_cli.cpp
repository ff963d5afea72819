// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/fit_harness.hpp"
#include "bevsplat/gradcheck.hpp"
#include "bevsplat/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace bevsplat;

int cmd_render(const std::string& scene_path, const std::string& cfg_path, const std::string& out_path,
               const std::string& preview_path, bool naive) {
    const GaussianScene scene = load_scene(scene_path);
    RenderConfig cfg;
    if (!cfg_path.empty()) {
        cfg = load_render_config(cfg_path);
    }
    const BevGrid grid = naive ? render_naive(scene, cfg) : render(scene, cfg);
    save_grid_pfm(out_path, grid);
    if (!preview_path.empty()) {
        atomic_write(preview_path, std::span<const std::uint8_t>(preview_pca(grid)));
    }
    std::cout << "rendered " << scene.size() << " gaussians into " << grid.rows << "x" << grid.cols << "x"
              << grid.channels << " -> " << out_path << "\n";
    return 0;
}

int cmd_fit(const std::string& preset, std::uint64_t seed, int steps, double lr, double lambda_depth,
            const std::string& out_path, const std::string& report_path) {
    FitProblem problem = make_fit_problem(preset, seed);
    problem.optimizer.steps = steps;
    problem.optimizer.learning_rate = lr;
    problem.weights.lambda_depth = lambda_depth;

    const FitResult result = fit(problem);
    if (!out_path.empty()) {
        save_scene(out_path, result.scene);
    }
    if (!report_path.empty()) {
        nlohmann::json j;
        j["preset"] = preset;
        j["seed"] = seed;
        j["steps"] = steps;
        j["learning_rate"] = lr;
        j["lambda_depth"] = lambda_depth;
        j["losses"] = result.report.losses;
        j["final_iou"] = result.report.final_iou;
        j["final_depth_log_error"] = result.report.final_depth_log_error;
        j["wall_time_ms"] = result.report.wall_time_ms;
        atomic_write(report_path, j.dump(2) + "\n");
    }
    std::printf("fit %s seed=%llu: loss %.6f -> %.6f, IoU %.4f, depth log-err %.4f (%.0f ms)\n",
                preset.c_str(), static_cast<unsigned long long>(seed), result.report.losses.front(),
                result.report.losses.back(), result.report.final_iou,
                result.report.final_depth_log_error, result.report.wall_time_ms);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
    std::vector<CheckResult> results = check_geometry_gradients(seed, tol);
    for (CheckResult& r : check_render_gradients(seed + 1, tol)) {
        results.push_back(std::move(r));
    }
    for (CheckResult& r : check_end_to_end_gradients(seed + 2, std::max(tol, 1e-4))) {
        results.push_back(std::move(r));
    }
    bool ok = true;
    for (const CheckResult& r : results) {
        std::printf("%-40s max rel err %.3e (tol %.0e) %s\n", r.name.c_str(), r.max_rel_err, r.tol,
                    r.pass ? "ok" : "FAIL");
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

int cmd_synth(const std::string& preset, std::uint64_t seed, const std::string& mask_path,
              const std::string& calib_path) {
    const SynthScene synth = synth_scene(preset, seed);
    if (!mask_path.empty()) {
        save_mask_pgm(mask_path, synth.target_mask, synth.cfg.rows(), synth.cfg.cols());
    }
    if (!calib_path.empty()) {
        CalibFile calib;
        calib.f_ref = synth.calibs.front().f_ref;
        calib.cameras = synth.calibs;
        save_calib(calib_path, calib);
    }
    std::cout << "synthesized preset '" << preset << "' (" << synth.cfg.rows() << "x" << synth.cfg.cols()
              << " mask, " << synth.calibs.size() << " camera(s))\n";
    return 0;
}

int cmd_validate(const std::string& scene_path) {
    const GaussianScene scene = load_scene(scene_path);
    const std::vector<Violation> violations = validate(scene, {.quat_tol = 1e-6, .scale_slack = 1e-9});
    if (violations.empty()) {
        std::cout << scene_path << ": " << scene.size() << " gaussians, C=" << scene.feature_dim()
                  << ", all invariants hold\n";
        return 0;
    }
    for (const Violation& v : violations) {
        std::cerr << scene_path << ": gaussian " << v.index << " " << v.field << ": " << v.message << "\n";
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bevsplat: differentiable orthographic gaussian splatting for BeV feature grids"};
    app.require_subcommand(1);

    std::string scene_path, cfg_path, out_path, preview_path, report_path, mask_path, calib_path;
    std::string preset = "single-box";
    std::uint64_t seed = 0;
    int steps = 400;
    double lr = 0.05;
    double lambda_depth = 0.05;
    double tol = 1e-5;
    bool naive = false;

    CLI::App* render_cmd = app.add_subcommand("render", "splat a scene file into a BeV feature grid");
    render_cmd->add_option("--scene", scene_path, "input .gsb scene")->required();
    render_cmd->add_option("--cfg", cfg_path, "render config JSON (defaults: 100m x 100m at 0.5m)");
    render_cmd->add_option("--out", out_path, "output PFM grid")->required();
    render_cmd->add_option("--preview", preview_path, "optional PCA preview PPM");
    render_cmd->add_flag("--naive", naive, "use the reference per-pixel renderer");

    CLI::App* fit_cmd = app.add_subcommand("fit", "inverse-rendering fit on a synthetic preset");
    fit_cmd->add_option("--preset", preset, "single-box | two-boxes | lane-stripe");
    fit_cmd->add_option("--seed", seed, "deterministic seed");
    fit_cmd->add_option("--steps", steps, "gradient steps");
    fit_cmd->add_option("--lr", lr, "learning rate");
    fit_cmd->add_option("--lambda-depth", lambda_depth, "depth loss weight");
    fit_cmd->add_option("--out", out_path, "output scene file");
    fit_cmd->add_option("--report", report_path, "output report JSON");

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "run all finite-difference suites");
    grad_cmd->add_option("--seed", seed, "deterministic seed");
    grad_cmd->add_option("--tol", tol, "relative tolerance");

    CLI::App* synth_cmd = app.add_subcommand("synth", "write a preset's target mask and calibration");
    synth_cmd->add_option("--preset", preset, "single-box | two-boxes | lane-stripe");
    synth_cmd->add_option("--seed", seed, "deterministic seed");
    synth_cmd->add_option("--out-mask", mask_path, "output PGM mask");
    synth_cmd->add_option("--out-calib", calib_path, "output calibration JSON");

    CLI::App* validate_cmd = app.add_subcommand("validate", "check a scene file's invariants");
    validate_cmd->add_option("--scene", scene_path, "input .gsb scene")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (render_cmd->parsed()) {
            return cmd_render(scene_path, cfg_path, out_path, preview_path, naive);
        }
        if (fit_cmd->parsed()) {
            return cmd_fit(preset, seed, steps, lr, lambda_depth, out_path, report_path);
        }
        if (grad_cmd->parsed()) {
            return cmd_gradcheck(seed, tol);
        }
        if (synth_cmd->parsed()) {
            return cmd_synth(preset, seed, mask_path, calib_path);
        }
        if (validate_cmd->parsed()) {
            return cmd_validate(scene_path);
        }
    } catch (const bevsplat::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
