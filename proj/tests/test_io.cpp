// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace bevsplat;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("bevsplat_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::filesystem::path file(const std::string& name) const { return path / name; }
};

GaussianScene random_scene(Rng& rng, std::size_t count, int dim) {
    GaussianScene scene(dim);
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian g;
        g.center = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-2, 2)};
        g.scale = {rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0)};
        g.rotation = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized().canonical();
        g.opacity = rng.uniform(0.05, 0.95);
        g.embedding.resize(dim);
        for (int ch = 0; ch < dim; ++ch) {
            g.embedding[ch] = rng.normal();
        }
        scene.push_back(g);
    }
    return scene;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_SUITE_BEGIN("io");

TEST_CASE("scene files round trip losslessly at f32") {
    TempDir dir;
    Rng rng(55);
    const GaussianScene scene = random_scene(rng, 17, 5);
    const auto path = dir.file("scene.gsb");
    save_scene(path, scene);

    const GaussianScene loaded = load_scene(path);
    REQUIRE(loaded.size() == scene.size());
    REQUIRE(loaded.feature_dim() == 5);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        CHECK(loaded.center(i).x() == static_cast<double>(static_cast<float>(scene.center(i).x())));
        CHECK(loaded.opacity(i) == static_cast<double>(static_cast<float>(scene.opacity(i))));
        CHECK(loaded.embedding(i)[4] ==
              static_cast<double>(static_cast<float>(scene.embedding(i)[4])));
    }

    // Byte-stable second generation.
    const auto path2 = dir.file("scene2.gsb");
    save_scene(path2, loaded);
    CHECK(read_bytes(path) == read_bytes(path2));

    // Stated length: 16-byte header + (11 + C) f32 per gaussian.
    CHECK(std::filesystem::file_size(path) == 16 + scene.size() * (11 + 5) * 4);
}

TEST_CASE("scene loader rejects malformed files") {
    TempDir dir;
    Rng rng(56);
    const GaussianScene scene = random_scene(rng, 3, 2);
    const auto good = dir.file("good.gsb");
    save_scene(good, scene);
    std::vector<std::uint8_t> bytes = read_bytes(good);

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        atomic_write(dir.file("bad.gsb"), std::span<const std::uint8_t>(bytes));
        CHECK_THROWS_AS(load_scene(dir.file("bad.gsb")), BadMagic);
    }
    SUBCASE("unsupported version") {
        bytes[4] = 9;
        atomic_write(dir.file("bad.gsb"), std::span<const std::uint8_t>(bytes));
        CHECK_THROWS_AS(load_scene(dir.file("bad.gsb")), VersionUnsupported);
    }
    SUBCASE("truncated embedding block") {
        bytes.resize(bytes.size() - 5);
        atomic_write(dir.file("bad.gsb"), std::span<const std::uint8_t>(bytes));
        CHECK_THROWS_AS(load_scene(dir.file("bad.gsb")), TruncatedFile);
    }
    SUBCASE("invariant violations fail validation") {
        // Opacity of gaussian 0 lives after the 16-byte header + 10 floats.
        const float bad = 1.5f;
        std::memcpy(bytes.data() + 16 + 10 * 4, &bad, 4);
        atomic_write(dir.file("bad.gsb"), std::span<const std::uint8_t>(bytes));
        CHECK_THROWS_AS(load_scene(dir.file("bad.gsb")), ValidationFailed);
    }
}

TEST_CASE("pfm grids round trip for 1, 3 and stacked channel counts") {
    TempDir dir;
    Rng rng(57);
    for (int dim : {1, 3, 8}) {
        RenderConfig cfg;
        cfg.x_min = 0;
        cfg.x_max = 2.5;
        cfg.y_min = 0;
        cfg.y_max = 1.5;
        BevGrid grid = make_grid(cfg, dim);
        for (double& v : grid.data) {
            v = static_cast<float>(rng.normal()); // f32-representable input
        }
        const auto path = dir.file("grid" + std::to_string(dim) + ".pfm");
        save_grid_pfm(path, grid);
        const BevGrid loaded = load_grid_pfm(path);
        CHECK(loaded.rows == grid.rows);
        CHECK(loaded.cols == grid.cols);
        CHECK(loaded.channels == dim);
        CHECK(loaded.data == grid.data);
    }
}

TEST_CASE("pfm stores rows bottom-to-top") {
    TempDir dir;
    RenderConfig cfg;
    cfg.x_min = 0;
    cfg.x_max = 0.5;
    cfg.y_min = 0;
    cfg.y_max = 1.0;
    BevGrid grid = make_grid(cfg, 1); // 2 rows x 1 col
    grid.at(0, 0, 0) = 7.0;
    grid.at(1, 0, 0) = 3.0;
    const auto path = dir.file("rows.pfm");
    save_grid_pfm(path, grid);

    const std::vector<std::uint8_t> bytes = read_bytes(path);
    // Header "Pf\n1 2\n-1.0\n" then two f32: bottom row (3.0) first, row 0 last.
    float first, second;
    std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
    std::memcpy(&second, bytes.data() + bytes.size() - 4, 4);
    CHECK(first == 3.0f);
    CHECK(second == 7.0f);
}

TEST_CASE("pfm stack header names the channel count") {
    TempDir dir;
    RenderConfig cfg;
    cfg.x_min = 0;
    cfg.x_max = 1.0;
    cfg.y_min = 0;
    cfg.y_max = 1.0;
    BevGrid grid = make_grid(cfg, 8);
    const auto path = dir.file("stack.pfm");
    save_grid_pfm(path, grid);
    const std::vector<std::uint8_t> bytes = read_bytes(path);
    const std::string head(bytes.begin(), bytes.begin() + 10);
    CHECK(head == "PFSTACK 8\n");
}

TEST_CASE("pfm loader rejects malformed headers") {
    TempDir dir;
    atomic_write(dir.file("bad.pfm"), std::string("P6\n1 1\n255\nxxx"));
    CHECK_THROWS_AS(load_grid_pfm(dir.file("bad.pfm")), MalformedHeader);
    // Positive scale marks big-endian data, which the loader does not accept.
    atomic_write(dir.file("bad2.pfm"), std::string("Pf\n1 1\n1.0\nWXYZ"));
    CHECK_THROWS_AS(load_grid_pfm(dir.file("bad2.pfm")), MalformedHeader);
}

TEST_CASE("masks round trip through pgm") {
    TempDir dir;
    const std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 0};
    save_mask_pgm(dir.file("m.pgm"), mask, 2, 3);
    int rows = 0, cols = 0;
    const std::vector<std::uint8_t> loaded = load_mask_pgm(dir.file("m.pgm"), rows, cols);
    CHECK(rows == 2);
    CHECK(cols == 3);
    CHECK(loaded == mask);
}

TEST_CASE("calibration files round trip and reject bad rotations") {
    TempDir dir;
    CalibFile calib;
    calib.f_ref = 320.0;
    CameraCalib cam;
    cam.name = "front";
    cam.fx = 120.0;
    cam.fy = 121.0;
    cam.cx = 15.5;
    cam.cy = 8.25;
    cam.R = Quat{0.9, 0.1, -0.2, 0.3}.normalized().to_matrix();
    cam.t = {1.0, -2.0, 0.5};
    cam.width = 32;
    cam.height = 18;
    cam.f_ref = calib.f_ref;
    calib.cameras.push_back(cam);

    save_calib(dir.file("calib.json"), calib);
    const CalibFile loaded = load_calib(dir.file("calib.json"));
    REQUIRE(loaded.cameras.size() == 1);
    CHECK(loaded.f_ref == 320.0);
    CHECK(loaded.cameras[0].fx == 120.0);
    CHECK((loaded.cameras[0].R - cam.R).cwiseAbs().maxCoeff() <= 1e-9);
    loaded.cameras[0].check(1e-9);

    // Scaled rotation fails the 1e-6 orthonormality gate.
    std::ifstream in(dir.file("calib.json"));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    nlohmann::json j = nlohmann::json::parse(text);
    for (auto& v : j["cameras"][0]["R"]) {
        v = v.get<double>() * 1.001;
    }
    atomic_write(dir.file("bad.json"), j.dump());
    CHECK_THROWS_AS(load_calib(dir.file("bad.json")), ValidationFailed);
}

TEST_CASE("render config round trips through json") {
    TempDir dir;
    RenderConfig cfg;
    cfg.x_min = -10;
    cfg.x_max = 30;
    cfg.resolution = 0.25;
    cfg.t_stop = 0.0;
    cfg.threads = 2;
    save_render_config(dir.file("cfg.json"), cfg);
    const RenderConfig loaded = load_render_config(dir.file("cfg.json"));
    CHECK(loaded.x_min == cfg.x_min);
    CHECK(loaded.x_max == cfg.x_max);
    CHECK(loaded.resolution == cfg.resolution);
    CHECK(loaded.t_stop == cfg.t_stop);
    CHECK(loaded.threads == cfg.threads);
    CHECK(loaded.alpha_max == 0.99);
}

TEST_CASE("pca preview maps constant grids to uniform gray") {
    RenderConfig cfg;
    cfg.x_min = 0;
    cfg.x_max = 2.0;
    cfg.y_min = 0;
    cfg.y_max = 2.0;
    BevGrid grid = make_grid(cfg, 4);
    for (double& v : grid.data) {
        v = 3.25;
    }
    const std::vector<std::uint8_t> ppm = preview_pca(grid);
    const std::string header = "P6\n4 4\n255\n";
    REQUIRE(ppm.size() == header.size() + 3u * 16u);
    CHECK(std::string(ppm.begin(), ppm.begin() + header.size()) == header);
    for (std::size_t i = header.size(); i < ppm.size(); ++i) {
        CHECK(ppm[i] == 128);
    }
}

TEST_CASE("pca preview separates orthogonal channel patterns") {
    RenderConfig cfg;
    cfg.x_min = 0;
    cfg.x_max = 2.0;
    cfg.y_min = 0;
    cfg.y_max = 1.0;
    BevGrid grid = make_grid(cfg, 4); // 2 x 4 px, 4 channels
    // Channels carry mutually orthogonal zero-mean patterns with distinct
    // variances (Walsh functions over 8 pixels), channel 3 stays silent.
    const double walsh[3][8] = {{1, 1, 1, 1, -1, -1, -1, -1},
                                {1, 1, -1, -1, 1, 1, -1, -1},
                                {1, -1, 1, -1, 1, -1, 1, -1}};
    const double amp[3] = {3.0, 2.0, 1.0};
    for (int px = 0; px < 8; ++px) {
        for (int ch = 0; ch < 3; ++ch) {
            grid.data[static_cast<std::size_t>(px) * 4 + ch] = amp[ch] * walsh[ch][px];
        }
    }

    // Eigen-decomposition oracle: principal directions are the channel axes in
    // variance order, so component k must reproduce walsh[k] up to sign.
    const std::vector<std::uint8_t> ppm = preview_pca(grid);
    const std::size_t header = std::string("P6\n4 2\n255\n").size();
    for (int comp = 0; comp < 3; ++comp) {
        const int v0 = ppm[header + comp];
        for (int px = 0; px < 8; ++px) {
            const int v = ppm[header + 3 * px + comp];
            const double expected = walsh[comp][px] * walsh[comp][0]; // sign-aligned to pixel 0
            CHECK(v == (expected > 0 ? v0 : 255 - v0));
        }
    }
}

TEST_SUITE_END();
