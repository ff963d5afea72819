// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_IO_HPP
#define BEVSPLAT_IO_HPP

#include "bevsplat/bev_rasterizer.hpp"
#include "bevsplat/camera_geometry.hpp"
#include "bevsplat/gaussian_scene.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bevsplat {

struct CalibFile {
    double f_ref = 1.0;
    std::vector<CameraCalib> cameras;
};

// JSON: { "f_ref": number, "cameras": [ { "name", "fx","fy","cx","cy",
// "R" (9 row-major), "t" (3), "width","height" } ] }. R is checked for
// orthonormality at 1e-6 on load, then snapped back onto SO(3) so the
// in-memory invariant holds at full precision.
CalibFile load_calib(const std::filesystem::path& path);
void save_calib(const std::filesystem::path& path, const CalibFile& calib);

// Binary scene format "GSBV" v1, little-endian: magic, version u32, count u32,
// C u32, then per gaussian f32: center*3, scale*3, quaternion (w,x,y,z)*4,
// opacity, embedding*C.
void save_scene(const std::filesystem::path& path, const GaussianScene& scene);
GaussianScene load_scene(const std::filesystem::path& path);

// PFM ("Pf"/"PF", scale -1.0 = little-endian, rows bottom-to-top) for 1- and
// 3-channel grids; other channel counts are written as C single-channel planes
// after a "PFSTACK <C>" header line. See docs/formats.md.
void save_grid_pfm(const std::filesystem::path& path, const BevGrid& grid);
BevGrid load_grid_pfm(const std::filesystem::path& path);

// Binary masks as 8-bit PGM (0 / 255).
void save_mask_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> mask, int rows,
                   int cols);
std::vector<std::uint8_t> load_mask_pgm(const std::filesystem::path& path, int& rows, int& cols);

// Top-3 principal components of the pixel-feature matrix (power iteration with
// deflation, fixed-seed init), each min-max normalized to [0,255], encoded as
// binary PPM. Grids with fewer than 3 channels are replicated to gray;
// zero-variance inputs map to a uniform 128.
std::vector<std::uint8_t> preview_pca(const BevGrid& grid);

// RenderConfig as JSON ({"x_range":[lo,hi],"y_range":[lo,hi],"resolution":...,
// plus threshold fields}); absent fields keep their defaults.
RenderConfig load_render_config(const std::filesystem::path& path);
void save_render_config(const std::filesystem::path& path, const RenderConfig& cfg);

// Write-then-rename so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

} // namespace bevsplat

#endif
