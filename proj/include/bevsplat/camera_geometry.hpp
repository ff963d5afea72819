// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_CAMERA_GEOMETRY_HPP
#define BEVSPLAT_CAMERA_GEOMETRY_HPP

#include "bevsplat/gaussian_scene.hpp"
#include "bevsplat/types.hpp"

#include <string>
#include <vector>

namespace bevsplat {

// Disparity below this is clamped before depth decoding (max depth ~ 999 * fx/f_ref).
inline constexpr double kDisparityMin = 1e-3;

// Pinhole camera with camera-to-world pose and the reference focal length the
// disparity head was normalized to. Intrinsics are expressed at feature-map
// resolution; (u, v) are integer pixel centers of the feature grid.
struct CameraCalib {
    std::string name;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 R = Mat3::Identity(); // camera-to-world, orthonormal
    Vec3 t = Vec3::Zero();     // camera origin in world (m)
    int width = 0;             // feature-grid dims
    int height = 0;
    double f_ref = 1.0;

    // Throws ValidationFailed if R is not orthonormal with det 1 (within tol)
    // or a focal length is not positive.
    void check(double tol = 1e-9) const;

    Quat rotation_quat() const { return Quat::from_matrix(R); }
};

// Per-pixel undecoded head outputs for one camera. disparity is stored
// post-sigmoid (always in [0,1]); pixel i maps to u = i % width, v = i / width.
struct RawHeadGrid {
    int width = 0;
    int height = 0;
    int feature_dim = 0;
    std::vector<double> disparity;     // n
    std::vector<double> offset;        // 3n, (dx, dy, dz) meters
    std::vector<double> quat_raw;      // 4n, (w, x, y, z), unnormalized
    std::vector<double> scale_raw;     // 3n
    std::vector<double> opacity_logit; // n
    std::vector<double> embedding;     // feature_dim * n

    int n_pixels() const { return width * height; }
    void resize(int w, int h, int dim);
};

struct DepthDecode {
    double z;     // meters
    double dz_dd; // zero where the disparity clamp was active
};

// Eq. z = (fx / f_ref) * (1/d - 1), with d clamped to [kDisparityMin, 1].
DepthDecode decode_depth(double disparity, const CameraCalib& calib);

// Inverse of decode_depth on the unclamped branch.
double encode_depth(double z, const CameraCalib& calib);

struct Backprojection {
    Vec3 p_c;       // camera frame, meters
    Mat3 jacobian;  // d(p_c)/d(u, v, z)
};

// p_c = K^-1 * (z u, z v, z).
Backprojection backproject(double u, double v, double z, const CameraCalib& calib);

// p_bar = p_c + delta. Jacobian wrt both inputs is the identity.
inline Vec3 apply_offset(const Vec3& p_c, const Vec3& delta) { return p_c + delta; }

// p_w = R p_bar + t. Jacobian wrt p_bar is R.
inline Vec3 cam_to_world_point(const Vec3& p_bar, const CameraCalib& calib) {
    return calib.R * p_bar + calib.t;
}

// Minimal (geodesic) rotation taking the axis (0,0,1) onto the unit ray through
// pixel (u, v). The twist about the ray is left at zero.
Quat ray_quaternion(double u, double v, const CameraCalib& calib);

struct ComposedRotation {
    Quat q_w;          // world rotation, unit, w >= 0
    Mat4 d_qw_d_qraw;  // through normalization of q_raw (and the sign flip)
};

// q_e = q_ray * q_allo with q_allo = q_raw / |q_raw|; q_w = q_R * q_e.
// Throws ZeroQuaternion if |q_raw| < 1e-12.
ComposedRotation compose_rotation(const Quat& q_ray, const Vec4& q_raw, const CameraCalib& calib);

// Composition for already-normalized inputs, no Jacobian.
Quat compose_rotation(const Quat& q_ray, const Quat& q_allo, const CameraCalib& calib);

// Everything needed to pull BeV-side gradients back to the raw head outputs.
// The world-frame center depends on raw parameters only through disparity and
// offset at fixed (u, v), so those Jacobians collapse to one vector and one
// shared matrix per camera.
struct DecodeJacobians {
    std::vector<double> dz_dd;        // n
    std::vector<Vec3> dpw_dd;         // n: R * ray_dir * dz_dd
    Mat3 dpw_doffset = Mat3::Identity(); // = calib.R, shared by all pixels
    std::vector<Mat4> dqw_dqraw;      // n
    std::vector<Vec3> dscale_draw;    // n, diagonal entries (sign(raw) or 0)
    std::vector<double> dopacity_dlogit; // n
};

struct DecodedCamera {
    GaussianScene scene;
    DecodeJacobians jacobians;
};

// Chains decode_depth -> backproject -> apply_offset -> cam_to_world_point and
// ray_quaternion -> compose_rotation for every pixel; scale = |scale_raw|
// (clamped at kSigmaMin), opacity = sigmoid(opacity_logit), embedding passed
// through. Output order is by pixel index regardless of parallelism.
DecodedCamera decode_camera(const RawHeadGrid& raw, const CameraCalib& calib, int threads = 0);

// Gradients with respect to the raw head outputs, same layout as RawHeadGrid.
struct RawHeadGradients {
    std::vector<double> d_disparity;
    std::vector<double> d_offset;
    std::vector<double> d_quat_raw;
    std::vector<double> d_scale_raw;
    std::vector<double> d_opacity_logit;
    std::vector<double> d_embedding;
};

struct GradientBundle; // bev_rasterizer.hpp

// Pulls per-gaussian gradients (rows [first, first + n_pixels) of the bundle)
// back through the decode Jacobians to the raw parameters of one camera.
RawHeadGradients pull_back_decode(const DecodeJacobians& jac, const RawHeadGrid& raw,
                                  const GradientBundle& bundle, std::size_t first);

} // namespace bevsplat

#endif
