// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/camera_geometry.hpp"

#include "bevsplat/bev_rasterizer.hpp"
#include "bevsplat/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace bevsplat {

void CameraCalib::check(double tol) const {
    if (!(fx > 0.0) || !(fy > 0.0) || !(f_ref > 0.0)) {
        throw ValidationFailed("camera '" + name + "': focal lengths must be positive");
    }
    const Mat3 gram = R.transpose() * R;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
        throw ValidationFailed("camera '" + name + "': R is not orthonormal");
    }
    if (std::abs(R.determinant() - 1.0) > tol) {
        throw ValidationFailed("camera '" + name + "': det(R) != 1");
    }
}

void RawHeadGrid::resize(int w, int h, int dim) {
    width = w;
    height = h;
    feature_dim = dim;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    disparity.assign(n, 0.5);
    offset.assign(3 * n, 0.0);
    quat_raw.assign(4 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        quat_raw[4 * i] = 1.0;
    }
    scale_raw.assign(3 * n, 1.0);
    opacity_logit.assign(n, 0.0);
    embedding.assign(static_cast<std::size_t>(dim) * n, 0.0);
}

DepthDecode decode_depth(double disparity, const CameraCalib& calib) {
    const double ratio = calib.fx / calib.f_ref;
    const bool clamped = disparity < kDisparityMin || disparity > 1.0;
    const double d = std::clamp(disparity, kDisparityMin, 1.0);
    DepthDecode out;
    out.z = ratio * (1.0 / d - 1.0);
    out.dz_dd = clamped ? 0.0 : -ratio / (d * d);
    return out;
}

double encode_depth(double z, const CameraCalib& calib) {
    return 1.0 / (z * calib.f_ref / calib.fx + 1.0);
}

Backprojection backproject(double u, double v, double z, const CameraCalib& calib) {
    const double rx = (u - calib.cx) / calib.fx;
    const double ry = (v - calib.cy) / calib.fy;
    Backprojection out;
    out.p_c = {rx * z, ry * z, z};
    out.jacobian << z / calib.fx, 0.0, rx, //
        0.0, z / calib.fy, ry,             //
        0.0, 0.0, 1.0;
    return out;
}

Quat ray_quaternion(double u, double v, const CameraCalib& calib) {
    const Vec3 ray{(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, 1.0};
    const Vec3 r = ray.normalized();
    // Half-angle form of the minimal rotation from (0,0,1) to r. r.z > 0 for any
    // pinhole feature-grid pixel, so the antipodal singularity cannot occur.
    const Quat q{1.0 + r.z(), -r.y(), r.x(), 0.0};
    return q.normalized().canonical();
}

Quat compose_rotation(const Quat& q_ray, const Quat& q_allo, const CameraCalib& calib) {
    const Quat q_e = q_ray * q_allo;
    const Quat q_w = calib.rotation_quat() * q_e;
    return q_w.normalized().canonical();
}

ComposedRotation compose_rotation(const Quat& q_ray, const Vec4& q_raw, const CameraCalib& calib) {
    const double n = q_raw.norm();
    if (n < 1e-12) {
        throw ZeroQuaternion("raw quaternion norm below 1e-12");
    }
    const Vec4 unit = q_raw / n;
    const Quat q_allo{unit};
    const Quat q_pre = calib.rotation_quat() * q_ray;

    ComposedRotation out;
    Quat q_w = q_pre * q_allo;
    // d(q_allo)/d(q_raw) through normalization, then left multiplication by q_pre.
    const Mat4 d_norm = (Mat4::Identity() - unit * unit.transpose()) / n;
    Mat4 jac = q_pre.left_matrix() * d_norm;
    if (q_w.w < 0.0) {
        q_w = Quat{-q_w.w, -q_w.x, -q_w.y, -q_w.z};
        jac = -jac;
    }
    out.q_w = q_w;
    out.d_qw_d_qraw = jac;
    return out;
}

DecodedCamera decode_camera(const RawHeadGrid& raw, const CameraCalib& calib, int threads) {
    if (raw.width != calib.width || raw.height != calib.height) {
        throw ValidationFailed("raw grid is " + std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                               " but camera '" + calib.name + "' expects " + std::to_string(calib.width) + "x" +
                               std::to_string(calib.height));
    }
    calib.check();

    const std::size_t n = static_cast<std::size_t>(raw.n_pixels());
    DecodedCamera out{GaussianScene(raw.feature_dim), {}};
    out.scene.resize(n);
    out.jacobians.dz_dd.resize(n);
    out.jacobians.dpw_dd.resize(n);
    out.jacobians.dpw_doffset = calib.R;
    out.jacobians.dqw_dqraw.resize(n);
    out.jacobians.dscale_draw.resize(n);
    out.jacobians.dopacity_dlogit.resize(n);

    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double u = static_cast<double>(i % raw.width);
            const double v = static_cast<double>(i / raw.width);

            const DepthDecode depth = decode_depth(raw.disparity[i], calib);
            const Backprojection bp = backproject(u, v, depth.z, calib);
            const Vec3 delta{raw.offset[3 * i], raw.offset[3 * i + 1], raw.offset[3 * i + 2]};
            const Vec3 p_w = cam_to_world_point(apply_offset(bp.p_c, delta), calib);

            const Quat q_ray = ray_quaternion(u, v, calib);
            const Vec4 q_raw{raw.quat_raw[4 * i], raw.quat_raw[4 * i + 1], raw.quat_raw[4 * i + 2],
                             raw.quat_raw[4 * i + 3]};
            ComposedRotation rot;
            try {
                rot = compose_rotation(q_ray, q_raw, calib);
            } catch (const ZeroQuaternion&) {
                throw ZeroQuaternion("zero raw quaternion at pixel " + std::to_string(i));
            }

            Vec3 scale;
            Vec3 dscale;
            for (int k = 0; k < 3; ++k) {
                const double sr = raw.scale_raw[3 * i + k];
                const double mag = std::abs(sr);
                if (mag > kSigmaMin) {
                    scale[k] = mag;
                    dscale[k] = sr > 0.0 ? 1.0 : -1.0;
                } else {
                    scale[k] = kSigmaMin;
                    dscale[k] = 0.0;
                }
            }

            const double o = sigmoid(raw.opacity_logit[i]);

            out.scene.set_center(i, p_w);
            out.scene.set_rotation(i, rot.q_w);
            out.scene.set_scale(i, scale);
            out.scene.set_opacity(i, o);
            out.scene.set_embedding(i, {raw.embedding.data() + static_cast<std::size_t>(raw.feature_dim) * i,
                                        static_cast<std::size_t>(raw.feature_dim)});

            out.jacobians.dz_dd[i] = depth.dz_dd;
            out.jacobians.dpw_dd[i] = calib.R * (bp.jacobian.col(2) * depth.dz_dd);
            out.jacobians.dqw_dqraw[i] = rot.d_qw_d_qraw;
            out.jacobians.dscale_draw[i] = dscale;
            out.jacobians.dopacity_dlogit[i] = o * (1.0 - o);
        }
    });
    return out;
}

RawHeadGradients pull_back_decode(const DecodeJacobians& jac, const RawHeadGrid& raw,
                                  const GradientBundle& bundle, std::size_t first) {
    const std::size_t n = static_cast<std::size_t>(raw.n_pixels());
    const int dim = raw.feature_dim;
    RawHeadGradients g;
    g.d_disparity.assign(n, 0.0);
    g.d_offset.assign(3 * n, 0.0);
    g.d_quat_raw.assign(4 * n, 0.0);
    g.d_scale_raw.assign(3 * n, 0.0);
    g.d_opacity_logit.assign(n, 0.0);
    g.d_embedding.assign(static_cast<std::size_t>(dim) * n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = first + i;
        const Vec3 d_pw{bundle.d_center[3 * j], bundle.d_center[3 * j + 1], bundle.d_center[3 * j + 2]};

        g.d_disparity[i] = jac.dpw_dd[i].dot(d_pw);

        const Vec3 d_offset = jac.dpw_doffset.transpose() * d_pw;
        for (int k = 0; k < 3; ++k) {
            g.d_offset[3 * i + k] = d_offset[k];
        }

        const Vec4 d_qw{bundle.d_rotation[4 * j], bundle.d_rotation[4 * j + 1], bundle.d_rotation[4 * j + 2],
                        bundle.d_rotation[4 * j + 3]};
        const Vec4 d_qraw = jac.dqw_dqraw[i].transpose() * d_qw;
        for (int k = 0; k < 4; ++k) {
            g.d_quat_raw[4 * i + k] = d_qraw[k];
        }

        for (int k = 0; k < 3; ++k) {
            g.d_scale_raw[3 * i + k] = jac.dscale_draw[i][k] * bundle.d_scale[3 * j + k];
        }

        g.d_opacity_logit[i] = jac.dopacity_dlogit[i] * bundle.d_opacity[j];

        for (int c = 0; c < dim; ++c) {
            g.d_embedding[static_cast<std::size_t>(dim) * i + c] =
                bundle.d_embedding[static_cast<std::size_t>(dim) * j + c];
        }
    }
    return g;
}

} // namespace bevsplat
