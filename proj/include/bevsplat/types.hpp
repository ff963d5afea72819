// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_TYPES_HPP
#define BEVSPLAT_TYPES_HPP

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace bevsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Base class for all domain errors raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ZeroQuaternion : public Error {
  public:
    using Error::Error;
};
class FeatureDimMismatch : public Error {
  public:
    using Error::Error;
};
class EmptyMask : public Error {
  public:
    using Error::Error;
};
class NonPositiveDepth : public Error {
  public:
    using Error::Error;
};
class DivergenceDetected : public Error {
  public:
    using Error::Error;
};
class UnknownPreset : public Error {
  public:
    using Error::Error;
};
class BadMagic : public Error {
  public:
    using Error::Error;
};
class VersionUnsupported : public Error {
  public:
    using Error::Error;
};
class TruncatedFile : public Error {
  public:
    using Error::Error;
};
class ValidationFailed : public Error {
  public:
    using Error::Error;
};
class ConfigMismatch : public Error {
  public:
    using Error::Error;
};
class MalformedHeader : public Error {
  public:
    using Error::Error;
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Unit quaternion, Hamilton convention, scalar-first (w, x, y, z).
struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}
    explicit Quat(const Vec4& v) : w(v[0]), x(v[1]), y(v[2]), z(v[3]) {}

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    Vec4 coeffs() const { return {w, x, y, z}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    // Sign-canonical representative of the double cover: w >= 0.
    Quat canonical() const {
        if (w < 0.0) {
            return {-w, -x, -y, -z};
        }
        return *this;
    }

    Quat conjugate() const { return {w, -x, -y, -z}; }

    friend Quat operator*(const Quat& a, const Quat& b) {
        return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
    }

    // Matrix of left multiplication: (a * b).coeffs() == a.left_matrix() * b.coeffs().
    Mat4 left_matrix() const {
        Mat4 m;
        m << w, -x, -y, -z, //
            x, w, -z, y,    //
            y, z, w, -x,    //
            z, -y, x, w;
        return m;
    }

    // Rotation matrix of the quaternion. Uses the quadratic (unit-norm) form, so the
    // map extends smoothly off the unit sphere; Jacobians below differentiate this
    // extension.
    Mat3 to_matrix() const {
        Mat3 m;
        m << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), //
            2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),  //
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
        return m;
    }

    Vec3 rotate(const Vec3& v) const { return to_matrix() * v; }

    // d(to_matrix)/dq_k for k in {w, x, y, z}.
    static std::array<Mat3, 4> matrix_jacobian(const Quat& q) {
        const double w = q.w, x = q.x, y = q.y, z = q.z;
        Mat3 dw, dx, dy, dz;
        dw << 0, -2 * z, 2 * y, //
            2 * z, 0, -2 * x,   //
            -2 * y, 2 * x, 0;
        dx << 0, 2 * y, 2 * z, //
            2 * y, -4 * x, -2 * w, //
            2 * z, 2 * w, -4 * x;
        dy << -4 * y, 2 * x, 2 * w, //
            2 * x, 0, 2 * z,        //
            -2 * w, 2 * z, -4 * y;
        dz << -4 * z, -2 * w, 2 * x, //
            2 * w, -4 * z, 2 * y,    //
            2 * x, 2 * y, 0;
        return {dw, dx, dy, dz};
    }

    // Shepperd-style conversion; input must be a rotation matrix. Result has w >= 0.
    static Quat from_matrix(const Mat3& r) {
        Quat q;
        const double trace = r.trace();
        if (trace > 0.0) {
            double s = std::sqrt(trace + 1.0) * 2.0;
            q.w = 0.25 * s;
            q.x = (r(2, 1) - r(1, 2)) / s;
            q.y = (r(0, 2) - r(2, 0)) / s;
            q.z = (r(1, 0) - r(0, 1)) / s;
        } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
            double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
            q.w = (r(2, 1) - r(1, 2)) / s;
            q.x = 0.25 * s;
            q.y = (r(0, 1) + r(1, 0)) / s;
            q.z = (r(0, 2) + r(2, 0)) / s;
        } else if (r(1, 1) > r(2, 2)) {
            double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
            q.w = (r(0, 2) - r(2, 0)) / s;
            q.x = (r(0, 1) + r(1, 0)) / s;
            q.y = 0.25 * s;
            q.z = (r(1, 2) + r(2, 1)) / s;
        } else {
            double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
            q.w = (r(1, 0) - r(0, 1)) / s;
            q.x = (r(0, 2) + r(2, 0)) / s;
            q.y = (r(1, 2) + r(2, 1)) / s;
            q.z = 0.25 * s;
        }
        return q.normalized().canonical();
    }
};

// Deterministic RNG. mt19937_64 bit stream with hand-rolled value mapping so the
// same seed yields the same doubles on every standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller on our own uniforms; deterministic across platforms.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t bits() { return gen_(); }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace bevsplat

#endif
