// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef BEVSPLAT_GAUSSIAN_SCENE_HPP
#define BEVSPLAT_GAUSSIAN_SCENE_HPP

#include "bevsplat/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bevsplat {

// Minimum per-axis standard deviation (meters). Keeps every 3D covariance invertible.
inline constexpr double kSigmaMin = 1e-6;

// One anisotropic world-frame gaussian: center (m), per-axis sigma (m), unit
// rotation, opacity in (0,1) and a C-dimensional feature embedding.
struct Gaussian {
    Vec3 center = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Quat rotation = Quat::identity();
    double opacity = 0.5;
    std::vector<double> embedding;
};

// World-frame gaussian set. Storage is struct-of-arrays; ordering is stable
// (camera-major, pixel row-major when produced by the decoder).
class GaussianScene {
  public:
    GaussianScene() = default;
    explicit GaussianScene(int feature_dim) : feature_dim_(feature_dim) {}

    int feature_dim() const { return feature_dim_; }
    std::size_t size() const { return opacities_.size(); }
    bool empty() const { return opacities_.empty(); }

    void push_back(const Gaussian& g);
    void resize(std::size_t n);
    Gaussian at(std::size_t i) const;

    Vec3 center(std::size_t i) const { return {centers_[3 * i], centers_[3 * i + 1], centers_[3 * i + 2]}; }
    Vec3 scale(std::size_t i) const { return {scales_[3 * i], scales_[3 * i + 1], scales_[3 * i + 2]}; }
    Quat rotation(std::size_t i) const {
        return {rotations_[4 * i], rotations_[4 * i + 1], rotations_[4 * i + 2], rotations_[4 * i + 3]};
    }
    double opacity(std::size_t i) const { return opacities_[i]; }
    std::span<const double> embedding(std::size_t i) const {
        return {embeddings_.data() + static_cast<std::size_t>(feature_dim_) * i,
                static_cast<std::size_t>(feature_dim_)};
    }

    void set_center(std::size_t i, const Vec3& p);
    void set_scale(std::size_t i, const Vec3& s);
    void set_rotation(std::size_t i, const Quat& q);
    void set_opacity(std::size_t i, double o) { opacities_[i] = o; }
    void set_embedding(std::size_t i, std::span<const double> e);

    std::span<const double> centers() const { return centers_; }
    std::span<const double> scales() const { return scales_; }
    std::span<const double> rotations() const { return rotations_; }
    std::span<const double> opacities() const { return opacities_; }
    std::span<const double> embeddings() const { return embeddings_; }

  private:
    int feature_dim_ = 0;
    std::vector<double> centers_;    // 3 per gaussian
    std::vector<double> scales_;     // 3 per gaussian
    std::vector<double> rotations_;  // 4 per gaussian (w, x, y, z)
    std::vector<double> opacities_;  // 1 per gaussian
    std::vector<double> embeddings_; // feature_dim per gaussian
};

// Sigma = R(q) diag(s^2) R(q)^T. Symmetric positive-definite for valid inputs;
// eigenvalues are s^2 up to ordering. Exactly invariant under q -> -q.
Mat3 covariance_3d(const Quat& q, const Vec3& scale);
inline Mat3 covariance_3d(const Gaussian& g) { return covariance_3d(g.rotation, g.scale); }

struct CovarianceJacobian {
    Mat3 cov;
    std::array<Mat3, 4> d_cov_d_quat; // d(Sigma)/dq_k, k over (w, x, y, z)
    std::array<Mat3, 3> d_cov_d_scale;
};

CovarianceJacobian covariance_3d_jacobian(const Quat& q, const Vec3& scale);

// Ordered concatenation. Throws FeatureDimMismatch if embedding dims differ.
GaussianScene concat_scenes(std::span<const GaussianScene> scenes);

struct Violation {
    std::size_t index;
    std::string field;
    std::string message;
};

struct ValidateOptions {
    double quat_tol = 1e-9;
    // Slack below kSigmaMin, used when validating scenes that round-tripped
    // through f32 storage.
    double scale_slack = 0.0;
};

// Empty result iff every gaussian invariant holds; violations name index and field.
std::vector<Violation> validate(const GaussianScene& scene, const ValidateOptions& opts = {});

} // namespace bevsplat

#endif
