// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/gaussian_scene.hpp"

#include <cmath>

namespace bevsplat {

void GaussianScene::push_back(const Gaussian& g) {
    if (static_cast<int>(g.embedding.size()) != feature_dim_) {
        throw FeatureDimMismatch("gaussian embedding has dim " + std::to_string(g.embedding.size()) +
                                 ", scene expects " + std::to_string(feature_dim_));
    }
    centers_.insert(centers_.end(), {g.center.x(), g.center.y(), g.center.z()});
    scales_.insert(scales_.end(), {g.scale.x(), g.scale.y(), g.scale.z()});
    rotations_.insert(rotations_.end(), {g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z});
    opacities_.push_back(g.opacity);
    embeddings_.insert(embeddings_.end(), g.embedding.begin(), g.embedding.end());
}

void GaussianScene::resize(std::size_t n) {
    centers_.resize(3 * n, 0.0);
    scales_.resize(3 * n, 1.0);
    rotations_.resize(4 * n, 0.0);
    opacities_.resize(n, 0.5);
    embeddings_.resize(static_cast<std::size_t>(feature_dim_) * n, 0.0);
}

Gaussian GaussianScene::at(std::size_t i) const {
    Gaussian g;
    g.center = center(i);
    g.scale = scale(i);
    g.rotation = rotation(i);
    g.opacity = opacities_[i];
    const auto e = embedding(i);
    g.embedding.assign(e.begin(), e.end());
    return g;
}

void GaussianScene::set_center(std::size_t i, const Vec3& p) {
    centers_[3 * i] = p.x();
    centers_[3 * i + 1] = p.y();
    centers_[3 * i + 2] = p.z();
}

void GaussianScene::set_scale(std::size_t i, const Vec3& s) {
    scales_[3 * i] = s.x();
    scales_[3 * i + 1] = s.y();
    scales_[3 * i + 2] = s.z();
}

void GaussianScene::set_rotation(std::size_t i, const Quat& q) {
    rotations_[4 * i] = q.w;
    rotations_[4 * i + 1] = q.x;
    rotations_[4 * i + 2] = q.y;
    rotations_[4 * i + 3] = q.z;
}

void GaussianScene::set_embedding(std::size_t i, std::span<const double> e) {
    if (static_cast<int>(e.size()) != feature_dim_) {
        throw FeatureDimMismatch("embedding dim mismatch in set_embedding");
    }
    std::copy(e.begin(), e.end(), embeddings_.begin() + static_cast<std::size_t>(feature_dim_) * i);
}

Mat3 covariance_3d(const Quat& q, const Vec3& scale) {
    const Mat3 r = q.to_matrix();
    const Vec3 s2 = scale.cwiseProduct(scale);
    const Mat3 m = r * s2.asDiagonal() * r.transpose();
    return 0.5 * (m + m.transpose()); // exact symmetry, product rounding is one-sided
}

CovarianceJacobian covariance_3d_jacobian(const Quat& q, const Vec3& scale) {
    CovarianceJacobian out;
    const Mat3 r = q.to_matrix();
    const Vec3 s2 = scale.cwiseProduct(scale);
    const Mat3 d = s2.asDiagonal();
    out.cov = covariance_3d(q, scale);

    const auto dr = Quat::matrix_jacobian(q);
    for (int k = 0; k < 4; ++k) {
        const Mat3 a = dr[k] * d * r.transpose();
        out.d_cov_d_quat[k] = a + a.transpose();
    }
    for (int j = 0; j < 3; ++j) {
        const Vec3 col = r.col(j);
        out.d_cov_d_scale[j] = 2.0 * scale[j] * (col * col.transpose());
    }
    return out;
}

GaussianScene concat_scenes(std::span<const GaussianScene> scenes) {
    if (scenes.empty()) {
        return GaussianScene(0);
    }
    const int dim = scenes.front().feature_dim();
    std::size_t total = 0;
    for (const auto& s : scenes) {
        if (s.feature_dim() != dim) {
            throw FeatureDimMismatch("cannot concatenate scenes with feature dims " + std::to_string(dim) +
                                     " and " + std::to_string(s.feature_dim()));
        }
        total += s.size();
    }
    GaussianScene out(dim);
    out.resize(total);
    std::size_t at = 0;
    for (const auto& s : scenes) {
        for (std::size_t i = 0; i < s.size(); ++i, ++at) {
            out.set_center(at, s.center(i));
            out.set_scale(at, s.scale(i));
            out.set_rotation(at, s.rotation(i));
            out.set_opacity(at, s.opacity(i));
            out.set_embedding(at, s.embedding(i));
        }
    }
    return out;
}

std::vector<Violation> validate(const GaussianScene& scene, const ValidateOptions& opts) {
    std::vector<Violation> out;
    const double scale_floor = kSigmaMin - opts.scale_slack;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 s = scene.scale(i);
        for (int k = 0; k < 3; ++k) {
            if (!(s[k] >= scale_floor) || !std::isfinite(s[k])) {
                out.push_back({i, "scale", "scale[" + std::to_string(k) + "] = " + std::to_string(s[k]) +
                                               " below sigma_min"});
                break;
            }
        }
        const double o = scene.opacity(i);
        if (!(o > 0.0 && o < 1.0)) {
            out.push_back({i, "opacity", "opacity = " + std::to_string(o) + " outside (0,1)"});
        }
        const double qn = scene.rotation(i).norm();
        if (!(std::abs(qn - 1.0) <= opts.quat_tol)) {
            out.push_back({i, "rotation", "quaternion norm = " + std::to_string(qn)});
        }
        const Vec3 c = scene.center(i);
        if (!c.allFinite()) {
            out.push_back({i, "center", "non-finite center"});
        }
        for (double e : scene.embedding(i)) {
            if (!std::isfinite(e)) {
                out.push_back({i, "embedding", "non-finite embedding entry"});
                break;
            }
        }
    }
    return out;
}

} // namespace bevsplat
