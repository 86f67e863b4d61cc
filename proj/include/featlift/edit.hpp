#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/scene.hpp"

namespace featlift {

template <typename Scalar>
struct Aabb {
    Vec3<Scalar> min;
    Vec3<Scalar> max;

    bool contains(const Vec3<Scalar>& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
};

template <typename Scalar>
struct RelevancyCriterion {
    VecX<Scalar> query;
    double threshold = 0.5;  // on cosine similarity
};

template <typename Scalar>
std::vector<int> select_gaussians(const GaussianScene<Scalar>& scene, const Aabb<Scalar>& box) {
    std::vector<int> out;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (box.contains(scene.gaussians[i].position)) out.push_back(static_cast<int>(i));
    }
    return out;
}

/// Gaussians whose feature has cosine similarity to the query above the threshold.
template <typename Scalar>
std::vector<int> select_gaussians(const GaussianScene<Scalar>& scene, const RelevancyCriterion<Scalar>& crit) {
    if (!scene.has_features()) throw InputError("relevancy selection needs a scene with features");
    if (crit.query.size() != scene.feature_dim()) {
        throw ConsistencyError("query dimension " + std::to_string(crit.query.size()) + " does not match scene feature dimension " +
                               std::to_string(scene.feature_dim()));
    }
    const double qn = crit.query.template cast<double>().norm();
    if (!(qn > 0)) throw InputError("query embedding has zero norm");
    std::vector<int> out;
    for (Eigen::Index i = 0; i < scene.features.rows(); ++i) {
        const auto f = scene.features.row(i).template cast<double>();
        const double fn = f.norm();
        if (!(fn > 0)) continue;
        const double cosine = f.dot(crit.query.template cast<double>().transpose()) / (fn * qn);
        if (cosine > crit.threshold) out.push_back(static_cast<int>(i));
    }
    return out;
}

// x -> scale * R x + translation, with uniform scale only.
template <typename Scalar>
struct SimilarityTransform {
    Eigen::Quaternion<Scalar> rotation = Eigen::Quaternion<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Scalar scale = Scalar(1);

    Vec3<Scalar> apply(const Vec3<Scalar>& p) const { return scale * (rotation.normalized() * p) + translation; }
};

namespace detail {

template <typename Scalar>
std::vector<Vec3<Scalar>> fibonacci_sphere(int n) {
    std::vector<Vec3<Scalar>> dirs;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < n; ++k) {
        const double z = 1.0 - 2.0 * (k + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        dirs.emplace_back(Scalar(r * std::cos(golden * k)), Scalar(r * std::sin(golden * k)), Scalar(z));
    }
    return dirs;
}

}  // namespace detail

/// Re-expresses SH color so that the rotated Gaussian seen along R d looks
/// like the original seen along d. Each band is rotated independently; the
/// per-band matrix is fitted from basis samples on a sphere (exact, since a
/// band is closed under rotation).
template <typename Scalar>
ShCoeffs<Scalar> rotate_sh(const ShCoeffs<Scalar>& coeffs, int degree, const Mat3<Scalar>& rotation) {
    ShCoeffs<Scalar> out = coeffs;
    if (degree < 1) return out;
    const auto dirs = detail::fibonacci_sphere<double>(64);
    const Eigen::Matrix3d rt = rotation.template cast<double>().transpose();
    Eigen::MatrixXd y_dir(dirs.size(), kMaxShCoeffs), y_rot(dirs.size(), kMaxShCoeffs);
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        y_dir.row(Eigen::Index(k)) = sh::basis<double>(dirs[k], degree).transpose();
        y_rot.row(Eigen::Index(k)) = sh::basis<double>(Eigen::Vector3d(rt * dirs[k]), degree).transpose();
    }
    for (int l = 1; l <= degree; ++l) {
        const int first = l * l;
        const int width = 2 * l + 1;
        const Eigen::MatrixXd a = y_dir.middleCols(first, width);
        const Eigen::MatrixXd b = y_rot.middleCols(first, width);
        const Eigen::MatrixXd band = a.colPivHouseholderQr().solve(b);
        out.middleRows(first, width) =
            (band * coeffs.template cast<double>().middleRows(first, width)).template cast<Scalar>();
    }
    return out;
}

/// Appends transformed copies of src[indices] to dst. Positions are mapped,
/// rotations composed, scales multiplied, SH re-oriented; opacity and features
/// are copied unchanged.
template <typename Scalar>
GaussianScene<Scalar> insert(const GaussianScene<Scalar>& src, std::span<const int> indices,
                             const SimilarityTransform<Scalar>& transform, const GaussianScene<Scalar>& dst) {
    if (!(transform.scale > Scalar(0))) throw InputError("insert: scale must be positive");
    if (!(transform.rotation.norm() > Scalar(0))) throw InputError("insert: zero rotation quaternion");
    // an empty destination adopts the source's feature dimension
    if (!dst.empty() && src.feature_dim() != dst.feature_dim()) {
        throw ConsistencyError("insert: source feature dimension " + std::to_string(src.feature_dim()) +
                               " differs from destination " + std::to_string(dst.feature_dim()));
    }
    for (int i : indices) {
        if (i < 0 || std::size_t(i) >= src.size()) throw InputError("insert: index " + std::to_string(i) + " out of range");
    }

    GaussianScene<Scalar> out = dst;
    if (indices.empty()) return out;
    if (dst.empty()) out.sh_degree = src.sh_degree;
    const int degree = std::min(src.sh_degree, out.sh_degree);
    const Eigen::Quaternion<Scalar> q = transform.rotation.normalized();
    const Mat3<Scalar> r = q.toRotationMatrix();

    if (dst.empty()) out.features.resize(0, src.feature_dim());
    const Eigen::Index old_rows = out.features.rows();
    if (src.has_features()) out.features.conservativeResize(Eigen::Index(dst.size() + indices.size()), src.feature_dim());
    Eigen::Index row = old_rows;
    for (int i : indices) {
        Gaussian<Scalar> g = src.gaussians[std::size_t(i)];
        g.position = transform.apply(g.position);
        g.rotation = (q * g.rotation.normalized()).normalized();
        g.scale *= transform.scale;
        g.sh = rotate_sh(g.sh, degree, r);
        if (degree < out.sh_degree) g.sh.bottomRows(kMaxShCoeffs - sh_coeff_count(degree)).setZero();
        out.gaussians.push_back(g);
        if (src.has_features()) out.features.row(row++) = src.features.row(i);
    }
    return out;
}

template <typename Scalar>
GaussianScene<Scalar> insert(const GaussianScene<Scalar>& src, const std::vector<int>& indices,
                             const SimilarityTransform<Scalar>& transform, const GaussianScene<Scalar>& dst) {
    return insert(src, std::span<const int>(indices), transform, dst);
}

/// Camera that sees the transformed scene exactly as `cam` sees the original.
template <typename Scalar>
CameraView<Scalar> transform_camera(const CameraView<Scalar>& cam, const SimilarityTransform<Scalar>& transform) {
    CameraView<Scalar> out = cam;
    const Mat3<Scalar> r = transform.rotation.normalized().toRotationMatrix();
    out.rotation = cam.rotation * r.transpose();
    out.translation = transform.scale * cam.translation - out.rotation * transform.translation;
    return out;
}

}  // namespace featlift
