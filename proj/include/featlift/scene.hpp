#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "featlift/error.hpp"

namespace featlift {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major so that one row is one Gaussian (or one pixel) feature vector.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Spherical-harmonic color coefficients, one row per basis function and one
// column per RGB channel. Rows beyond the scene's degree are ignored.
template <typename Scalar>
using ShCoeffs = Eigen::Matrix<Scalar, kMaxShCoeffs, 3>;

template <typename Scalar>
struct Gaussian {
    Vec3<Scalar> position = Vec3<Scalar>::Zero();
    Vec3<Scalar> scale = Vec3<Scalar>::Ones();  // per-axis standard deviation
    Eigen::Quaternion<Scalar> rotation = Eigen::Quaternion<Scalar>::Identity();
    Scalar opacity = Scalar(0.5);
    ShCoeffs<Scalar> sh = ShCoeffs<Scalar>::Zero();
};

// Gaussians plus an optional N x d feature block. Keeping the features in one
// matrix makes "all present or all absent" hold by construction.
template <typename Scalar>
struct GaussianScene {
    std::vector<Gaussian<Scalar>> gaussians;
    RowMatrix<Scalar> features;  // N x d, or 0 x 0 when the scene carries no features
    int sh_degree = kMaxShDegree;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    int feature_dim() const { return static_cast<int>(features.cols()); }
    bool has_features() const { return features.cols() > 0; }

    template <typename Other>
    GaussianScene<Other> cast() const;
};

template <typename Scalar>
struct CameraView {
    std::string id;
    int width = 0;
    int height = 0;
    Scalar fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();  // world -> camera
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();   // camera frame

    Vec3<Scalar> to_camera(const Vec3<Scalar>& world) const { return rotation * world + translation; }
    Vec3<Scalar> center() const { return -(rotation.transpose() * translation); }

    template <typename Other>
    CameraView<Other> cast() const {
        CameraView<Other> out;
        out.id = id;
        out.width = width;
        out.height = height;
        out.fx = static_cast<Other>(fx);
        out.fy = static_cast<Other>(fy);
        out.cx = static_cast<Other>(cx);
        out.cy = static_cast<Other>(cy);
        out.rotation = rotation.template cast<Other>();
        out.translation = translation.template cast<Other>();
        return out;
    }
};

template <typename Scalar>
template <typename Other>
GaussianScene<Other> GaussianScene<Scalar>::cast() const {
    GaussianScene<Other> out;
    out.sh_degree = sh_degree;
    out.gaussians.reserve(gaussians.size());
    for (const auto& g : gaussians) {
        Gaussian<Other> c;
        c.position = g.position.template cast<Other>();
        c.scale = g.scale.template cast<Other>();
        c.rotation = g.rotation.template cast<Other>();
        c.opacity = static_cast<Other>(g.opacity);
        c.sh = g.sh.template cast<Other>();
        out.gaussians.push_back(c);
    }
    out.features = features.template cast<Other>();
    return out;
}

/// Sigma = R diag(scale^2) R^T. The quaternion need not be normalized.
template <typename Scalar>
Mat3<Scalar> build_covariance(const Vec3<Scalar>& scale, const Eigen::Quaternion<Scalar>& rotation) {
    const Scalar norm = rotation.norm();
    if (!(norm > Scalar(0)) || !std::isfinite(static_cast<double>(norm))) {
        throw InputError("build_covariance: invalid rotation (zero or non-finite quaternion)");
    }
    const Mat3<Scalar> r = rotation.normalized().toRotationMatrix();
    const Mat3<Scalar> m = r * scale.asDiagonal();
    Mat3<Scalar> cov = m * m.transpose();
    // exact symmetry; the product is symmetric only up to rounding
    cov = (Scalar(0.5) * (cov + cov.transpose())).eval();
    return cov;
}

template <typename Scalar>
Mat3<Scalar> covariance(const Gaussian<Scalar>& g) {
    return build_covariance(g.scale, g.rotation);
}

template <typename Scalar>
Scalar opacity_from_logit(Scalar logit) {
    if (logit >= Scalar(0)) {
        return Scalar(1) / (Scalar(1) + std::exp(-logit));
    }
    const Scalar e = std::exp(logit);
    return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar logit_from_opacity(Scalar opacity) {
    return std::log(opacity / (Scalar(1) - opacity));
}

namespace sh {
inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                                -0.5900435899266435};

/// Real SH basis values (3DGS sign convention) for a unit direction, up to `degree`.
template <typename Scalar>
Eigen::Matrix<Scalar, kMaxShCoeffs, 1> basis(const Vec3<Scalar>& dir, int degree) {
    Eigen::Matrix<Scalar, kMaxShCoeffs, 1> b = Eigen::Matrix<Scalar, kMaxShCoeffs, 1>::Zero();
    const Scalar x = dir.x(), y = dir.y(), z = dir.z();
    b(0) = Scalar(C0);
    if (degree < 1) return b;
    b(1) = Scalar(-C1) * y;
    b(2) = Scalar(C1) * z;
    b(3) = Scalar(-C1) * x;
    if (degree < 2) return b;
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    const Scalar xy = x * y, yz = y * z, xz = x * z;
    b(4) = Scalar(C2[0]) * xy;
    b(5) = Scalar(C2[1]) * yz;
    b(6) = Scalar(C2[2]) * (Scalar(2) * zz - xx - yy);
    b(7) = Scalar(C2[3]) * xz;
    b(8) = Scalar(C2[4]) * (xx - yy);
    if (degree < 3) return b;
    b(9) = Scalar(C3[0]) * y * (Scalar(3) * xx - yy);
    b(10) = Scalar(C3[1]) * xy * z;
    b(11) = Scalar(C3[2]) * y * (Scalar(4) * zz - xx - yy);
    b(12) = Scalar(C3[3]) * z * (Scalar(2) * zz - Scalar(3) * xx - Scalar(3) * yy);
    b(13) = Scalar(C3[4]) * x * (Scalar(4) * zz - xx - yy);
    b(14) = Scalar(C3[5]) * z * (xx - yy);
    b(15) = Scalar(C3[6]) * x * (xx - Scalar(3) * yy);
    return b;
}
}  // namespace sh

/// View-dependent RGB of a Gaussian seen along `dir` (camera center -> Gaussian).
template <typename Scalar>
Vec3<Scalar> eval_color(const ShCoeffs<Scalar>& coeffs, int degree, const Vec3<Scalar>& dir) {
    const Scalar n = dir.norm();
    const Vec3<Scalar> unit = n > Scalar(0) ? Vec3<Scalar>(dir / n) : Vec3<Scalar>::UnitZ();
    const auto b = sh::basis(unit, degree);
    const int k = sh_coeff_count(degree);
    Vec3<Scalar> rgb = coeffs.topRows(k).transpose() * b.head(k);
    rgb.array() += Scalar(0.5);
    return rgb.cwiseMax(Scalar(0));
}

/// DC coefficient that makes a degree-0 Gaussian render as `rgb`.
template <typename Scalar>
Vec3<Scalar> dc_from_rgb(const Vec3<Scalar>& rgb) {
    return (rgb.array() - Scalar(0.5)) / Scalar(sh::C0);
}

template <typename Scalar>
void validate(const Gaussian<Scalar>& g) {
    if (!g.position.allFinite() || !g.scale.allFinite() || !g.rotation.coeffs().allFinite() ||
        !std::isfinite(static_cast<double>(g.opacity))) {
        throw InputError("gaussian has non-finite parameters");
    }
    if ((g.scale.array() <= Scalar(0)).any()) throw InputError("gaussian scale must be positive");
    if (!(g.opacity > Scalar(0) && g.opacity < Scalar(1))) {
        throw InputError("gaussian opacity must lie in (0, 1)");
    }
    if (!(g.rotation.norm() > Scalar(0))) throw InputError("gaussian rotation is a zero quaternion");
}

template <typename Scalar>
void validate(const GaussianScene<Scalar>& scene) {
    for (const auto& g : scene.gaussians) validate(g);
    if (scene.has_features() && static_cast<std::size_t>(scene.features.rows()) != scene.size()) {
        throw ConsistencyError("scene feature rows do not match gaussian count");
    }
    if (scene.sh_degree < 0 || scene.sh_degree > kMaxShDegree) {
        throw InputError("scene sh_degree must be in [0, 3]");
    }
}

template <typename Scalar>
void validate(const CameraView<Scalar>& cam, double orthonormal_tol = 1e-6) {
    const Mat3<Scalar> rtr = cam.rotation.transpose() * cam.rotation;
    const double dev = static_cast<double>((rtr - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff());
    if (!(dev <= orthonormal_tol)) {
        throw InputError("camera '" + cam.id + "': rotation is not orthonormal (|R^T R - I| = " +
                         std::to_string(dev) + ")");
    }
    if (cam.width <= 0 || cam.height <= 0) throw InputError("camera '" + cam.id + "': bad image size");
    if (!(cam.fx > 0 && cam.fy > 0)) throw InputError("camera '" + cam.id + "': focal length must be > 0");
    if (!(cam.cx > 0 && cam.cx < cam.width && cam.cy > 0 && cam.cy < cam.height)) {
        throw InputError("camera '" + cam.id + "': principal point outside image");
    }
    if (!cam.translation.allFinite()) throw InputError("camera '" + cam.id + "': non-finite translation");
}

/// World-to-camera pose for a camera at `eye` looking at `target`
/// (x right, y down, z forward).
template <typename Scalar>
CameraView<Scalar> look_at(std::string id, int width, int height, Scalar focal, const Vec3<Scalar>& eye,
                           const Vec3<Scalar>& target, const Vec3<Scalar>& up = Vec3<Scalar>::UnitY()) {
    const Vec3<Scalar> z = (target - eye).normalized();
    Vec3<Scalar> x = z.cross(up);
    if (x.norm() < Scalar(1e-8)) x = z.cross(Vec3<Scalar>::UnitX());
    x.normalize();
    const Vec3<Scalar> y = z.cross(x);

    CameraView<Scalar> cam;
    cam.id = std::move(id);
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = Scalar(width) / Scalar(2);
    cam.cy = Scalar(height) / Scalar(2);
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -(cam.rotation * eye);
    return cam;
}

}  // namespace featlift
