#pragma once

#include <random>
#include <string>

#include "featlift/scene.hpp"

namespace featlift::testing {

// Gaussians scattered in a box around the origin, all with features.
template <typename Scalar>
GaussianScene<Scalar> random_scene(int n, int dim, std::uint64_t seed, double extent = 1.0, double max_scale = 0.15) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-extent, extent), sc(0.01, max_scale), op(0.05, 0.98), col(-1.0, 1.0);
    std::normal_distribution<double> n01;
    GaussianScene<Scalar> scene;
    scene.sh_degree = 0;
    scene.features = RowMatrix<Scalar>::Zero(n, dim);
    for (int i = 0; i < n; ++i) {
        Gaussian<Scalar> g;
        g.position = Vec3<Scalar>(Scalar(pos(rng)), Scalar(pos(rng)), Scalar(pos(rng)));
        g.scale = Vec3<Scalar>(Scalar(sc(rng)), Scalar(sc(rng)), Scalar(sc(rng)));
        g.rotation = Eigen::Quaternion<Scalar>(Scalar(n01(rng)), Scalar(n01(rng)), Scalar(n01(rng)), Scalar(n01(rng))).normalized();
        g.opacity = Scalar(op(rng));
        g.sh.setZero();
        for (int c = 0; c < 3; ++c) g.sh(0, c) = Scalar(col(rng));
        scene.gaussians.push_back(g);
        for (int k = 0; k < dim; ++k) scene.features(i, k) = Scalar(n01(rng));
    }
    return scene;
}

// Camera looking at the origin from a random direction on a sphere of radius `dist`.
template <typename Scalar>
CameraView<Scalar> random_camera(std::uint64_t seed, int width = 64, int height = 48, double dist = 4.0) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> n01;
    Eigen::Vector3d eye(n01(rng), n01(rng), n01(rng));
    eye = eye.normalized() * dist;
    const Eigen::Vector3d up = std::abs(eye.normalized().y()) > 0.95 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const auto cam = look_at<double>("r" + std::to_string(seed), width, height, 0.9 * width, eye, Eigen::Vector3d::Zero(), up);
    return cam.template cast<Scalar>();
}

}  // namespace featlift::testing
