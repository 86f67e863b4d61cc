#include "doctest.h"

#include <cmath>
#include <random>

#include "featlift/rasterizer.hpp"
#include "support/brute_force.hpp"
#include "support/random_scene.hpp"

using namespace featlift;
using featlift::testing::brute_pixel;
using featlift::testing::brute_project;
using featlift::testing::random_camera;
using featlift::testing::random_scene;

namespace {

CameraView<double> axis_camera(int w = 100, int h = 100, double f = 100) {
    CameraView<double> cam;
    cam.id = "axis";
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    return cam;  // identity pose
}

Gaussian<double> small_gaussian(const Eigen::Vector3d& pos, double opacity, double scale = 0.01) {
    Gaussian<double> g;
    g.position = pos;
    g.scale = Eigen::Vector3d::Constant(scale);
    g.opacity = opacity;
    return g;
}

GaussianScene<double> scene_of(std::vector<Gaussian<double>> gs) {
    GaussianScene<double> s;
    s.gaussians = std::move(gs);
    s.sh_degree = 0;
    return s;
}

}  // namespace

TEST_CASE("project_gaussian: pinhole examples") {
    const auto cam = axis_camera();
    auto p = project_gaussian(small_gaussian({0, 0, 2}, 0.5), cam);
    REQUIRE(p);
    CHECK(p->mean2d.isApprox(Eigen::Vector2d(50, 50)));
    CHECK(p->depth == doctest::Approx(2.0));

    p = project_gaussian(small_gaussian({0.5, 0, 2}, 0.5), cam);
    REQUIRE(p);
    CHECK(p->mean2d.x() == doctest::Approx(100.0 * 0.5 / 2.0 + 50.0));
    CHECK(p->mean2d.y() == doctest::Approx(50.0));

    CHECK_FALSE(project_gaussian(small_gaussian({0, 0, -1}, 0.5), cam));
    CHECK_FALSE(project_gaussian(small_gaussian({0, 0, 0.1}, 0.5), cam));
    // beyond the padded frustum: u = 100 * 2 / 1 + 50 = 250 > 115
    CHECK_FALSE(project_gaussian(small_gaussian({2, 0, 1}, 0.5), cam));
}

TEST_CASE("project_gaussian: covariance matches finite-difference Jacobian") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto scene = random_scene<double>(1, 1, 100 + trial);
        const auto cam = random_camera<double>(200 + trial, 80, 60);
        const auto& g = scene.gaussians[0];
        const auto p = project_gaussian(g, cam);
        if (!p) continue;
        // numerical Jacobian of the world -> pixel map at the mean
        const auto proj = [&](const Eigen::Vector3d& x) {
            const Eigen::Vector3d t = cam.to_camera(x);
            return Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
        };
        Eigen::Matrix<double, 2, 3> jac;
        const double h = 1e-6;
        for (int a = 0; a < 3; ++a) {
            Eigen::Vector3d e = Eigen::Vector3d::Zero();
            e(a) = h;
            jac.col(a) = (proj(g.position + e) - proj(g.position - e)) / (2 * h);
        }
        Eigen::Matrix2d expected = jac * covariance(g) * jac.transpose();
        expected.diagonal().array() += 0.3;
        CHECK((p->cov2d - expected).cwiseAbs().maxCoeff() < 1e-5 * (1 + expected.cwiseAbs().maxCoeff()));
        CHECK((p->conic * p->cov2d - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("compute_alpha examples") {
    auto p = Projected2D<double>::make(0, {10, 10}, Eigen::Matrix2d::Identity(), 1.0, 0.7);
    CHECK(compute_alpha(p, Eigen::Vector2d(10, 10)) == doctest::Approx(0.7));
    p.opacity = 1.0;
    CHECK(compute_alpha(p, Eigen::Vector2d(10, 10)) == doctest::Approx(0.99));
    CHECK(compute_alpha(p, Eigen::Vector2d(11, 10)) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(compute_alpha(p, Eigen::Vector2d(20, 10)) == 0.0);
    // exactly at the skip threshold boundary: just below is dropped
    const double r = std::sqrt(-2 * std::log(0.999 / 255.0));
    CHECK(compute_alpha(p, Eigen::Vector2d(10 + r, 10)) == 0.0);
}

TEST_CASE("Projected2D::make rejects non positive definite covariance") {
    Eigen::Matrix2d bad;
    bad << 1, 2, 2, 1;
    CHECK_THROWS_AS(Projected2D<double>::make(0, {0, 0}, bad, 1.0, 0.5), NumericError);
}

TEST_CASE("bin_and_sort: whole-image Gaussian and depth order") {
    std::vector<Projected2D<double>> ps;
    ps.push_back(Projected2D<double>::make(0, {32, 32}, Eigen::Matrix2d::Identity() * 400.0, 2.0, 0.5));
    ps.push_back(Projected2D<double>::make(1, {5, 5}, Eigen::Matrix2d::Identity(), 1.0, 0.5));
    ps.push_back(Projected2D<double>::make(2, {6, 5}, Eigen::Matrix2d::Identity(), 1.0, 0.5));
    const TileBins bins = bin_and_sort(std::span<const Projected2D<double>>(ps), 64, 64, 16);
    CHECK(bins.tiles_x == 4);
    for (const auto& list : bins.lists) CHECK(std::find(list.begin(), list.end(), 0) != list.end());
    CHECK(bins.tile(0, 0) == std::vector<int>{1, 2, 0});
}

TEST_CASE("bin_and_sort: membership matches the brute-force overlap oracle") {
    for (int trial = 0; trial < 10; ++trial) {
        const auto scene = random_scene<double>(100 + 10 * trial, 1, 1000 + trial, 1.0, 0.3);
        const auto cam = random_camera<double>(2000 + trial, 70, 50);
        const auto view = prepare_view(scene, cam);
        const int ts = view.bins.tile_size;
        for (int ty = 0; ty < view.bins.tiles_y; ++ty) {
            for (int tx = 0; tx < view.bins.tiles_x; ++tx) {
                std::vector<int> expected;
                for (std::size_t i = 0; i < view.projected.size(); ++i) {
                    bool hit = false;
                    for (int y = ty * ts; y < std::min(cam.height, (ty + 1) * ts) && !hit; ++y) {
                        for (int x = tx * ts; x < std::min(cam.width, (tx + 1) * ts) && !hit; ++x) {
                            hit = featlift::testing::in_box(view.projected[i], x, y);
                        }
                    }
                    if (hit) expected.push_back(int(i));
                }
                std::vector<int> got = view.bins.tile(tx, ty);
                // strict (depth, index) order
                for (std::size_t k = 1; k < got.size(); ++k) {
                    const auto& a = view.projected[std::size_t(got[k - 1])];
                    const auto& b = view.projected[std::size_t(got[k])];
                    CHECK((a.depth < b.depth || (a.depth == b.depth && a.gaussian_index < b.gaussian_index)));
                }
                std::sort(got.begin(), got.end());
                CHECK(got == expected);
            }
        }
    }
}

TEST_CASE("render_color: empty region, single and stacked Gaussians") {
    const auto cam = axis_camera();
    auto red = small_gaussian({0, 0, 2}, 1.0);
    red.sh.row(0) = dc_from_rgb<double>(Eigen::Vector3d(1, 0, 0)).transpose();
    auto scene = scene_of({red});
    auto out = render_color(scene, cam);
    CHECK(out.image.pixel(50, 50)(0) == doctest::Approx(0.99));
    CHECK(out.image.pixel(5, 5).norm() == 0.0);
    CHECK(out.alpha(5, 5) == 0.0);
    CHECK(out.alpha(50, 50) == doctest::Approx(0.99));

    auto near = small_gaussian({0, 0, 2}, 0.6);
    near.sh.row(0) = dc_from_rgb<double>(Eigen::Vector3d(1, 0, 0)).transpose();
    auto far = small_gaussian({0, 0, 3}, 0.8);
    far.sh.row(0) = dc_from_rgb<double>(Eigen::Vector3d(0, 0, 1)).transpose();
    scene = scene_of({far, near});
    out = render_color(scene, cam);
    const Eigen::Vector3d expected = 0.6 * Eigen::Vector3d(1, 0, 0) + 0.4 * 0.8 * Eigen::Vector3d(0, 0, 1);
    CHECK((out.image.pixel(50, 50).transpose() - expected).norm() < 1e-12);
    CHECK(out.alpha(50, 50) == doctest::Approx(1 - 0.4 * 0.2));
}

TEST_CASE("render paths agree with the untiled reference") {
    for (int trial = 0; trial < 8; ++trial) {
        const auto scene = random_scene<double>(40, 3, 300 + trial, 1.0, 0.25);
        const auto cam = random_camera<double>(400 + trial, 50, 40);
        const RasterSettings s;
        const auto color = render_color(scene, cam, s);
        const auto feats = render_features(scene, cam, s);
        const auto ref = brute_project(scene, cam, s);
        double worst = 0.0;
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                double t = 0.0;
                Eigen::Vector3d c = Eigen::Vector3d::Zero();
                Eigen::Vector3d f = Eigen::Vector3d::Zero();
                for (const auto& e : brute_pixel(ref, x, y, s, &t)) {
                    c += e.weight * eval_color<double>(scene.gaussians[std::size_t(e.gaussian)].sh, 0, Eigen::Vector3d::UnitZ());
                    f += e.weight * scene.features.row(e.gaussian).transpose();
                }
                worst = std::max(worst, (color.image.pixel(x, y).transpose() - c).cwiseAbs().maxCoeff());
                worst = std::max(worst, (feats.pixel(x, y).transpose() - f).cwiseAbs().maxCoeff());
                worst = std::max(worst, std::abs(color.alpha(y, x) - (1 - t)));
            }
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("render_features: per-channel scalar renders recombine to the full map") {
    const auto scene = random_scene<double>(10, 4, 77, 0.8, 0.3);
    const auto cam = random_camera<double>(78, 40, 40);
    const auto full = render_features(scene, cam);
    for (int c = 0; c < 4; ++c) {
        auto single = scene;
        single.features = scene.features.col(c);
        const auto part = render_features(single, cam);
        CHECK((part.data.col(0) - full.data.col(c)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("render_features: features equal to colors reproduce the color image (float)") {
    for (int trial = 0; trial < 5; ++trial) {
        auto scene = random_scene<float>(30, 3, 500 + trial, 1.0, 0.25);
        for (std::size_t i = 0; i < scene.size(); ++i) {
            scene.features.row(Eigen::Index(i)) =
                eval_color<float>(scene.gaussians[i].sh, 0, Eigen::Vector3f::UnitZ()).transpose();
        }
        const auto cam = random_camera<float>(600 + trial, 48, 48);
        const auto color = render_color(scene, cam);
        const auto feats = render_features(scene, cam);
        CHECK((color.image.data - feats.data).cwiseAbs().maxCoeff() < 1e-6f);
    }
}

TEST_CASE("render_features: missing features and empty scene are rejected") {
    auto scene = scene_of({small_gaussian({0, 0, 2}, 0.5)});
    CHECK_THROWS_AS(render_features(scene, axis_camera()), InputError);
    CHECK_THROWS_AS(render_color(GaussianScene<double>{}, axis_camera()), InputError);
}

TEST_CASE("weight normalization and determinism under threads") {
    const auto scene = random_scene<double>(150, 2, 900, 1.0, 0.3);
    const auto cam = random_camera<double>(901, 64, 64);
    RasterSettings s;
    const auto view = prepare_view(scene, cam, s);
    double worst = 0.0;
    for_each_pixel(view, s, [&](int x, int y, const std::vector<int>& list) {
        double sum = 0.0;
        const double t = blend_pixel(view, list, x, y, s, [&](int, double w) { sum += w; });
        worst = std::max(worst, std::abs(sum + t - 1.0));
    });
    CHECK(worst < 1e-12);

    const auto a = render_features(scene, cam, s);
    s.threads = 4;
    const auto b = render_features(scene, cam, s);
    CHECK((a.data.array() == b.data.array()).all());
}

TEST_CASE("collect_center_samples examples") {
    const auto cam = axis_camera();
    GaussianScene<double> scene = scene_of({small_gaussian({0, 0, 2}, 0.9)});
    scene.features = RowMatrix<double>::Constant(1, 2, 1.0);
    FeatureMap<double> map(100, 100, 2);
    map.pixel(50, 50) << 3.0, 4.0;

    auto samples = collect_center_samples(scene, cam, map, 1e-4);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].weight == doctest::Approx(0.9));
    CHECK(samples[0].pixel == Eigen::Vector2i(50, 50));
    CHECK(samples[0].feature == Eigen::Vector2d(3, 4));

    // two half-transparent stacked Gaussians
    scene = scene_of({small_gaussian({0, 0, 3}, 0.5), small_gaussian({0, 0, 2}, 0.5)});
    scene.features = RowMatrix<double>::Ones(2, 2);
    samples = collect_center_samples(scene, cam, map, 1e-4);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].gaussian_index == 0);
    CHECK(samples[0].weight == doctest::Approx(0.25));
    CHECK(samples[1].weight == doctest::Approx(0.5));

    // far Gaussian behind two near-opaque ones: transmittance 1e-4 at its
    // turn, and blending would drop below it, so the pass stops first
    scene = scene_of({small_gaussian({0, 0, 2}, 1.0), small_gaussian({0, 0, 2.5}, 1.0), small_gaussian({0, 0, 3}, 0.9)});
    scene.features = RowMatrix<double>::Ones(3, 2);
    samples = collect_center_samples(scene, cam, map, 1e-4);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].weight == doctest::Approx(0.99));
    CHECK(samples[1].weight == doctest::Approx(0.0099));
    CHECK(samples[1].gaussian_index == 1);
}

TEST_CASE("collect_center_samples: lower-resolution map and aspect mismatch") {
    const auto cam = axis_camera();
    GaussianScene<double> scene = scene_of({small_gaussian({0.5, 0.25, 2}, 0.9)});  // center (75, 62.5)
    scene.features = RowMatrix<double>::Ones(1, 1);
    FeatureMap<double> half(50, 50, 1);
    half.pixel(37, 31)(0) = 2.0;
    const auto samples = collect_center_samples(scene, cam, half, 1e-4);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].pixel == Eigen::Vector2i(37, 31));
    CHECK(samples[0].feature(0) == 2.0);

    FeatureMap<double> skew(50, 60, 1);
    CHECK_THROWS_AS(collect_center_samples(scene, cam, skew, 1e-4), ConsistencyError);
    CHECK_THROWS_AS(collect_center_samples(scene, cam, half, -1.0), InputError);
}

TEST_CASE("collect_center_samples: weights match the blending pass at the center pixel") {
    for (int trial = 0; trial < 6; ++trial) {
        const auto scene = random_scene<double>(80, 2, 1200 + trial, 1.0, 0.2);
        const auto cam = random_camera<double>(1300 + trial, 60, 60);
        FeatureMap<double> map(60, 60, 2);
        const auto samples = collect_center_samples(scene, cam, map, 0.0);
        const auto ref = brute_project(scene, cam);
        std::vector<double> expected(scene.size(), -1.0);
        for (const auto& p : ref.projected) {
            const auto c = p.center_pixel();
            if (c.x() < 0 || c.y() < 0 || c.x() >= cam.width || c.y() >= cam.height) continue;
            for (const auto& e : brute_pixel(ref, c.x(), c.y(), RasterSettings{})) {
                if (e.gaussian == p.gaussian_index) expected[std::size_t(e.gaussian)] = e.weight;
            }
        }
        std::size_t emitted = 0;
        for (double w : expected) emitted += w > 0 ? 1 : 0;
        CHECK(samples.size() == emitted);
        for (const auto& s : samples) CHECK(std::abs(s.weight - expected[std::size_t(s.gaussian_index)]) < 1e-12);
    }
}
