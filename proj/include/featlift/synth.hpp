#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/parallel.hpp"
#include "featlift/rasterizer.hpp"
#include "featlift/scene.hpp"

namespace featlift {

enum class Layout {
    Grid,          // well separated sites on a plane facing the cameras
    Random,        // uniform positions, random anisotropic shapes
    StackedPairs,  // front/back pairs with controlled overlap along view rays
    Occluder,      // grid plus a subset that no view can see
};

enum class FeatureKind { RandomUnit, OneHot };

struct SynthSpec {
    std::size_t n_gaussians = 9;
    Layout layout = Layout::Grid;
    int feature_dim = 8;
    int n_views = 4;
    double opacity_min = 0.9;
    double opacity_max = 0.99;
    double overlap = 0.0;
    std::uint64_t seed = 0;
    int width = 128;
    int height = 128;
    // Grid and occluder: coincident copies per site. Several layers make a site
    // effectively opaque, since a single Gaussian's alpha is capped at 0.99.
    int layers = 1;
    // Fraction of Gaussians placed where no view can see them. The occluder
    // layout uses 0.2 when this is left at 0.
    double hidden_fraction = 0.0;
    double camera_distance = 4.0;
    double view_cone_deg = 25.0;
    double focal_factor = 1.0;  // focal length in units of image width
    FeatureKind features = FeatureKind::RandomUnit;
};

template <typename Scalar>
struct SynthScene {
    GaussianScene<Scalar> scene;  // carries the ground-truth features
    std::vector<CameraView<Scalar>> views;
    std::vector<int> hidden;      // indices guaranteed invisible from every view
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(d);
    do {
        for (int k = 0; k < d; ++k) v(k) = n(rng);
    } while (v.norm() < 1e-9);
    return v.normalized();
}

inline Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
    const Eigen::VectorXd v = random_unit(rng, 4);
    return Eigen::Quaterniond(v(0), v(1), v(2), v(3));
}

}  // namespace detail

/// Cameras spread over a spherical cap around +z, all looking at the origin.
template <typename Scalar>
std::vector<CameraView<Scalar>> make_views(const SynthSpec& spec) {
    std::vector<CameraView<Scalar>> views;
    const double cap = std::cos(spec.view_cone_deg * std::numbers::pi / 180.0);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    const double phase = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < spec.n_views; ++k) {
        const double cos_t = 1.0 - (1.0 - cap) * (double(k) + 0.5) / double(spec.n_views);
        const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
        const double phi = phase + golden * double(k);
        const Eigen::Vector3d eye = spec.camera_distance * Eigen::Vector3d(sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t);
        views.push_back(look_at<Scalar>("view_" + std::to_string(k), spec.width, spec.height,
                                        Scalar(spec.focal_factor * spec.width), eye.cast<Scalar>(),
                                        Vec3<Scalar>::Zero()));
    }
    return views;
}

namespace detail {

inline std::vector<Eigen::Vector2d> grid_sites(std::size_t n_sites, double extent, double& spacing) {
    const auto k = static_cast<std::size_t>(std::ceil(std::sqrt(double(n_sites))));
    spacing = k > 1 ? extent / double(k - 1) : extent;
    std::vector<Eigen::Vector2d> sites;
    for (std::size_t i = 0; i < n_sites; ++i) {
        const double gx = k > 1 ? -extent / 2 + spacing * double(i % k) : 0.0;
        const double gy = k > 1 ? -extent / 2 + spacing * double(i / k) : 0.0;
        sites.emplace_back(gx, gy);
    }
    return sites;
}

// Site projections must stay inside the image and pairwise farther apart than
// 6 sigma of the larger footprint.
template <typename Scalar>
void check_separation(const std::vector<Gaussian<double>>& sites, std::span<const CameraView<Scalar>> views) {
    for (const auto& v : views) {
        const CameraView<double> cam = v.template cast<double>();
        std::vector<Projected2D<double>> proj;
        for (std::size_t i = 0; i < sites.size(); ++i) {
            auto p = project_gaussian(sites[i], cam, RasterSettings{}, int(i));
            if (!p) throw InputError("infeasible layout: a grid site is culled in " + cam.id);
            const double sigma = std::sqrt(p->cov2d.eigenvalues().real().maxCoeff());
            if (p->mean2d.x() < 3 * sigma || p->mean2d.y() < 3 * sigma || p->mean2d.x() > cam.width - 3 * sigma ||
                p->mean2d.y() > cam.height - 3 * sigma) {
                throw InputError("infeasible layout: a grid site falls outside " + cam.id);
            }
            proj.push_back(*p);
        }
        for (std::size_t i = 0; i < proj.size(); ++i) {
            for (std::size_t j = i + 1; j < proj.size(); ++j) {
                const double si = std::sqrt(proj[i].cov2d.eigenvalues().real().maxCoeff());
                const double sj = std::sqrt(proj[j].cov2d.eigenvalues().real().maxCoeff());
                if ((proj[i].mean2d - proj[j].mean2d).norm() <= 6.0 * std::max(si, sj)) {
                    throw InputError("infeasible layout: too many gaussians to keep sites 6 sigma apart in " +
                                     cam.id);
                }
            }
        }
    }
}

}  // namespace detail

/// Deterministic scene, ground-truth features and cameras for a spec.
template <typename Scalar>
SynthScene<Scalar> generate_scene(const SynthSpec& spec) {
    if (spec.n_gaussians < 1) throw InputError("synth: n_gaussians must be >= 1");
    if (spec.n_views < 1) throw InputError("synth: n_views must be >= 1");
    if (spec.feature_dim < 0) throw InputError("synth: feature_dim must be >= 0");
    if (!(spec.opacity_min > 0 && spec.opacity_min <= spec.opacity_max && spec.opacity_max < 1)) {
        throw InputError("synth: opacity range must satisfy 0 < min <= max < 1");
    }
    if (spec.layers < 1) throw InputError("synth: layers must be >= 1");
    if (spec.overlap < 0) throw InputError("synth: overlap must be >= 0");
    if (spec.hidden_fraction < 0 || spec.hidden_fraction >= 1) throw InputError("synth: hidden fraction must be in [0, 1)");

    std::mt19937_64 rng(spec.seed);
    SynthScene<Scalar> out;
    out.views = make_views<Scalar>(spec);

    double hidden_fraction = spec.hidden_fraction;
    if (spec.layout == Layout::Occluder && hidden_fraction == 0.0) hidden_fraction = 0.2;
    const auto n_hidden = static_cast<std::size_t>(std::llround(hidden_fraction * double(spec.n_gaussians)));
    if (n_hidden >= spec.n_gaussians) throw InputError("synth: hidden fraction leaves no visible gaussians");
    const std::size_t n_visible = spec.n_gaussians - n_hidden;

    std::vector<Gaussian<double>> gs;
    std::vector<Eigen::VectorXd> feats;
    const int d = spec.feature_dim;
    auto next_feature = [&](std::size_t index) {
        if (spec.features == FeatureKind::OneHot && d > 0) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
            e(Eigen::Index(index % std::size_t(d))) = 1.0;
            return e;
        }
        return d > 0 ? detail::random_unit(rng, d) : Eigen::VectorXd();
    };
    auto random_color = [&] {
        Eigen::Vector3d rgb(detail::uniform(rng, 0.1, 0.9), detail::uniform(rng, 0.1, 0.9),
                            detail::uniform(rng, 0.1, 0.9));
        ShCoeffs<double> sh = ShCoeffs<double>::Zero();
        sh.row(0) = dc_from_rgb<double>(rgb).transpose();
        return sh;
    };
    // half the width the cameras see at the origin, so every site stays in frame
    const double extent = 0.5 * spec.camera_distance / spec.focal_factor;

    switch (spec.layout) {
        case Layout::Grid:
        case Layout::Occluder: {
            const std::size_t n_sites = (n_visible + std::size_t(spec.layers) - 1) / std::size_t(spec.layers);
            double spacing = 0;
            const auto sites = detail::grid_sites(n_sites, extent, spacing);
            const double sigma = std::min(spacing, 1.2) / 8.0 * (1.0 + spec.overlap);
            std::vector<Gaussian<double>> site_gs;
            for (std::size_t s = 0; s < n_sites; ++s) {
                Gaussian<double> g;
                g.position = Eigen::Vector3d(sites[s].x(), sites[s].y(), 0.0);
                g.scale = Eigen::Vector3d::Constant(sigma);
                g.rotation = Eigen::Quaterniond::Identity();
                g.opacity = detail::uniform(rng, spec.opacity_min, spec.opacity_max);
                g.sh = random_color();
                site_gs.push_back(g);
            }
            detail::check_separation(site_gs, std::span<const CameraView<Scalar>>(out.views));
            for (std::size_t s = 0; s < n_sites && gs.size() < n_visible; ++s) {
                const Eigen::VectorXd f = next_feature(s);
                for (int l = 0; l < spec.layers && gs.size() < n_visible; ++l) {
                    gs.push_back(site_gs[s]);
                    feats.push_back(f);
                }
            }
            break;
        }
        case Layout::Random: {
            const double base = 0.05 * (1.0 + spec.overlap);
            for (std::size_t i = 0; i < n_visible; ++i) {
                Gaussian<double> g;
                g.position = Eigen::Vector3d(detail::uniform(rng, -extent / 2, extent / 2),
                                             detail::uniform(rng, -extent / 2, extent / 2),
                                             detail::uniform(rng, -extent / 4, extent / 4));
                for (int a = 0; a < 3; ++a) g.scale(a) = base * std::exp(detail::uniform(rng, -0.7, 0.7));
                g.rotation = detail::random_rotation(rng);
                g.opacity = detail::uniform(rng, spec.opacity_min, spec.opacity_max);
                g.sh = random_color();
                gs.push_back(g);
                feats.push_back(next_feature(i));
            }
            break;
        }
        case Layout::StackedPairs: {
            const std::size_t n_sites = (n_visible + 1) / 2;
            double spacing = 0;
            const auto sites = detail::grid_sites(n_sites, extent, spacing);
            const double sigma = std::min(spacing, 1.2) / 10.0;
            const double lateral = 2.0 * sigma * std::max(0.0, 1.0 - spec.overlap);
            for (std::size_t s = 0; s < n_sites && gs.size() < n_visible; ++s) {
                for (int member = 0; member < 2 && gs.size() < n_visible; ++member) {
                    Gaussian<double> g;
                    g.position = Eigen::Vector3d(sites[s].x() + (member == 1 ? lateral : 0.0), sites[s].y(),
                                                 member == 0 ? sigma : -sigma);
                    g.scale = Eigen::Vector3d::Constant(sigma);
                    g.opacity = detail::uniform(rng, spec.opacity_min, spec.opacity_max);
                    g.sh = random_color();
                    gs.push_back(g);
                    feats.push_back(next_feature(gs.size() - 1));
                }
            }
            break;
        }
    }

    // Hidden Gaussians alternate between behind every camera and far outside
    // every frustum, then get shuffled in among the visible ones.
    std::vector<Gaussian<double>> hidden_gs;
    for (std::size_t h = 0; h < n_hidden; ++h) {
        Gaussian<double> g;
        const double jitter = detail::uniform(rng, -0.5, 0.5);
        if (h % 2 == 0) {
            g.position = Eigen::Vector3d(jitter, -jitter, 3.0 * spec.camera_distance);
        } else {
            g.position = Eigen::Vector3d((h % 4 == 1 ? 1.0 : -1.0) * 20.0 * spec.camera_distance, jitter, 0.0);
        }
        g.scale = Eigen::Vector3d::Constant(0.05);
        g.opacity = detail::uniform(rng, spec.opacity_min, spec.opacity_max);
        g.sh = random_color();
        hidden_gs.push_back(g);
    }
    std::vector<bool> is_hidden(spec.n_gaussians, false);
    {
        std::vector<std::size_t> order(spec.n_gaussians);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t h = 0; h < n_hidden; ++h) is_hidden[order[h]] = true;
    }

    out.scene.sh_degree = kMaxShDegree;
    if (d > 0) out.scene.features.resize(Eigen::Index(spec.n_gaussians), d);
    std::size_t vi = 0, hi = 0;
    for (std::size_t i = 0; i < spec.n_gaussians; ++i) {
        const Gaussian<double>* src;
        Eigen::VectorXd f;
        if (is_hidden[i]) {
            src = &hidden_gs[hi++];
            f = next_feature(i);
            out.hidden.push_back(static_cast<int>(i));
        } else {
            src = &gs[vi];
            f = feats[vi];
            ++vi;
        }
        Gaussian<Scalar> g;
        g.position = src->position.cast<Scalar>();
        g.scale = src->scale.cast<Scalar>();
        g.rotation = src->rotation.cast<Scalar>();
        g.opacity = Scalar(src->opacity);
        g.sh = src->sh.cast<Scalar>();
        out.scene.gaussians.push_back(g);
        if (d > 0) out.scene.features.row(Eigen::Index(i)) = f.cast<Scalar>().transpose();
    }
    return out;
}

/// Rendered ground-truth features plus IID N(0, noise_sigma^2) per channel.
/// Noise for view v is drawn from its own stream seeded by (seed, v).
template <typename Scalar>
std::vector<FeatureMap<Scalar>> generate_feature_maps(const GaussianScene<Scalar>& scene,
                                                      std::span<const CameraView<Scalar>> views, double noise_sigma,
                                                      std::uint64_t seed = 0, const RasterSettings& settings = {}) {
    if (noise_sigma < 0) throw InputError("noise sigma must be >= 0");
    std::vector<FeatureMap<Scalar>> maps(views.size());
    RasterSettings inner = settings;
    inner.threads = 1;
    parallel_for(views.size(), settings.threads, [&](std::size_t v) {
        maps[v] = render_features(scene, views[v], inner);
        if (noise_sigma > 0) {
            std::mt19937_64 rng(seed * 0x100000001b3ULL + 0x51ed27 + v);
            std::normal_distribution<double> noise(0.0, noise_sigma);
            auto& data = maps[v].data;
            for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] += Scalar(noise(rng));
        }
    });
    return maps;
}

template <typename Scalar>
std::vector<FeatureMap<Scalar>> generate_feature_maps(const GaussianScene<Scalar>& scene,
                                                      const std::vector<CameraView<Scalar>>& views, double noise_sigma,
                                                      std::uint64_t seed = 0, const RasterSettings& settings = {}) {
    return generate_feature_maps(scene, std::span<const CameraView<Scalar>>(views), noise_sigma, seed, settings);
}

}  // namespace featlift
