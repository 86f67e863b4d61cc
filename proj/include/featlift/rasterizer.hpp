#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/parallel.hpp"
#include "featlift/scene.hpp"

namespace featlift {

// Render-side constants follow the reference 3DGS rasterizer.
struct RasterSettings {
    double low_pass = 0.3;               // px^2 added to the projected covariance diagonal
    double alpha_max = 0.99;
    double alpha_min = 1.0 / 255.0;      // contributions below this are skipped
    double min_transmittance = 1e-4;     // early stop
    double near_plane = 0.2;
    double frustum_pad = 0.15;           // fraction of the image added on each side before culling
    double extent_sigma = 3.0;
    int tile_size = 16;
    int threads = 1;
};

template <typename Scalar>
struct Projected2D {
    int gaussian_index = -1;
    Vec2<Scalar> mean2d = Vec2<Scalar>::Zero();
    Mat2<Scalar> cov2d = Mat2<Scalar>::Identity();
    Mat2<Scalar> conic = Mat2<Scalar>::Identity();  // cov2d^-1
    Scalar depth = 0;
    Scalar opacity = 0;
    Vec2<Scalar> extent = Vec2<Scalar>::Zero();     // half-widths of the 3-sigma bounding box

    static Projected2D make(int index, const Vec2<Scalar>& mean, const Mat2<Scalar>& cov, Scalar depth,
                            Scalar opacity, double extent_sigma = 3.0) {
        Projected2D p;
        p.gaussian_index = index;
        p.mean2d = mean;
        p.cov2d = cov;
        p.depth = depth;
        p.opacity = opacity;
        const Scalar det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
        if (!(det > Scalar(0)) || !(cov(0, 0) > Scalar(0))) {
            throw NumericError("projected covariance is not positive definite");
        }
        p.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
        p.extent = Vec2<Scalar>(Scalar(extent_sigma) * std::sqrt(cov(0, 0)),
                                Scalar(extent_sigma) * std::sqrt(cov(1, 1)));
        return p;
    }

    Eigen::Vector2i center_pixel() const {
        return {static_cast<int>(std::floor(mean2d.x())), static_cast<int>(std::floor(mean2d.y()))};
    }
};

/// EWA projection: mean by the pinhole model, covariance by the Jacobian of
/// the perspective map plus the low-pass floor. Empty when culled.
template <typename Scalar>
std::optional<Projected2D<Scalar>> project_gaussian(const Gaussian<Scalar>& g, const CameraView<Scalar>& cam,
                                                    const RasterSettings& settings = {}, int index = 0) {
    const Vec3<Scalar> t = cam.to_camera(g.position);
    if (!(t.z() > Scalar(settings.near_plane))) return std::nullopt;

    const Scalar inv_z = Scalar(1) / t.z();
    const Vec2<Scalar> mean(cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy);
    const Scalar pad_x = Scalar(settings.frustum_pad) * Scalar(cam.width);
    const Scalar pad_y = Scalar(settings.frustum_pad) * Scalar(cam.height);
    if (mean.x() < -pad_x || mean.x() > Scalar(cam.width) + pad_x || mean.y() < -pad_y ||
        mean.y() > Scalar(cam.height) + pad_y) {
        return std::nullopt;
    }

    Eigen::Matrix<Scalar, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * t.x() * inv_z * inv_z,
           0, cam.fy * inv_z, -cam.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix<Scalar, 2, 3> jw = jac * cam.rotation;
    Mat2<Scalar> cov2d = jw * covariance(g) * jw.transpose();
    cov2d(0, 1) = cov2d(1, 0) = Scalar(0.5) * (cov2d(0, 1) + cov2d(1, 0));
    cov2d.diagonal().array() += Scalar(settings.low_pass);

    return Projected2D<Scalar>::make(index, mean, cov2d, t.z(), g.opacity, settings.extent_sigma);
}

/// alpha = o * exp(-0.5 d^T cov^-1 d), clamped to alpha_max; 0 below the skip threshold.
template <typename Scalar>
Scalar compute_alpha(const Projected2D<Scalar>& p, const Vec2<Scalar>& pixel, const RasterSettings& settings = {}) {
    const Vec2<Scalar> d = pixel - p.mean2d;
    const Scalar power = Scalar(-0.5) * d.dot(p.conic * d);
    if (power > Scalar(0)) return Scalar(0);
    const Scalar alpha = std::min(Scalar(settings.alpha_max), p.opacity * std::exp(power));
    return alpha < Scalar(settings.alpha_min) ? Scalar(0) : alpha;
}

struct TileBins {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<int>> lists;  // indices into the projected array, sorted front to back

    const std::vector<int>& tile(int tx, int ty) const { return lists[std::size_t(ty) * tiles_x + tx]; }
};

struct PixelRange {
    int x0, x1, y0, y1;  // inclusive
    bool empty() const { return x0 > x1 || y0 > y1; }
};

/// Integer pixels covered by the 3-sigma bounding box, clipped to the image.
template <typename Scalar>
PixelRange covered_pixels(const Projected2D<Scalar>& p, int width, int height) {
    PixelRange r;
    r.x0 = std::max(0, static_cast<int>(std::ceil(p.mean2d.x() - p.extent.x())));
    r.x1 = std::min(width - 1, static_cast<int>(std::floor(p.mean2d.x() + p.extent.x())));
    r.y0 = std::max(0, static_cast<int>(std::ceil(p.mean2d.y() - p.extent.y())));
    r.y1 = std::min(height - 1, static_cast<int>(std::floor(p.mean2d.y() + p.extent.y())));
    return r;
}

template <typename Scalar>
TileBins bin_and_sort(std::span<const Projected2D<Scalar>> projected, int width, int height, int tile_size = 16) {
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    bins.lists.resize(std::size_t(bins.tiles_x) * bins.tiles_y);

    for (std::size_t i = 0; i < projected.size(); ++i) {
        const PixelRange r = covered_pixels(projected[i], width, height);
        if (r.empty()) continue;
        for (int ty = r.y0 / tile_size; ty <= r.y1 / tile_size; ++ty) {
            for (int tx = r.x0 / tile_size; tx <= r.x1 / tile_size; ++tx) {
                bins.lists[std::size_t(ty) * bins.tiles_x + tx].push_back(static_cast<int>(i));
            }
        }
    }
    const auto front_to_back = [&](int a, int b) {
        const auto& pa = projected[std::size_t(a)];
        const auto& pb = projected[std::size_t(b)];
        if (pa.depth != pb.depth) return pa.depth < pb.depth;
        return pa.gaussian_index < pb.gaussian_index;
    };
    for (auto& list : bins.lists) std::sort(list.begin(), list.end(), front_to_back);
    return bins;
}

// Projection and binning for one view; shared by every render path.
template <typename Scalar>
struct PreparedView {
    int width = 0;
    int height = 0;
    std::vector<Projected2D<Scalar>> projected;
    TileBins bins;
};

template <typename Scalar>
PreparedView<Scalar> prepare_view(const GaussianScene<Scalar>& scene, const CameraView<Scalar>& cam,
                                  const RasterSettings& settings = {}) {
    if (scene.empty()) throw InputError("cannot render an empty scene");
    PreparedView<Scalar> view;
    view.width = cam.width;
    view.height = cam.height;
    view.projected.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (auto p = project_gaussian(scene.gaussians[i], cam, settings, static_cast<int>(i))) {
            view.projected.push_back(*p);
        }
    }
    view.bins = bin_and_sort(std::span<const Projected2D<Scalar>>(view.projected), cam.width, cam.height,
                             settings.tile_size);
    return view;
}

/// Front-to-back blend at one pixel. Calls on(projected_index, weight) for each
/// contributing Gaussian and returns the final transmittance.
template <typename Scalar, typename OnContribution>
Scalar blend_pixel(const PreparedView<Scalar>& view, const std::vector<int>& list, int x, int y,
                   const RasterSettings& settings, OnContribution&& on) {
    const Vec2<Scalar> pixel(static_cast<Scalar>(x), static_cast<Scalar>(y));
    Scalar transmittance(1);
    for (const int idx : list) {
        const Scalar alpha = compute_alpha(view.projected[std::size_t(idx)], pixel, settings);
        if (alpha == Scalar(0)) continue;
        const Scalar next = transmittance * (Scalar(1) - alpha);
        if (next < Scalar(settings.min_transmittance)) break;
        on(idx, alpha * transmittance);
        transmittance = next;
    }
    return transmittance;
}

/// Runs fn(x, y, tile_list) for every pixel, parallel over tiles.
template <typename Scalar, typename Fn>
void for_each_pixel(const PreparedView<Scalar>& view, const RasterSettings& settings, Fn&& fn) {
    const TileBins& bins = view.bins;
    const std::size_t tiles = bins.lists.size();
    parallel_for(tiles, settings.threads, [&](std::size_t t) {
        const int tx = static_cast<int>(t % std::size_t(bins.tiles_x));
        const int ty = static_cast<int>(t / std::size_t(bins.tiles_x));
        const auto& list = bins.lists[t];
        const int x_end = std::min(view.width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(view.height, (ty + 1) * bins.tile_size);
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            for (int x = tx * bins.tile_size; x < x_end; ++x) fn(x, y, list);
        }
    });
}

template <typename Scalar>
struct ColorRender {
    FeatureMap<Scalar> image;  // H x W x 3
    ScalarImage<Scalar> alpha; // accumulated alpha, 1 - final transmittance
};

template <typename Scalar>
ColorRender<Scalar> render_color(const GaussianScene<Scalar>& scene, const CameraView<Scalar>& cam,
                                 const RasterSettings& settings = {}) {
    const PreparedView<Scalar> view = prepare_view(scene, cam, settings);
    std::vector<Vec3<Scalar>> colors(view.projected.size());
    const Vec3<Scalar> eye = cam.center();
    for (std::size_t i = 0; i < view.projected.size(); ++i) {
        const auto& g = scene.gaussians[std::size_t(view.projected[i].gaussian_index)];
        colors[i] = eval_color(g.sh, scene.sh_degree, Vec3<Scalar>(g.position - eye));
    }

    ColorRender<Scalar> out{FeatureMap<Scalar>(cam.height, cam.width, 3), ScalarImage<Scalar>::Zero(cam.height, cam.width)};
    for_each_pixel(view, settings, [&](int x, int y, const std::vector<int>& list) {
        Vec3<Scalar> c = Vec3<Scalar>::Zero();
        const Scalar t = blend_pixel(view, list, x, y, settings,
                                     [&](int idx, Scalar w) { c += w * colors[std::size_t(idx)]; });
        out.image.pixel(x, y) = c.transpose();
        out.alpha(y, x) = Scalar(1) - t;
    });
    return out;
}

/// Per-pixel sum of w_i f_i. Contributions with weight below `min_weight` are
/// left out of the sum; they still attenuate the Gaussians behind them.
template <typename Scalar>
FeatureMap<Scalar> render_features(const GaussianScene<Scalar>& scene, const CameraView<Scalar>& cam,
                                   const RasterSettings& settings = {}, double min_weight = 0.0) {
    if (!scene.has_features()) throw InputError("render_features: scene has no features (feature_dim = 0)");
    const PreparedView<Scalar> view = prepare_view(scene, cam, settings);
    FeatureMap<Scalar> out(cam.height, cam.width, scene.feature_dim());
    for_each_pixel(view, settings, [&](int x, int y, const std::vector<int>& list) {
        auto px = out.pixel(x, y);
        blend_pixel(view, list, x, y, settings, [&](int idx, Scalar w) {
            if (w < Scalar(min_weight)) return;
            px.noalias() += w * scene.features.row(view.projected[std::size_t(idx)].gaussian_index);
        });
    });
    return out;
}

template <typename Scalar>
struct CenterSample {
    int gaussian_index = -1;
    int view = -1;
    Eigen::Vector2i pixel = Eigen::Vector2i::Zero();  // in feature-map coordinates
    Scalar weight = 0;
    VecX<Scalar> feature;
};

/// Nearest-neighbour lookup of a render-resolution pixel in a feature map
/// whose resolution may differ. Throws when the aspect ratios differ by >1%.
struct MapSampler {
    double sx = 1.0, sy = 1.0;
    int map_w = 0, map_h = 0;

    MapSampler(int render_w, int render_h, int map_w_, int map_h_) : map_w(map_w_), map_h(map_h_) {
        if (map_w <= 0 || map_h <= 0) throw ConsistencyError("feature map has empty dimensions");
        sx = double(map_w) / double(render_w);
        sy = double(map_h) / double(render_h);
        if (std::abs(sx - sy) > 0.01 * std::max(sx, sy)) {
            throw ConsistencyError("feature map aspect ratio does not match the camera (map " +
                                   std::to_string(map_w) + "x" + std::to_string(map_h) + ", render " +
                                   std::to_string(render_w) + "x" + std::to_string(render_h) + ")");
        }
    }

    Eigen::Vector2i operator()(int x, int y) const {
        return {std::min(map_w - 1, static_cast<int>(std::floor(x * sx))),
                std::min(map_h - 1, static_cast<int>(std::floor(y * sy)))};
    }
};

/// For every in-frustum Gaussian whose floor-projected center lies inside the
/// image, records its blending weight at that pixel and the feature there.
/// Samples come out in ascending Gaussian index.
template <typename Scalar>
std::vector<CenterSample<Scalar>> collect_center_samples(const GaussianScene<Scalar>& scene,
                                                         const CameraView<Scalar>& cam,
                                                         const FeatureMap<Scalar>& feat_map,
                                                         double occlusion_threshold,
                                                         const RasterSettings& settings = {},
                                                         int view_index = 0) {
    if (occlusion_threshold < 0) throw InputError("occlusion threshold must be >= 0");
    const MapSampler sampler(cam.width, cam.height, feat_map.width, feat_map.height);
    const PreparedView<Scalar> view = prepare_view(scene, cam, settings);

    const std::size_t n = view.projected.size();
    std::vector<Eigen::Index> center(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2i c = view.projected[i].center_pixel();
        if (c.x() >= 0 && c.x() < cam.width && c.y() >= 0 && c.y() < cam.height) {
            center[i] = Eigen::Index(c.y()) * cam.width + c.x();
        }
    }
    // Each Gaussian has one center pixel, so tiles write disjoint slots.
    std::vector<Scalar> weight(n, Scalar(0));
    for_each_pixel(view, settings, [&](int x, int y, const std::vector<int>& list) {
        const Eigen::Index pix = Eigen::Index(y) * cam.width + x;
        blend_pixel(view, list, x, y, settings, [&](int idx, Scalar w) {
            if (center[std::size_t(idx)] == pix) weight[std::size_t(idx)] = w;
        });
    });

    std::vector<CenterSample<Scalar>> samples;
    for (std::size_t i = 0; i < n; ++i) {
        if (center[i] < 0) continue;
        const Scalar w = weight[i];
        if (!(w > Scalar(0)) || w < Scalar(occlusion_threshold)) continue;
        const Eigen::Vector2i c = view.projected[i].center_pixel();
        CenterSample<Scalar> s;
        s.gaussian_index = view.projected[i].gaussian_index;
        s.view = view_index;
        s.pixel = sampler(c.x(), c.y());
        s.weight = w;
        s.feature = feat_map.pixel(s.pixel.x(), s.pixel.y()).transpose();
        samples.push_back(std::move(s));
    }
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.gaussian_index < b.gaussian_index; });
    return samples;
}

}  // namespace featlift
