#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/parallel.hpp"
#include "featlift/rasterizer.hpp"
#include "featlift/scene.hpp"

namespace featlift {

struct UpliftConfig {
    double occlusion_threshold = 1e-4;
    bool weighted = true;  // false: plain mean over views (ablation)
    bool filter = true;    // drop Gaussians that never received a sample
    // Sequential accumulation in view order. When false, workers accumulate
    // disjoint view ranges and the partial sums are merged.
    bool deterministic = true;
    RasterSettings raster;
};

template <typename Scalar>
struct UpliftAccumulator {
    RowMatrix<Scalar> feature_sum;  // N x d
    VecX<Scalar> weight_sum;        // N
    Eigen::VectorXi view_count;     // |S_i|

    UpliftAccumulator() = default;
    UpliftAccumulator(Eigen::Index n, Eigen::Index d)
        : feature_sum(RowMatrix<Scalar>::Zero(n, d)),
          weight_sum(VecX<Scalar>::Zero(n)),
          view_count(Eigen::VectorXi::Zero(n)) {}

    Eigen::Index size() const { return weight_sum.size(); }
    Eigen::Index dim() const { return feature_sum.cols(); }

    // Elementwise sums, so merging is associative and commutative.
    UpliftAccumulator& merge(const UpliftAccumulator& other) {
        if (other.size() != size() || other.dim() != dim()) {
            throw ConsistencyError("cannot merge accumulators of different shapes");
        }
        feature_sum += other.feature_sum;
        weight_sum += other.weight_sum;
        view_count += other.view_count;
        return *this;
    }
};

template <typename Scalar>
void accumulate(UpliftAccumulator<Scalar>& acc, std::span<const CenterSample<Scalar>> samples, bool weighted = true) {
    for (const auto& s : samples) {
        if (s.feature.size() != acc.dim()) {
            throw ConsistencyError("sample feature dimension " + std::to_string(s.feature.size()) +
                                   " does not match accumulator dimension " + std::to_string(acc.dim()));
        }
        if (s.gaussian_index < 0 || s.gaussian_index >= acc.size()) {
            throw ConsistencyError("sample refers to gaussian " + std::to_string(s.gaussian_index) +
                                   " outside the accumulator");
        }
    }
    for (const auto& s : samples) {
        const Scalar w = weighted ? s.weight : Scalar(1);
        acc.feature_sum.row(s.gaussian_index).noalias() += w * s.feature.transpose();
        acc.weight_sum(s.gaussian_index) += w;
        acc.view_count(s.gaussian_index) += 1;
    }
}

template <typename Scalar>
struct FinalizedFeatures {
    RowMatrix<Scalar> features;  // N x d; zero rows for inactive Gaussians
    std::vector<bool> active;

    std::size_t active_count() const { return static_cast<std::size_t>(std::count(active.begin(), active.end(), true)); }
};

/// f_i = sum_s w_i^s f_i^s / sum_s w_i^s for every Gaussian that received weight.
template <typename Scalar>
FinalizedFeatures<Scalar> finalize(const UpliftAccumulator<Scalar>& acc) {
    FinalizedFeatures<Scalar> out;
    out.features = RowMatrix<Scalar>::Zero(acc.size(), acc.dim());
    out.active.assign(std::size_t(acc.size()), false);
    for (Eigen::Index i = 0; i < acc.size(); ++i) {
        if (acc.weight_sum(i) > Scalar(0)) {
            out.features.row(i) = acc.feature_sum.row(i) / acc.weight_sum(i);
            out.active[std::size_t(i)] = true;
        }
    }
    return out;
}

template <typename Scalar>
struct FilterResult {
    GaussianScene<Scalar> scene;
    std::vector<int> index_map;  // old index -> new index, -1 when removed
};

/// Keeps exactly the Gaussians with positive accumulated weight. Features are
/// carried over row-by-row when the input scene has them.
template <typename Scalar>
FilterResult<Scalar> filter_inactive(const GaussianScene<Scalar>& scene, const UpliftAccumulator<Scalar>& acc) {
    if (static_cast<std::size_t>(acc.size()) != scene.size()) {
        throw ConsistencyError("accumulator size does not match scene");
    }
    FilterResult<Scalar> out;
    out.scene.sh_degree = scene.sh_degree;
    out.index_map.assign(scene.size(), -1);
    std::vector<Eigen::Index> kept;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (acc.weight_sum(Eigen::Index(i)) > Scalar(0)) {
            out.index_map[i] = static_cast<int>(kept.size());
            kept.push_back(Eigen::Index(i));
            out.scene.gaussians.push_back(scene.gaussians[i]);
        }
    }
    if (scene.has_features()) {
        out.scene.features.resize(Eigen::Index(kept.size()), scene.feature_dim());
        for (std::size_t k = 0; k < kept.size(); ++k) out.scene.features.row(Eigen::Index(k)) = scene.features.row(kept[k]);
    }
    return out;
}

struct UpliftStats {
    std::size_t n_views = 0;
    std::size_t n_input = 0;   // N
    std::size_t n_output = 0;  // M
    std::size_t render_passes = 0;
    std::size_t samples = 0;
    int feature_dim = 0;
};

template <typename Scalar>
struct UpliftResult {
    GaussianScene<Scalar> scene;  // semantic scene (M Gaussians, or N without filtering)
    std::vector<int> index_map;   // input index -> output index, -1 when filtered
    UpliftAccumulator<Scalar> accumulator;
    UpliftStats stats;
};

/// One forward pass per view: collect center samples, accumulate, finalize,
/// then optionally drop Gaussians that never contributed.
template <typename Scalar>
UpliftResult<Scalar> uplift_scene(const GaussianScene<Scalar>& scene, std::span<const CameraView<Scalar>> views,
                                  std::span<const FeatureMap<Scalar>> maps, const UpliftConfig& cfg = {}) {
    if (views.size() != maps.size()) {
        throw ConsistencyError("uplift: " + std::to_string(views.size()) + " views but " +
                               std::to_string(maps.size()) + " feature maps");
    }
    if (views.empty()) throw InputError("uplift: no views");
    if (cfg.occlusion_threshold < 0) throw InputError("uplift: occlusion threshold must be >= 0");
    const int d = maps.front().dim();
    for (const auto& m : maps) {
        if (m.dim() != d) throw ConsistencyError("uplift: feature maps disagree on dimension");
    }

    const std::size_t n_views = views.size();
    const int threads = std::max(1, cfg.raster.threads);
    RasterSettings inner = cfg.raster;
    // parallelism goes to views; each view's pass stays sequential
    inner.threads = n_views >= std::size_t(threads) ? 1 : threads;

    UpliftResult<Scalar> result;
    result.stats.n_views = n_views;
    result.stats.n_input = scene.size();
    result.stats.feature_dim = d;
    UpliftAccumulator<Scalar> acc(Eigen::Index(scene.size()), d);

    if (cfg.deterministic) {
        // Collect a batch of views in parallel, then accumulate in view order.
        const std::size_t batch = std::size_t(threads);
        std::vector<std::vector<CenterSample<Scalar>>> per_view;
        for (std::size_t start = 0; start < n_views; start += batch) {
            const std::size_t count = std::min(batch, n_views - start);
            per_view.assign(count, {});
            parallel_for(count, threads, [&](std::size_t k) {
                const std::size_t v = start + k;
                per_view[k] = collect_center_samples(scene, views[v], maps[v], cfg.occlusion_threshold, inner,
                                                     static_cast<int>(v));
            });
            for (const auto& samples : per_view) {
                accumulate(acc, std::span<const CenterSample<Scalar>>(samples), cfg.weighted);
                result.stats.samples += samples.size();
            }
            result.stats.render_passes += count;
        }
    } else {
        const std::size_t workers = std::min<std::size_t>(std::size_t(threads), n_views);
        std::vector<UpliftAccumulator<Scalar>> partial(workers, UpliftAccumulator<Scalar>(acc.size(), d));
        std::vector<std::size_t> sample_counts(workers, 0);
        parallel_chunks(n_views, threads, [&](std::size_t w, std::size_t begin, std::size_t end) {
            for (std::size_t v = begin; v < end; ++v) {
                const auto samples = collect_center_samples(scene, views[v], maps[v], cfg.occlusion_threshold,
                                                            inner, static_cast<int>(v));
                accumulate(partial[w], std::span<const CenterSample<Scalar>>(samples), cfg.weighted);
                sample_counts[w] += samples.size();
            }
        });
        for (std::size_t w = 0; w < workers; ++w) {
            acc.merge(partial[w]);
            result.stats.samples += sample_counts[w];
        }
        result.stats.render_passes = n_views;
    }

    const FinalizedFeatures<Scalar> fin = finalize(acc);
    GaussianScene<Scalar> semantic;
    semantic.sh_degree = scene.sh_degree;
    semantic.gaussians = scene.gaussians;
    semantic.features = fin.features;

    if (cfg.filter) {
        FilterResult<Scalar> filtered = filter_inactive(semantic, acc);
        result.scene = std::move(filtered.scene);
        result.index_map = std::move(filtered.index_map);
    } else {
        result.scene = std::move(semantic);
        result.index_map.resize(scene.size());
        for (std::size_t i = 0; i < scene.size(); ++i) result.index_map[i] = static_cast<int>(i);
    }
    result.stats.n_output = result.scene.size();
    result.accumulator = std::move(acc);
    return result;
}

template <typename Scalar>
UpliftResult<Scalar> uplift_scene(const GaussianScene<Scalar>& scene, const std::vector<CameraView<Scalar>>& views,
                                  const std::vector<FeatureMap<Scalar>>& maps, const UpliftConfig& cfg = {}) {
    return uplift_scene(scene, std::span<const CameraView<Scalar>>(views), std::span<const FeatureMap<Scalar>>(maps),
                        cfg);
}

}  // namespace featlift
