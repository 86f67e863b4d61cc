#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/scene.hpp"

namespace featlift {

template <typename Scalar>
struct QuerySpec {
    VecX<Scalar> query_embedding;
    std::vector<VecX<Scalar>> canonical_embeddings;  // may be empty
};

struct ThresholdConfig {
    double step = 0.01;
    double stability_threshold = 0.4;  // on |d mean / d threshold|
    double min_area_frac = 0.00005;    // 0.005 % of the image
    double max_area_frac = 0.90;
    std::optional<double> fixed_threshold;

    void validate() const {
        if (!(step > 0 && step < 1)) throw InputError("threshold step must lie in (0, 1)");
        if (!(min_area_frac > 0 && min_area_frac < max_area_frac && max_area_frac <= 1)) {
            throw InputError("area fractions must satisfy 0 < min < max <= 1");
        }
        if (stability_threshold < 0) throw InputError("stability threshold must be >= 0");
    }
};

template <typename Scalar>
struct RelevancyMap {
    ScalarImage<Scalar> values;  // H x W, in [0, 1]
    int level = 0;

    int height() const { return static_cast<int>(values.rows()); }
    int width() const { return static_cast<int>(values.cols()); }
};

/// Cosine-based relevancy per pixel. With canonical phrases the score is the
/// worst pairwise softmax of exp(cos) against each canonical; without them it
/// is (cos + 1) / 2. Zero-norm pixels score 0.
template <typename Scalar>
RelevancyMap<Scalar> relevancy_map(const FeatureMap<Scalar>& map, const QuerySpec<Scalar>& query, int level = 0) {
    const int d = map.dim();
    if (query.query_embedding.size() != d) {
        throw ConsistencyError("query embedding has dimension " + std::to_string(query.query_embedding.size()) +
                               ", map has " + std::to_string(d));
    }
    for (const auto& c : query.canonical_embeddings) {
        if (c.size() != d) throw ConsistencyError("canonical embedding dimension does not match map");
    }
    const double qn = query.query_embedding.template cast<double>().norm();
    if (!(qn > 0)) throw InputError("query embedding has zero norm");
    const Eigen::VectorXd q = query.query_embedding.template cast<double>() / qn;
    std::vector<Eigen::VectorXd> canon;
    for (const auto& c : query.canonical_embeddings) {
        const double n = c.template cast<double>().norm();
        if (!(n > 0)) throw InputError("canonical embedding has zero norm");
        canon.push_back(c.template cast<double>() / n);
    }

    RelevancyMap<Scalar> out;
    out.level = level;
    out.values = ScalarImage<Scalar>::Zero(map.height, map.width);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const Eigen::VectorXd f = map.pixel(x, y).transpose().template cast<double>();
            const double fn = f.norm();
            if (!(fn > 0)) continue;
            const double cq = f.dot(q) / fn;
            double rel;
            if (canon.empty()) {
                rel = 0.5 * (cq + 1.0);
            } else {
                rel = 1.0;
                const double eq = std::exp(cq);
                for (const auto& c : canon) {
                    const double ec = std::exp(f.dot(c) / fn);
                    rel = std::min(rel, eq / (eq + ec));
                }
            }
            out.values(y, x) = static_cast<Scalar>(std::clamp(rel, 0.0, 1.0));
        }
    }
    return out;
}

template <typename Scalar>
std::vector<RelevancyMap<Scalar>> relevancy_maps(std::span<const FeatureMap<Scalar>> level_maps,
                                                 const QuerySpec<Scalar>& query) {
    if (level_maps.empty()) throw InputError("query needs at least one level map");
    std::vector<RelevancyMap<Scalar>> out;
    for (std::size_t l = 0; l < level_maps.size(); ++l) {
        out.push_back(relevancy_map(level_maps[l], query, static_cast<int>(l)));
    }
    return out;
}

/// Level whose map reaches the highest relevancy; ties go to the lowest index.
template <typename Scalar>
int select_level(std::span<const RelevancyMap<Scalar>> maps) {
    if (maps.empty()) throw InputError("select_level: no levels");
    int best = 0;
    Scalar best_value = maps[0].values.maxCoeff();
    for (std::size_t l = 1; l < maps.size(); ++l) {
        const Scalar v = maps[l].values.maxCoeff();
        if (v > best_value) {
            best_value = v;
            best = static_cast<int>(l);
        }
    }
    return best;
}

template <typename Scalar>
Mask fixed_threshold_mask(const RelevancyMap<Scalar>& rel, double threshold = 0.5) {
    if (!(threshold >= 0 && threshold <= 1)) throw InputError("fixed threshold must lie in [0, 1]");
    return rel.values > static_cast<Scalar>(threshold);
}

// One sample of the threshold sweep.
struct SweepPoint {
    double threshold = 0.0;
    double area_frac = 0.0;
    double mean_relevancy = 0.0;
    bool valid = false;        // mask area within [min_area_frac, max_area_frac]
    double gradient = std::numeric_limits<double>::quiet_NaN();  // |forward difference| / step, to next point
};

template <typename Scalar>
std::vector<SweepPoint> threshold_sweep(const RelevancyMap<Scalar>& rel, const ThresholdConfig& cfg) {
    cfg.validate();
    const double lo = static_cast<double>(rel.values.minCoeff());
    const double hi = static_cast<double>(rel.values.maxCoeff());
    const auto total = static_cast<double>(rel.values.size());
    const auto steps = static_cast<long>(std::floor((hi - lo) / cfg.step + 1e-9));

    std::vector<SweepPoint> sweep;
    sweep.reserve(std::size_t(steps + 1));
    for (long k = 0; k <= steps; ++k) {
        SweepPoint p;
        p.threshold = lo + double(k) * cfg.step;
        const auto t = static_cast<Scalar>(p.threshold);
        double sum = 0.0;
        long count = 0;
        for (Eigen::Index i = 0; i < rel.values.size(); ++i) {
            const Scalar v = rel.values.data()[i];
            if (v > t) {
                sum += double(v);
                ++count;
            }
        }
        p.area_frac = double(count) / total;
        p.valid = count > 0 && p.area_frac >= cfg.min_area_frac && p.area_frac <= cfg.max_area_frac;
        p.mean_relevancy = count > 0 ? sum / double(count) : 0.0;
        sweep.push_back(p);
    }
    for (std::size_t k = 0; k + 1 < sweep.size(); ++k) {
        if (sweep[k].valid && sweep[k + 1].valid) {
            sweep[k].gradient = std::abs(sweep[k + 1].mean_relevancy - sweep[k].mean_relevancy) / cfg.step;
        }
    }
    return sweep;
}

struct ThresholdResult {
    double threshold = 0.0;
    Mask mask;
    double run_mean = 0.0;      // mean of the mean-relevancy curve over the chosen run
    double run_begin = 0.0;     // first and last threshold of the chosen stable run
    double run_end = 0.0;
};

/// Sweeps thresholds, finds maximal runs of consecutive valid thresholds whose
/// mean-relevancy curve is flat (|gradient| < stability_threshold), picks the
/// run with the highest mean relevancy and returns its midpoint. Empty when no
/// run spans at least two thresholds.
template <typename Scalar>
std::optional<ThresholdResult> dynamic_threshold(const RelevancyMap<Scalar>& rel, const ThresholdConfig& cfg = {}) {
    const std::vector<SweepPoint> sweep = threshold_sweep(rel, cfg);

    std::optional<ThresholdResult> best;
    std::size_t k = 0;
    while (k < sweep.size()) {
        if (!(sweep[k].gradient < cfg.stability_threshold)) {  // NaN (invalid edge) is not stable
            ++k;
            continue;
        }
        const std::size_t begin = k;
        while (k < sweep.size() && sweep[k].gradient < cfg.stability_threshold) ++k;
        const std::size_t end = k;  // run covers thresholds [begin, end]
        double mean = 0.0;
        for (std::size_t j = begin; j <= end; ++j) mean += sweep[j].mean_relevancy;
        mean /= double(end - begin + 1);
        if (!best || mean > best->run_mean) {
            ThresholdResult r;
            r.run_begin = sweep[begin].threshold;
            r.run_end = sweep[end].threshold;
            r.run_mean = mean;
            r.threshold = 0.5 * (r.run_begin + r.run_end);
            best = std::move(r);
        }
    }
    if (best) best->mask = rel.values > static_cast<Scalar>(best->threshold);
    return best;
}

struct PixelCoord {
    int x = 0;
    int y = 0;
    bool operator==(const PixelCoord&) const = default;
};

/// Highest-relevancy pixel; ties resolve to the smallest row-major index.
template <typename Scalar>
PixelCoord localize(const RelevancyMap<Scalar>& rel) {
    if (rel.values.size() == 0) throw InputError("localize: empty relevancy map");
    Eigen::Index best = 0;
    const Scalar* v = rel.values.data();
    for (Eigen::Index i = 1; i < rel.values.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return {static_cast<int>(best % rel.values.cols()), static_cast<int>(best / rel.values.cols())};
}

struct IoU {
    double value = 0.0;
    bool both_empty = false;  // value is defined as 1 in that case
};

inline IoU compute_iou(const Mask& mask, const Mask& gt) {
    if (mask.rows() != gt.rows() || mask.cols() != gt.cols()) {
        throw ConsistencyError("compute_iou: mask is " + std::to_string(mask.cols()) + "x" +
                               std::to_string(mask.rows()) + ", ground truth is " + std::to_string(gt.cols()) +
                               "x" + std::to_string(gt.rows()));
    }
    const auto inter = (mask && gt).count();
    const auto uni = (mask || gt).count();
    if (uni == 0) return {1.0, true};
    return {double(inter) / double(uni), false};
}

struct MaskPair {
    const Mask* predicted = nullptr;
    const Mask* ground_truth = nullptr;
};

inline double mean_iou(std::span<const MaskPair> pairs) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& p : pairs) sum += compute_iou(*p.predicted, *p.ground_truth).value;
    return sum / double(pairs.size());
}

template <typename Scalar>
struct QueryOutcome {
    int level = 0;
    std::vector<RelevancyMap<Scalar>> levels;
    std::optional<double> threshold;  // empty: no detection
    Mask mask;
    PixelCoord location;
    bool dynamic = false;
};

/// Full per-query protocol: relevancy per level, level selection, then either
/// a fixed threshold or dynamic thresholding (falling back to the fixed value
/// when configured), plus localization on the chosen level.
template <typename Scalar>
QueryOutcome<Scalar> run_query(std::span<const FeatureMap<Scalar>> level_maps, const QuerySpec<Scalar>& query,
                               const ThresholdConfig& cfg, bool use_dynamic) {
    QueryOutcome<Scalar> out;
    out.levels = relevancy_maps(level_maps, query);
    out.level = select_level(std::span<const RelevancyMap<Scalar>>(out.levels));
    const auto& rel = out.levels[std::size_t(out.level)];
    out.location = localize(rel);
    out.dynamic = use_dynamic;
    if (use_dynamic) {
        if (auto r = dynamic_threshold(rel, cfg)) {
            out.threshold = r->threshold;
            out.mask = std::move(r->mask);
            return out;
        }
    }
    if (!use_dynamic || cfg.fixed_threshold) {
        const double t = cfg.fixed_threshold.value_or(0.5);
        out.threshold = t;
        out.mask = fixed_threshold_mask(rel, t);
    } else {
        out.mask = Mask::Constant(rel.height(), rel.width(), false);
    }
    return out;
}

}  // namespace featlift
