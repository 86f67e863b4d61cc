#pragma once

// Exact maximum-likelihood feature solve over every weighted pixel, used to
// validate the closed-form weighted average and to measure how much the
// cross-talk and linearization shortcuts cost on a given scene.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "featlift/error.hpp"
#include "featlift/feature_map.hpp"
#include "featlift/rasterizer.hpp"
#include "featlift/scene.hpp"

namespace featlift {

enum class DenseMode {
    AllPixels,     // every pixel a Gaussian touches
    CenterPixels,  // only each Gaussian's own center pixel, as in the uplift pass
};

struct DenseEntry {
    int gaussian = -1;
    double weight = 0.0;
};

struct PixelRecord {
    int view = -1;
    int x = 0;
    int y = 0;
    std::vector<DenseEntry> entries;
};

struct DenseWeightRecord {
    int n_gaussians = 0;
    std::vector<PixelRecord> pixels;
    RowMatrix<double> observed;  // one row per record in `pixels`

    int dim() const { return static_cast<int>(observed.cols()); }
};

struct DenseLimits {
    std::size_t max_gaussians = 2000;
    std::size_t max_pixels = 1000000;
    double min_weight = 1e-8;
};

template <typename Scalar>
DenseWeightRecord collect_dense_weights(const GaussianScene<Scalar>& scene, std::span<const CameraView<Scalar>> views,
                                        std::span<const FeatureMap<Scalar>> maps,
                                        DenseMode mode = DenseMode::AllPixels, const RasterSettings& settings = {},
                                        const DenseLimits& limits = {}) {
    if (views.size() != maps.size()) throw ConsistencyError("oracle: view/map count mismatch");
    if (views.empty()) throw InputError("oracle: no views");
    if (scene.size() > limits.max_gaussians) {
        throw InputError("oracle: scene has " + std::to_string(scene.size()) + " gaussians, guard is " +
                         std::to_string(limits.max_gaussians));
    }
    std::size_t total_pixels = 0;
    for (const auto& v : views) total_pixels += std::size_t(v.width) * std::size_t(v.height);
    if (total_pixels > limits.max_pixels) {
        throw InputError("oracle: " + std::to_string(total_pixels) + " pixels exceeds guard of " +
                         std::to_string(limits.max_pixels));
    }
    const int d = maps.front().dim();

    DenseWeightRecord rec;
    rec.n_gaussians = static_cast<int>(scene.size());
    std::vector<std::vector<double>> rows;

    RasterSettings sequential = settings;
    sequential.threads = 1;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const auto& cam = views[v];
        const auto& map = maps[v];
        if (map.dim() != d) throw ConsistencyError("oracle: feature maps disagree on dimension");
        const MapSampler sampler(cam.width, cam.height, map.width, map.height);
        const PreparedView<Scalar> view = prepare_view(scene, cam, sequential);

        std::vector<Eigen::Index> center(view.projected.size(), -1);
        for (std::size_t i = 0; i < view.projected.size(); ++i) {
            const Eigen::Vector2i c = view.projected[i].center_pixel();
            if (c.x() >= 0 && c.x() < cam.width && c.y() >= 0 && c.y() < cam.height) {
                center[i] = Eigen::Index(c.y()) * cam.width + c.x();
            }
        }

        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Eigen::Index pix = Eigen::Index(y) * cam.width + x;
                const auto& list = view.bins.tile(x / view.bins.tile_size, y / view.bins.tile_size);
                PixelRecord pr{static_cast<int>(v), x, y, {}};
                blend_pixel(view, list, x, y, sequential, [&](int idx, Scalar w) {
                    if (double(w) < limits.min_weight) return;
                    if (mode == DenseMode::CenterPixels && center[std::size_t(idx)] != pix) return;
                    pr.entries.push_back({view.projected[std::size_t(idx)].gaussian_index, double(w)});
                });
                if (pr.entries.empty()) continue;
                const Eigen::Vector2i m = sampler(x, y);
                const auto f = map.pixel(m.x(), m.y());
                rows.emplace_back(std::size_t(d));
                for (int k = 0; k < d; ++k) rows.back()[std::size_t(k)] = double(f(k));
                rec.pixels.push_back(std::move(pr));
            }
        }
    }
    rec.observed.resize(Eigen::Index(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int k = 0; k < d; ++k) rec.observed(Eigen::Index(r), k) = rows[r][std::size_t(k)];
    }
    return rec;
}

template <typename Scalar>
DenseWeightRecord collect_dense_weights(const GaussianScene<Scalar>& scene, const std::vector<CameraView<Scalar>>& views,
                                        const std::vector<FeatureMap<Scalar>>& maps,
                                        DenseMode mode = DenseMode::AllPixels, const RasterSettings& settings = {},
                                        const DenseLimits& limits = {}) {
    return collect_dense_weights(scene, std::span<const CameraView<Scalar>>(views),
                                 std::span<const FeatureMap<Scalar>>(maps), mode, settings, limits);
}

/// Copy of `rec` with every weight >= cut set to 1 and the rest dropped. Pixels
/// left without entries are removed. Turns a rendered record into the
/// binary-weight case where the closed form and the exact solve coincide.
inline DenseWeightRecord binarize_weights(const DenseWeightRecord& rec, double cut = 0.5) {
    DenseWeightRecord out;
    out.n_gaussians = rec.n_gaussians;
    std::vector<Eigen::Index> kept;
    for (std::size_t r = 0; r < rec.pixels.size(); ++r) {
        PixelRecord pr{rec.pixels[r].view, rec.pixels[r].x, rec.pixels[r].y, {}};
        for (const auto& e : rec.pixels[r].entries) {
            if (e.weight >= cut) pr.entries.push_back({e.gaussian, 1.0});
        }
        if (pr.entries.empty()) continue;
        out.pixels.push_back(std::move(pr));
        kept.push_back(Eigen::Index(r));
    }
    out.observed.resize(Eigen::Index(kept.size()), rec.dim());
    for (std::size_t k = 0; k < kept.size(); ++k) out.observed.row(Eigen::Index(k)) = rec.observed.row(kept[k]);
    return out;
}

/// Largest product w_i w_k (i != k) found at any pixel; 0 means no cross-talk.
inline double max_cross_talk(const DenseWeightRecord& rec) {
    double worst = 0.0;
    for (const auto& p : rec.pixels) {
        for (std::size_t a = 0; a < p.entries.size(); ++a) {
            for (std::size_t b = a + 1; b < p.entries.size(); ++b) {
                if (p.entries[a].gaussian == p.entries[b].gaussian) continue;
                worst = std::max(worst, p.entries[a].weight * p.entries[b].weight);
            }
        }
    }
    return worst;
}

/// Weighted average over every recorded pixel: sum w f / sum w per Gaussian.
inline RowMatrix<double> closed_form_features(const DenseWeightRecord& rec, std::vector<bool>* active = nullptr) {
    RowMatrix<double> num = RowMatrix<double>::Zero(rec.n_gaussians, rec.dim());
    Eigen::VectorXd den = Eigen::VectorXd::Zero(rec.n_gaussians);
    for (std::size_t r = 0; r < rec.pixels.size(); ++r) {
        for (const auto& e : rec.pixels[r].entries) {
            num.row(e.gaussian).noalias() += e.weight * rec.observed.row(Eigen::Index(r));
            den(e.gaussian) += e.weight;
        }
    }
    if (active) active->assign(std::size_t(rec.n_gaussians), false);
    for (int i = 0; i < rec.n_gaussians; ++i) {
        if (den(i) > 0) {
            num.row(i) /= den(i);
            if (active) (*active)[std::size_t(i)] = true;
        }
    }
    return num;
}

struct NormalEquations {
    Eigen::MatrixXd lhs;  // A[i][k] = sum w_i w_k
    RowMatrix<double> rhs;  // B[i] = sum w_i f
};

inline NormalEquations assemble_normal_equations(const DenseWeightRecord& rec) {
    NormalEquations eq;
    eq.lhs = Eigen::MatrixXd::Zero(rec.n_gaussians, rec.n_gaussians);
    eq.rhs = RowMatrix<double>::Zero(rec.n_gaussians, rec.dim());
    for (std::size_t r = 0; r < rec.pixels.size(); ++r) {
        const auto& entries = rec.pixels[r].entries;
        for (const auto& a : entries) {
            eq.rhs.row(a.gaussian).noalias() += a.weight * rec.observed.row(Eigen::Index(r));
            for (const auto& b : entries) eq.lhs(a.gaussian, b.gaussian) += a.weight * b.weight;
        }
    }
    return eq;
}

struct MlSolution {
    RowMatrix<double> features;        // zero rows for never-observed Gaussians
    std::vector<bool> identifiable;
    bool rank_deficient = false;
    Eigen::Index rank = 0;             // rank of the system restricted to observed Gaussians

    std::vector<int> unidentifiable() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < identifiable.size(); ++i) {
            if (!identifiable[i]) out.push_back(static_cast<int>(i));
        }
        return out;
    }
};

struct MlSolveOptions {
    double rank_tolerance = 1e-12;  // relative to the largest pivot
    double ridge = 1e-10;           // relative to the mean diagonal, only when rank deficient
};

/// Solves A F = B by a symmetric (LDL^T) solve of the normal equations.
/// Never-observed Gaussians are dropped first. When the remaining system is
/// singular, a small ridge gives a near minimum-norm answer and the Gaussians
/// touching the null space are flagged.
inline MlSolution exact_ml_solve(const DenseWeightRecord& rec, const MlSolveOptions& opt = {}) {
    const NormalEquations eq = assemble_normal_equations(rec);
    const int n = rec.n_gaussians;

    MlSolution sol;
    sol.features = RowMatrix<double>::Zero(n, rec.dim());
    sol.identifiable.assign(std::size_t(n), false);

    std::vector<Eigen::Index> observed;
    for (int i = 0; i < n; ++i) {
        if (eq.lhs(i, i) > 0) observed.push_back(i);
    }
    const auto m = Eigen::Index(observed.size());
    if (m == 0) return sol;

    Eigen::MatrixXd a(m, m);
    RowMatrix<double> b(m, rec.dim());
    for (Eigen::Index r = 0; r < m; ++r) {
        b.row(r) = eq.rhs.row(observed[std::size_t(r)]);
        for (Eigen::Index c = 0; c < m; ++c) a(r, c) = eq.lhs(observed[std::size_t(r)], observed[std::size_t(c)]);
    }

    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    const double largest = pivots.maxCoeff();
    sol.rank = (pivots.array() > opt.rank_tolerance * largest).count();
    sol.rank_deficient = ldlt.info() != Eigen::Success || sol.rank < m;

    std::vector<bool> flagged(std::size_t(m), false);
    if (sol.rank_deficient) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
        const Eigen::VectorXd& ev = eig.eigenvalues();
        const double top = ev.cwiseAbs().maxCoeff();
        for (Eigen::Index k = 0; k < m; ++k) {
            if (std::abs(ev(k)) > opt.rank_tolerance * top) continue;
            const Eigen::VectorXd v = eig.eigenvectors().col(k);
            for (Eigen::Index r = 0; r < m; ++r) {
                if (v(r) * v(r) > 1e-6) flagged[std::size_t(r)] = true;
            }
        }
        const double ridge = opt.ridge * a.diagonal().mean();
        a.diagonal().array() += ridge;
        ldlt.compute(a);
    }
    const Eigen::MatrixXd x = ldlt.solve(Eigen::MatrixXd(b));
    for (Eigen::Index r = 0; r < m; ++r) {
        sol.features.row(observed[std::size_t(r)]) = x.row(r);
        sol.identifiable[std::size_t(observed[std::size_t(r)])] = !flagged[std::size_t(r)];
    }
    return sol;
}

struct GapReport {
    std::vector<double> errors;  // per Gaussian
    double mean = 0.0;
    double max = 0.0;
    double p95 = 0.0;
};

/// ||exact - approx|| / max(||exact||, eps) per row, with summary statistics.
/// Rows where `include` is false are skipped (reported as 0).
template <typename DerivedA, typename DerivedB>
GapReport approximation_gap(const Eigen::MatrixBase<DerivedA>& exact, const Eigen::MatrixBase<DerivedB>& approx,
                            const std::vector<bool>* include = nullptr, double eps = 1e-12) {
    if (exact.rows() != approx.rows() || exact.cols() != approx.cols()) {
        throw ConsistencyError("approximation_gap: shape mismatch");
    }
    GapReport rep;
    rep.errors.assign(std::size_t(exact.rows()), 0.0);
    std::vector<double> used;
    for (Eigen::Index i = 0; i < exact.rows(); ++i) {
        if (include && !(*include)[std::size_t(i)]) continue;
        const double num = (exact.row(i).template cast<double>() - approx.row(i).template cast<double>()).norm();
        const double den = std::max(exact.row(i).template cast<double>().norm(), eps);
        rep.errors[std::size_t(i)] = num / den;
        used.push_back(num / den);
    }
    if (used.empty()) return rep;
    double sum = 0.0;
    for (double e : used) sum += e;
    rep.mean = sum / double(used.size());
    std::sort(used.begin(), used.end());
    rep.max = used.back();
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * double(used.size())));
    rep.p95 = used[std::max<std::size_t>(rank, 1) - 1];
    return rep;
}

}  // namespace featlift
