#pragma once

#include <Eigen/Dense>

#include <cstddef>

#include "featlift/error.hpp"
#include "featlift/scene.hpp"

namespace featlift {

// Dense H x W x d map stored as (H*W) x d, rows in row-major pixel order.
template <typename Scalar>
struct FeatureMap {
    int height = 0;
    int width = 0;
    RowMatrix<Scalar> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int d) : height(h), width(w), data(RowMatrix<Scalar>::Zero(Eigen::Index(h) * w, d)) {}

    int dim() const { return static_cast<int>(data.cols()); }
    Eigen::Index pixel_count() const { return Eigen::Index(height) * width; }
    Eigen::Index index(int x, int y) const { return Eigen::Index(y) * width + x; }

    auto pixel(int x, int y) { return data.row(index(x, y)); }
    auto pixel(int x, int y) const { return data.row(index(x, y)); }

    template <typename Other>
    FeatureMap<Other> cast() const {
        FeatureMap<Other> out;
        out.height = height;
        out.width = width;
        out.data = data.template cast<Other>();
        return out;
    }
};

// Single-channel H x W image (alpha, relevancy).
template <typename Scalar>
using ScalarImage = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace featlift
