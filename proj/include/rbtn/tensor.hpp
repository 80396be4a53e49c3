#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace rbtn {

template <typename T> using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T> using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// A batch of multi-channel feature maps.
//
// Storage is one column per pixel and one row per channel, so each pixel's
// channel vector is contiguous (interleaved HWC order). Columns run over
// (sample, y, x) with x fastest; sample b occupies the contiguous column range
// [b * height * width, (b + 1) * height * width).
template <typename T>
struct FeatureMap {
    Matrix<T> data;
    int batch = 0;
    int height = 0;
    int width = 0;

    FeatureMap() = default;
    FeatureMap(int channels, int batch_, int height_, int width_)
        : data(Matrix<T>::Zero(channels, Eigen::Index(batch_) * height_ * width_)),
          batch(batch_), height(height_), width(width_) {}

    int channels() const { return static_cast<int>(data.rows()); }
    int pixels() const { return height * width; }

    auto sample(int b) { return data.middleCols(Eigen::Index(b) * pixels(), pixels()); }
    auto sample(int b) const { return data.middleCols(Eigen::Index(b) * pixels(), pixels()); }

    bool same_shape(const FeatureMap& o) const {
        return channels() == o.channels() && batch == o.batch && height == o.height && width == o.width;
    }
};

} // namespace rbtn
