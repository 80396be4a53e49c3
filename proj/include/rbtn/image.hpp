#pragma once

#include "rbtn/error.hpp"
#include "rbtn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rbtn {

enum class Domain { face, sketch };

inline const char* to_string(Domain d) { return d == Domain::face ? "face" : "sketch"; }
Domain parse_domain(const std::string& s);

// Square RGB image with values in [-1, 1]. pixels is 3 x (size * size); the
// column index of pixel (y, x) is y * size + x.
template <typename T>
struct Image {
    Matrix<T> pixels;
    int size = 0;
    Domain domain = Domain::face;

    Image() = default;
    Image(int size_, Domain d, T fill = T(1))
        : pixels(Matrix<T>::Constant(3, Eigen::Index(size_) * size_, fill)), size(size_), domain(d) {}

    Eigen::Index index(int y, int x) const { return Eigen::Index(y) * size + x; }
    int pixel_count() const { return size * size; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out;
        out.pixels = pixels.template cast<U>();
        out.size = size;
        out.domain = domain;
        return out;
    }

    bool operator==(const Image& o) const {
        return size == o.size && domain == o.domain && pixels == o.pixels;
    }
};

template <typename T>
struct ImagePair {
    Image<T> face;
    Image<T> sketch;
};

// Binary H x W map, stored in the same pixel order as Image.
struct Mask {
    int size = 0;
    Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> map;

    Mask() = default;
    explicit Mask(int size_, std::uint8_t fill = 0)
        : size(size_), map(Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>::Constant(Eigen::Index(size_) * size_, fill)) {}

    std::uint8_t at(int y, int x) const { return map(Eigen::Index(y) * size + x); }
    std::uint8_t& at(int y, int x) { return map(Eigen::Index(y) * size + x); }
    Eigen::Index kept() const { return (map != 0).count(); }
    bool empty() const { return kept() == 0; }
    bool binary() const { return ((map == 0) || (map == 1)).all(); }
    Mask complement() const;
    bool overlaps(const Mask& o) const;

    bool operator==(const Mask& o) const { return size == o.size && (map == o.map).all(); }

    static Mask rect(int size, int x0, int y0, int w, int h);
};

// Stacks images into a batch. All images must share one size.
template <typename T>
FeatureMap<T> to_batch(std::span<const Image<T>* const> images);

template <typename T>
FeatureMap<T> to_batch(const Image<T>& image);

// Stacks (face, sketch) into a 6-channel pair batch.
template <typename T>
FeatureMap<T> pair_batch(std::span<const Image<T>* const> faces, std::span<const Image<T>* const> sketches);

template <typename T>
Image<T> from_batch(const FeatureMap<T>& batch, int b, Domain domain);

template <typename T>
double mean_abs_diff(const Image<T>& a, const Image<T>& b);

} // namespace rbtn
