#pragma once

#include "rbtn/data.hpp"
#include "rbtn/image.hpp"
#include "rbtn/inference.hpp"
#include "rbtn/networks.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace rbtn::test {

inline ArchConfig tiny_arch(int size = 16, int depth = 3, int base = 4, std::uint64_t seed = 1) {
    ArchConfig a;
    a.image_size = size;
    a.depth = depth;
    a.base_channels = base;
    a.seed = seed;
    return a;
}

template <typename T>
Image<T> random_image(int size, Domain d, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image<T> img(size, d);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = static_cast<T>(u(rng));
    return img;
}

template <typename T>
std::vector<ImagePair<T>> random_pairs(int n, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<ImagePair<T>> out;
    for (int i = 0; i < n; ++i)
        out.push_back({random_image<T>(size, Domain::face, rng), random_image<T>(size, Domain::sketch, rng)});
    return out;
}

inline Mask random_rect_mask(int size, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pos(0, size - 1);
    const int x = pos(rng), y = pos(rng);
    std::uniform_int_distribution<int> w(1, size - x), h(1, size - y);
    return Mask::rect(size, x, y, w(rng), h(rng));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("rbtn_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

} // namespace rbtn::test
