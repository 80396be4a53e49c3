#pragma once

#include "rbtn/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rbtn {

struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

std::string encode_png(const Rgb8Image& img);
Rgb8Image decode_png(const std::string& bytes);

void write_png(const std::filesystem::path& path, const Rgb8Image& img);
Rgb8Image read_png(const std::filesystem::path& path);

// 8-bit <-> [-1, 1]: v8 = round((x + 1) * 127.5), x = v8 / 127.5 - 1.
template <typename T>
Rgb8Image to_rgb8(const Image<T>& img);

template <typename T>
Image<T> from_rgb8(const Rgb8Image& img, Domain domain);

// Masks travel as black/white PNGs; a pixel is kept when any channel is >= 128.
Rgb8Image mask_to_rgb8(const Mask& m);
Mask mask_from_rgb8(const Rgb8Image& img);

template <typename T>
void save_image(const std::filesystem::path& path, const Image<T>& img) {
    write_png(path, to_rgb8(img));
}

template <typename T>
Image<T> load_image(const std::filesystem::path& path, Domain domain) {
    return from_rgb8<T>(read_png(path), domain);
}

} // namespace rbtn
