#include "rbtn/png_io.hpp"

#include "rbtn/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rbtn {

namespace {

struct ReadCursor {
    const std::string* bytes;
    std::size_t offset;
};

void write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

void flush_cb(png_structp) {}

void read_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + len > cur->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(data, cur->bytes->data() + cur->offset, len);
    cur->offset += len;
}

[[noreturn]] void error_cb(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void warning_cb(png_structp, png_const_charp) {}

} // namespace

std::string encode_png(const Rgb8Image& img) {
    if (img.width <= 0 || img.height <= 0 || img.rgb.size() != std::size_t(img.width) * img.height * 3)
        throw ShapeError("png: buffer does not match dimensions");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    png_infop info = png_create_info_struct(png);
    std::string out;
    try {
        png_set_write_fn(png, &out, write_cb, flush_cb);
        png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < img.height; ++y)
            png_write_row(png, const_cast<png_bytep>(img.rgb.data() + std::size_t(y) * img.width * 3));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Rgb8Image decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw IoError("png: not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    png_infop info = png_create_info_struct(png);
    ReadCursor cur{&bytes, 0};
    Rgb8Image img;
    try {
        png_set_read_fn(png, &cur, read_cb);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        img.width = static_cast<int>(png_get_image_width(png, info));
        img.height = static_cast<int>(png_get_image_height(png, info));
        if (png_get_rowbytes(png, info) != std::size_t(img.width) * 3) throw IoError("png: unsupported pixel layout");
        img.rgb.resize(std::size_t(img.width) * img.height * 3);
        std::vector<png_bytep> rows(img.height);
        for (int y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + std::size_t(y) * img.width * 3;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
    const std::string bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

Rgb8Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_png(ss.str());
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

template <typename T>
Rgb8Image to_rgb8(const Image<T>& img) {
    Rgb8Image out;
    out.width = out.height = img.size;
    out.rgb.resize(std::size_t(img.pixel_count()) * 3);
    for (Eigen::Index n = 0; n < img.pixels.cols(); ++n)
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(img.pixels(c, n)), -1.0, 1.0);
            out.rgb[std::size_t(n) * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
        }
    return out;
}

template <typename T>
Image<T> from_rgb8(const Rgb8Image& img, Domain domain) {
    if (img.width != img.height) throw ShapeError("image is not square");
    Image<T> out(img.width, domain);
    for (Eigen::Index n = 0; n < out.pixels.cols(); ++n)
        for (int c = 0; c < 3; ++c)
            out.pixels(c, n) = static_cast<T>(img.rgb[std::size_t(n) * 3 + c] / 127.5 - 1.0);
    return out;
}

template Rgb8Image to_rgb8<float>(const Image<float>&);
template Rgb8Image to_rgb8<double>(const Image<double>&);
template Image<float> from_rgb8<float>(const Rgb8Image&, Domain);
template Image<double> from_rgb8<double>(const Rgb8Image&, Domain);

Rgb8Image mask_to_rgb8(const Mask& m) {
    Rgb8Image out;
    out.width = out.height = m.size;
    out.rgb.resize(std::size_t(m.map.size()) * 3);
    for (Eigen::Index n = 0; n < m.map.size(); ++n)
        std::fill_n(out.rgb.begin() + n * 3, 3, m.map(n) ? 255 : 0);
    return out;
}

Mask mask_from_rgb8(const Rgb8Image& img) {
    if (img.width != img.height) throw ShapeError("mask is not square");
    Mask m(img.width);
    for (Eigen::Index n = 0; n < m.map.size(); ++n) {
        const auto* p = img.rgb.data() + n * 3;
        m.map(n) = std::max({p[0], p[1], p[2]}) >= 128 ? 1 : 0;
    }
    return m;
}

} // namespace rbtn
