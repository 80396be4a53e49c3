#pragma once

// Small anti-aliased rasterizer used by the synthetic renderer and the plots.
// Pixel (x, y) has its center at (x, y); coverage comes from an approximate
// signed distance to each primitive.

#include "rbtn/image.hpp"

#include <functional>
#include <span>
#include <vector>

namespace rbtn {

struct Rgb {
    double r = 1.0, g = 1.0, b = 1.0;  // [0, 1]
    Rgb scaled(double s) const { return {r * s, g * s, b * s}; }
    double luminance() const { return 0.299 * r + 0.587 * g + 0.114 * b; }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

class Raster {
public:
    using Clip = std::function<bool(int x, int y)>;

    Raster(int width, int height, Rgb fill = {});

    int width() const { return width_; }
    int height() const { return height_; }
    Rgb at(int x, int y) const;
    void blend(int x, int y, const Rgb& c, double alpha);

    void fill_rect(double x0, double y0, double x1, double y1, const Rgb& c);
    void fill_ellipse(double cx, double cy, double ax, double ay, const Rgb& c, const Clip& clip = {});
    void stroke_ellipse(double cx, double cy, double ax, double ay, double width, const Rgb& c, const Clip& clip = {});
    void stroke_polyline(std::span<const Point> pts, double width, const Rgb& c);
    void fill_circle(double cx, double cy, double r, const Rgb& c) { fill_ellipse(cx, cy, r, r, c); }

    // Maps [0, 1] color to [-1, 1]; width must equal height.
    template <typename T>
    Image<T> to_image(Domain d) const;

    std::vector<std::uint8_t> to_rgb8() const;

private:
    int width_;
    int height_;
    std::vector<Rgb> px_;
};

// Approximate signed distance to the ellipse boundary (negative inside).
double ellipse_distance(double dx, double dy, double ax, double ay);
double segment_distance(const Point& p, const Point& a, const Point& b);

} // namespace rbtn
