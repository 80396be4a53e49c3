#include "rbtn/raster.hpp"

#include "rbtn/error.hpp"

#include <algorithm>
#include <cmath>

namespace rbtn {

double ellipse_distance(double dx, double dy, double ax, double ay) {
    const double g = (dx * dx) / (ax * ax) + (dy * dy) / (ay * ay) - 1.0;
    const double gx = 2.0 * dx / (ax * ax);
    const double gy = 2.0 * dy / (ay * ay);
    const double norm = std::sqrt(gx * gx + gy * gy);
    if (norm < 1e-12) return -std::min(ax, ay);
    return g / norm;
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = a.x + t * vx - p.x, qy = a.y + t * vy - p.y;
    return std::sqrt(qx * qx + qy * qy);
}

Raster::Raster(int width, int height, Rgb fill)
    : width_(width), height_(height), px_(static_cast<std::size_t>(width) * height, fill) {
    if (width <= 0 || height <= 0) throw ShapeError("raster: non-positive size");
}

Rgb Raster::at(int x, int y) const { return px_[static_cast<std::size_t>(y) * width_ + x]; }

void Raster::blend(int x, int y, const Rgb& c, double alpha) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_ || alpha <= 0.0) return;
    alpha = std::min(alpha, 1.0);
    Rgb& p = px_[static_cast<std::size_t>(y) * width_ + x];
    p.r += alpha * (c.r - p.r);
    p.g += alpha * (c.g - p.g);
    p.b += alpha * (c.b - p.b);
}

void Raster::fill_rect(double x0, double y0, double x1, double y1, const Rgb& c) {
    for (int y = std::max(0, int(std::floor(y0))); y <= std::min(height_ - 1, int(std::ceil(y1))); ++y)
        for (int x = std::max(0, int(std::floor(x0))); x <= std::min(width_ - 1, int(std::ceil(x1))); ++x) {
            const double cx = std::clamp(std::min(x + 0.5, x1 + 0.5) - std::max(x - 0.5, x0 - 0.5), 0.0, 1.0);
            const double cy = std::clamp(std::min(y + 0.5, y1 + 0.5) - std::max(y - 0.5, y0 - 0.5), 0.0, 1.0);
            blend(x, y, c, cx * cy);
        }
}

void Raster::fill_ellipse(double cx, double cy, double ax, double ay, const Rgb& c, const Clip& clip) {
    const int x0 = std::max(0, int(std::floor(cx - ax - 1))), x1 = std::min(width_ - 1, int(std::ceil(cx + ax + 1)));
    const int y0 = std::max(0, int(std::floor(cy - ay - 1))), y1 = std::min(height_ - 1, int(std::ceil(cy + ay + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (clip && !clip(x, y)) continue;
            blend(x, y, c, std::clamp(0.5 - ellipse_distance(x - cx, y - cy, ax, ay), 0.0, 1.0));
        }
}

void Raster::stroke_ellipse(double cx, double cy, double ax, double ay, double width, const Rgb& c, const Clip& clip) {
    const double reach = width / 2 + 1;
    const int x0 = std::max(0, int(std::floor(cx - ax - reach))), x1 = std::min(width_ - 1, int(std::ceil(cx + ax + reach)));
    const int y0 = std::max(0, int(std::floor(cy - ay - reach))), y1 = std::min(height_ - 1, int(std::ceil(cy + ay + reach)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (clip && !clip(x, y)) continue;
            const double d = std::abs(ellipse_distance(x - cx, y - cy, ax, ay));
            blend(x, y, c, std::clamp(width / 2 + 0.5 - d, 0.0, 1.0));
        }
}

void Raster::stroke_polyline(std::span<const Point> pts, double width, const Rgb& c) {
    if (pts.size() < 2) return;
    double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
    for (const auto& p : pts) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const double reach = width / 2 + 1;
    for (int y = std::max(0, int(std::floor(miny - reach))); y <= std::min(height_ - 1, int(std::ceil(maxy + reach))); ++y)
        for (int x = std::max(0, int(std::floor(minx - reach))); x <= std::min(width_ - 1, int(std::ceil(maxx + reach))); ++x) {
            double d = 1e30;
            for (std::size_t i = 0; i + 1 < pts.size(); ++i)
                d = std::min(d, segment_distance({double(x), double(y)}, pts[i], pts[i + 1]));
            blend(x, y, c, std::clamp(width / 2 + 0.5 - d, 0.0, 1.0));
        }
}

template <typename T>
Image<T> Raster::to_image(Domain d) const {
    if (width_ != height_) throw ShapeError("raster: image must be square");
    Image<T> img(width_, d);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) {
            const Rgb& p = at(x, y);
            const auto n = img.index(y, x);
            img.pixels(0, n) = static_cast<T>(std::clamp(2.0 * p.r - 1.0, -1.0, 1.0));
            img.pixels(1, n) = static_cast<T>(std::clamp(2.0 * p.g - 1.0, -1.0, 1.0));
            img.pixels(2, n) = static_cast<T>(std::clamp(2.0 * p.b - 1.0, -1.0, 1.0));
        }
    return img;
}

template Image<float> Raster::to_image<float>(Domain) const;
template Image<double> Raster::to_image<double>(Domain) const;

std::vector<std::uint8_t> Raster::to_rgb8() const {
    std::vector<std::uint8_t> out;
    out.reserve(px_.size() * 3);
    for (const auto& p : px_)
        for (double v : {p.r, p.g, p.b}) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return out;
}

} // namespace rbtn
