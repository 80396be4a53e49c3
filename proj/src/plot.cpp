#include "rbtn/plot.hpp"

#include "rbtn/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace rbtn {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> f{
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'|', {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    };
    return f;
}

constexpr int kAdvance = 6;

std::string tick_label(double v, double span) {
    char buf[32];
    if (span >= 20) std::snprintf(buf, sizeof buf, "%.0f", v);
    else if (span >= 2) std::snprintf(buf, sizeof buf, "%.1f", v);
    else if (span >= 0.2) std::snprintf(buf, sizeof buf, "%.2f", v);
    else std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

} // namespace

int text_width(const std::string& text) { return int(text.size()) * kAdvance; }

void draw_text(Raster& r, int x, int y, const std::string& text, const Rgb& color) {
    const auto& f = font();
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto it = f.find(char(std::toupper(static_cast<unsigned char>(text[i]))));
        if (it == f.end()) continue;
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (it->second[row] & (0x10 >> col)) r.blend(x + int(i) * kAdvance + col, y + row, color, 1.0);
    }
}

Rgb palette(int i) {
    static const std::array<Rgb, 6> colors{{{0.12, 0.47, 0.71}, {0.84, 0.15, 0.16}, {0.17, 0.63, 0.17},
                                            {0.58, 0.40, 0.74}, {1.00, 0.50, 0.05}, {0.55, 0.34, 0.29}}};
    return colors[std::size_t(i) % colors.size()];
}

Rgb8Image render_line_plot(const PlotSpec& spec) {
    if (spec.width < 120 || spec.height < 80) throw ConfigError("plot: canvas too small");
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : spec.series) {
        if (s.x.size() != s.y.size()) throw ShapeError("plot: series '" + s.label + "' has mismatched x/y");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (spec.y_min) y0 = *spec.y_min;
    if (spec.y_max) y1 = *spec.y_max;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;

    Raster r(spec.width, spec.height);
    const Rgb axis{0.2, 0.2, 0.2}, grid{0.88, 0.88, 0.88};
    const int left = 56, right = spec.width - 12, top = 24, bottom = spec.height - 30;
    auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * (right - left); };
    auto sy = [&](double v) { return bottom - (v - y0) / (y1 - y0) * (bottom - top); };

    constexpr int kTicks = 5;
    for (int t = 0; t <= kTicks; ++t) {
        const double vx = x0 + (x1 - x0) * t / kTicks, vy = y0 + (y1 - y0) * t / kTicks;
        const std::array<Point, 2> hline{Point{double(left), sy(vy)}, Point{double(right), sy(vy)}};
        const std::array<Point, 2> vline{Point{sx(vx), double(top)}, Point{sx(vx), double(bottom)}};
        r.stroke_polyline(hline, 1.0, grid);
        r.stroke_polyline(vline, 1.0, grid);
        const std::string lx = tick_label(vx, x1 - x0), ly = tick_label(vy, y1 - y0);
        draw_text(r, int(sx(vx)) - text_width(lx) / 2, bottom + 5, lx, axis);
        draw_text(r, left - 4 - text_width(ly), int(sy(vy)) - 3, ly, axis);
    }
    const std::array<Point, 3> frame{Point{double(left), double(top)}, Point{double(left), double(bottom)},
                                     Point{double(right), double(bottom)}};
    r.stroke_polyline(frame, 1.0, axis);
    draw_text(r, (spec.width - text_width(spec.title)) / 2, 6, spec.title, axis);
    draw_text(r, (left + right - text_width(spec.x_label)) / 2, spec.height - 11, spec.x_label, axis);
    draw_text(r, 4, 6, spec.y_label, axis);

    int legend_y = top + 4;
    for (const auto& s : spec.series) {
        std::vector<Point> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) pts.push_back({sx(s.x[i]), sy(std::clamp(s.y[i], y0, y1))});
        r.stroke_polyline(pts, 1.6, s.color);
        if (pts.size() <= 12)
            for (const auto& p : pts) r.fill_circle(p.x, p.y, 2.5, s.color);
        const int lx = right - 8 - text_width(s.label) - 14;
        r.fill_rect(lx, legend_y + 2, lx + 9, legend_y + 4, s.color);
        draw_text(r, lx + 14, legend_y, s.label, axis);
        legend_y += 11;
    }

    Rgb8Image img;
    img.width = spec.width;
    img.height = spec.height;
    img.rgb = r.to_rgb8();
    return img;
}

void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec) { write_png(path, render_line_plot(spec)); }

} // namespace rbtn
