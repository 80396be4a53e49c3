#pragma once

#include "rbtn/png_io.hpp"
#include "rbtn/raster.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rbtn {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    Rgb color;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    std::optional<double> y_min;
    std::optional<double> y_max;
    int width = 480;
    int height = 320;
};

Rgb palette(int i);

Rgb8Image render_line_plot(const PlotSpec& spec);
void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec);

// 5x7 bitmap text; lowercase renders as uppercase, unknown glyphs as blanks.
void draw_text(Raster& r, int x, int y, const std::string& text, const Rgb& color);
int text_width(const std::string& text);

} // namespace rbtn
