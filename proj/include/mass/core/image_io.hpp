#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mass {

/// 8-bit PNG writer; `channels` is 1 (gray) or 3 (RGB), pixels row-major.
void write_png(std::filesystem::path const& path, int64_t width, int64_t height, int channels,
               std::span<uint8_t const> pixels);

struct LineSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal static SVG plots for run reports.
void write_line_plot_svg(std::filesystem::path const& path, std::string const& title,
                         std::vector<LineSeries> const& series);
void write_bar_plot_svg(std::filesystem::path const& path, std::string const& title,
                        std::vector<std::string> const& labels, std::vector<double> const& values);

} // namespace mass
