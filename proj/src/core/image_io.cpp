#include "mass/core/image_io.hpp"

#include "mass/core/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace mass {

namespace fs = std::filesystem;

void write_png(fs::path const& path, int64_t width, int64_t height, int channels, std::span<uint8_t const> pixels) {
    if (channels != 1 && channels != 3) throw InvalidParameter("PNG writer supports 1 or 3 channels");
    if (static_cast<int64_t>(pixels.size()) != width * height * channels) throw ShapeError("PNG pixel buffer size mismatch");
    if (path.parent_path() != fs::path()) fs::create_directories(path.parent_path());
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw FormatError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng error writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t r = 0; r < height; ++r) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width * channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

constexpr char const* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(std::string const& s) {
    std::string out;
    for (char const c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

void save(fs::path const& path, std::string const& svg) {
    if (path.parent_path() != fs::path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    f << svg;
    if (!f) throw FormatError("cannot write " + path.string());
}

} // namespace

void write_line_plot_svg(fs::path const& path, std::string const& title, std::vector<LineSeries> const& series) {
    constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 40;
    double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
    double ymin = xmin, ymax = xmax;
    for (auto const& s : series) {
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << ymax << "</text>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"11\">" << ymin << "</text>\n";
    o << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-size=\"11\">" << xmin << "</text>\n";
    o << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"end\" font-size=\"11\">" << xmax << "</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        auto const* color = kPalette[s % std::size(kPalette)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
            if (std::isfinite(series[s].y[i])) o << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
        }
        o << "\"/>\n";
        o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1) << "\" text-anchor=\"end\" font-size=\"12\" fill=\""
          << color << "\">" << escape(series[s].label) << "</text>\n";
    }
    o << "</svg>\n";
    save(path, o.str());
}

void write_bar_plot_svg(fs::path const& path, std::string const& title, std::vector<std::string> const& labels,
                        std::vector<double> const& values) {
    constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 60;
    double vmax = 0;
    for (double const v : values) vmax = std::max(vmax, v);
    if (vmax <= 0) vmax = 1;
    double const slot = values.empty() ? 1 : (W - L - R) / static_cast<double>(values.size());
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (size_t i = 0; i < values.size(); ++i) {
        double const h = std::max(0.0, values[i]) / vmax * (H - T - B);
        double const x = L + slot * static_cast<double>(i) + slot * 0.15;
        o << "<rect x=\"" << x << "\" y=\"" << H - B - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
          << "\" fill=\"" << kPalette[0] << "\"/>\n";
        o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << H - B - h - 4 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << values[i] << "</text>\n";
        if (i < labels.size()) {
            o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
              << escape(labels[i]) << "</text>\n";
        }
    }
    o << "</svg>\n";
    save(path, o.str());
}

} // namespace mass
