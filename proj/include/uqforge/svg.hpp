#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "uqforge/common.hpp"
#include "uqforge/grid.hpp"

namespace uqforge {
namespace svg_detail {

// ColorBrewer YlGnBu: sequential, for metrics living in [0,1].
inline constexpr std::array<const char*, 9> kSequential{
    "#ffffd9", "#edf8b1", "#c7e9b4", "#7fcdbb", "#41b6c4",
    "#1d91c0", "#225ea8", "#253494", "#081d58"};

// ColorBrewer RdBu (blue = low, red = high): diverging, for centered metrics.
inline constexpr std::array<const char*, 9> kDiverging{
    "#2166ac", "#4393c3", "#92c5de", "#d1e5f0", "#f7f7f7",
    "#fddbc7", "#f4a582", "#d6604d", "#b2182b"};

inline constexpr const char* kMissing = "#9e9e9e";

struct Scale {
    double lo = 0.0, hi = 1.0;
    bool diverging = false;
};

// auc is centered at 0.5 on [0,1]; delta at 0 on a symmetric range.
inline Scale scale_for(const std::string& metric, const Array2& values) {
    if (metric == "auc") return {0.0, 1.0, true};
    if (metric == "delta") {
        double m = 0.0;
        for (std::size_t i = 0; i < values.rows(); ++i)
            for (std::size_t j = 0; j < values.cols(); ++j)
                if (std::isfinite(values(i, j))) m = std::max(m, std::abs(values(i, j)));
        if (m == 0.0) m = 1.0;
        return {-m, m, true};
    }
    return {0.0, 1.0, false};
}

inline std::size_t bin_of(double v, const Scale& s) {
    const double t = std::clamp((v - s.lo) / (s.hi - s.lo), 0.0, 1.0);
    return std::min<std::size_t>(8, static_cast<std::size_t>(t * 9.0));
}

inline const char* fill_of(double v, const Scale& s) {
    if (!std::isfinite(v)) return kMissing;
    return s.diverging ? kDiverging[bin_of(v, s)] : kSequential[bin_of(v, s)];
}

// White text on the dark bins, black elsewhere.
inline const char* text_color(double v, const Scale& s) {
    if (!std::isfinite(v)) return "#000";
    const std::size_t b = bin_of(v, s);
    if (s.diverging) return (b <= 1 || b >= 7) ? "#fff" : "#000";
    return b >= 6 ? "#fff" : "#000";
}

inline std::string fmt(double v, const char* spec = "%.3g") {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace svg_detail

/// Self-contained SVG heatmap: widths on x, train sizes on y (ascending
/// top-to-bottom), a 9-step color legend, per-cell values, and optionally the
/// trend summary as a text block underneath. Pure text output, no libraries.
inline std::string render_heatmap_svg(const HeatmapMatrix& hm, const std::string& metric,
                                      const TrendReport* trend = nullptr) {
    using namespace svg_detail;
    if (hm.values.rows() == 0 || hm.values.cols() == 0)
        throw ShapeError("render_heatmap_svg: empty matrix");
    const Scale scale = scale_for(metric, hm.values);

    const int cell_w = 64, cell_h = 40;
    const int left = 90, top = 56, legend_w = 150;
    const int rows = static_cast<int>(hm.values.rows());
    const int cols = static_cast<int>(hm.values.cols());
    const int trend_lines = trend ? 5 : 0;
    const int bottom = 56 + trend_lines * 16;
    const int width = left + cols * cell_w + legend_w;
    const int height = top + rows * cell_h + bottom;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<style>text{font-family:sans-serif;font-size:12px;}"
           ".title{font-size:15px;font-weight:bold;}.axis{font-size:13px;}</style>\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text class=\"title\" x=\"" << left << "\" y=\"22\">" << metric << "</text>\n";

    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double v = hm.values(i, j);
            const int x = left + j * cell_w, y = top + i * cell_h;
            out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w
                << "\" height=\"" << cell_h << "\" fill=\"" << fill_of(v, scale)
                << "\" stroke=\"white\"/>\n";
            out << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4
                << "\" text-anchor=\"middle\" fill=\"" << text_color(v, scale) << "\">"
                << fmt(v) << "</text>\n";
        }
    }
    // Axis tick labels and titles.
    for (int j = 0; j < cols; ++j)
        out << "<text class=\"axis\" x=\"" << left + j * cell_w + cell_w / 2 << "\" y=\""
            << top + rows * cell_h + 18 << "\" text-anchor=\"middle\">" << hm.widths[j]
            << "</text>\n";
    for (int i = 0; i < rows; ++i)
        out << "<text class=\"axis\" x=\"" << left - 8 << "\" y=\"" << top + i * cell_h + cell_h / 2 + 4
            << "\" text-anchor=\"end\">" << hm.train_sizes[i] << "</text>\n";
    out << "<text class=\"axis\" x=\"" << left + cols * cell_w / 2 << "\" y=\""
        << top + rows * cell_h + 40 << "\" text-anchor=\"middle\">hidden width</text>\n";
    out << "<text class=\"axis\" x=\"16\" y=\"" << top + rows * cell_h / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + rows * cell_h / 2
        << ")\">train size</text>\n";

    // Legend: 9 swatches, low at the bottom.
    const int lx = left + cols * cell_w + 36;
    const int swatch_h = std::max(12, rows * cell_h / 9);
    for (int b = 0; b < 9; ++b) {
        const int y = top + (8 - b) * swatch_h;
        out << "<rect x=\"" << lx << "\" y=\"" << y << "\" width=\"18\" height=\"" << swatch_h
            << "\" fill=\"" << (scale.diverging ? kDiverging[b] : kSequential[b]) << "\"/>\n";
    }
    out << "<text x=\"" << lx + 24 << "\" y=\"" << top + 9 * swatch_h << "\">" << fmt(scale.lo)
        << "</text>\n";
    out << "<text x=\"" << lx + 24 << "\" y=\"" << top + 4 * swatch_h + 8 << "\">"
        << fmt(0.5 * (scale.lo + scale.hi)) << "</text>\n";
    out << "<text x=\"" << lx + 24 << "\" y=\"" << top + 10 << "\">" << fmt(scale.hi)
        << "</text>\n";

    if (trend) {
        int ty = top + rows * cell_h + 60;
        auto line = [&](const std::string& s) {
            out << "<text x=\"" << left << "\" y=\"" << ty << "\">" << s << "</text>\n";
            ty += 16;
        };
        line("trend summary (mean ID epistemic):");
        line("  rho vs train size (mean over widths): " + fmt(trend->mean_rho_vs_size, "%.4g") +
             "  decreasing-in-data " + (trend->data_size_pass ? "PASS" : "FAIL"));
        line("  rho vs width (mean over sizes): " + fmt(trend->mean_rho_vs_width, "%.4g") +
             "  increasing-in-width " + (trend->width_pass ? "PASS" : "FAIL"));
        line(std::string("  hole flag (max width, min size below median): ") +
             (trend->hole_flag ? "RAISED" : "clear"));
        line("  corner " + fmt(trend->corner_value, "%.4g") + " vs median " +
             fmt(trend->grid_median, "%.4g"));
    }
    out << "</svg>\n";
    return out.str();
}

inline void write_heatmap_svg(const std::string& path, const HeatmapMatrix& hm,
                              const std::string& metric, const TrendReport* trend = nullptr) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << render_heatmap_svg(hm, metric, trend);
}

}  // namespace uqforge
