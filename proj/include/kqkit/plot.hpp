#pragma once

// Minimal static SVG charts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace kqkit {

struct Series {
    std::string name;
    std::vector<double> y;  // NaN = missing point
};

namespace detail {

inline const char* palette(std::size_t i) {
    static const char* const colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    return colors[i % 6];
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Frame {
    double width = 640, height = 400, left = 60, right = 130, top = 30, bottom = 50;
    double lo = 0, hi = 1;

    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
    double y_px(double v) const { return top + plot_h() * (1.0 - (v - lo) / (hi - lo)); }
};

inline void padded_range(double& lo, double& hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
}

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xlabel) {
    os << "<text x=\"" << f.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
       << "</text>\n";
    os << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << f.top + f.plot_h()
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << f.left << "\" y1=\"" << f.top + f.plot_h() << "\" x2=\"" << f.left + f.plot_w()
       << "\" y2=\"" << f.top + f.plot_h() << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = f.lo + (f.hi - f.lo) * t / 4.0;
        os << "<text x=\"" << f.left - 6 << "\" y=\"" << f.y_px(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
           << fmt(v) << "</text>\n";
    }
    os << "<text x=\"" << f.left + f.plot_w() / 2 << "\" y=\"" << f.height - 10
       << "\" text-anchor=\"middle\" font-size=\"12\">" << escape_xml(xlabel) << "</text>\n";
}

}  // namespace detail

/// One polyline per series over shared x positions.
inline std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::vector<double>& x,
                                  const std::vector<Series>& series) {
    detail::Frame f;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        for (double v : s.y) {
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    detail::padded_range(lo, hi);
    f.lo = lo;
    f.hi = hi;
    double xmin = x.empty() ? 0.0 : *std::min_element(x.begin(), x.end());
    double xmax = x.empty() ? 1.0 : *std::max_element(x.begin(), x.end());
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    auto x_px = [&](double v) { return f.left + f.plot_w() * (v - xmin) / (xmax - xmin); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
       << "\" font-family=\"sans-serif\">\n";
    detail::axes(os, f, title, xlabel);
    for (double v : x) {
        os << "<text x=\"" << x_px(v) << "\" y=\"" << f.top + f.plot_h() + 16
           << "\" text-anchor=\"middle\" font-size=\"11\">" << detail::fmt(v) << "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        std::ostringstream pts;
        for (std::size_t i = 0; i < s.y.size() && i < x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            pts << x_px(x[i]) << "," << f.y_px(s.y[i]) << " ";
        }
        os << "<polyline class=\"series\" data-name=\"" << detail::escape_xml(s.name) << "\" fill=\"none\" stroke=\""
           << detail::palette(si) << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
        const double ly = f.top + 14.0 + 18.0 * static_cast<double>(si);
        os << "<line x1=\"" << f.width - f.right + 10 << "\" y1=\"" << ly << "\" x2=\"" << f.width - f.right + 30
           << "\" y2=\"" << ly << "\" stroke=\"" << detail::palette(si) << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << f.width - f.right + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
           << detail::escape_xml(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct Bar {
    std::string label;
    double value = 0.0;  // NaN = not plotted
    double error = 0.0;
};

/// Bars with symmetric error whiskers. Missing values leave an empty slot labelled "n/a".
inline std::string bar_chart_svg(const std::string& title, const std::string& ylabel, const std::vector<Bar>& bars) {
    detail::Frame f;
    f.right = 20;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& b : bars) {
        if (!std::isfinite(b.value)) continue;
        lo = std::min(lo, b.value - b.error);
        hi = std::max(hi, b.value + b.error);
    }
    detail::padded_range(lo, hi);
    f.lo = lo;
    f.hi = hi;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
       << "\" font-family=\"sans-serif\">\n";
    detail::axes(os, f, title, ylabel);
    const double slot = bars.empty() ? f.plot_w() : f.plot_w() / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double cx = f.left + slot * (static_cast<double>(i) + 0.5);
        os << "<text x=\"" << cx << "\" y=\"" << f.top + f.plot_h() + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << detail::escape_xml(b.label) << "</text>\n";
        if (!std::isfinite(b.value)) {
            os << "<text x=\"" << cx << "\" y=\"" << f.top + f.plot_h() - 6
               << "\" text-anchor=\"middle\" font-size=\"11\">n/a</text>\n";
            continue;
        }
        const double top = f.y_px(b.value);
        const double base = f.top + f.plot_h();
        os << "<rect class=\"bar\" data-label=\"" << detail::escape_xml(b.label) << "\" x=\"" << cx - slot * 0.3
           << "\" y=\"" << top << "\" width=\"" << slot * 0.6 << "\" height=\"" << std::max(0.0, base - top)
           << "\" fill=\"" << detail::palette(i) << "\"/>\n";
        if (b.error > 0.0) {
            os << "<line x1=\"" << cx << "\" y1=\"" << f.y_px(b.value - b.error) << "\" x2=\"" << cx << "\" y2=\""
               << f.y_px(b.value + b.error) << "\" stroke=\"black\"/>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace kqkit
