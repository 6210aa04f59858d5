#include "capval/cli/commands.hpp"

#include "capval/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace capval::cli {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 64, kRight = 150, kTop = 36, kBottom = 52;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

struct Axis {
    double lo = 0, hi = 1;
    void widen() {
        if (!(hi > lo)) {
            const double pad = std::max(std::abs(lo) * 0.05, 0.5);
            lo -= pad;
            hi += pad;
        } else {
            const double pad = (hi - lo) * 0.05;
            lo -= pad;
            hi += pad;
        }
    }
};

} // namespace

std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series, bool log_x) {
    auto tx = [&](double x) {
        if (!log_x) return x;
        if (!(x > 0)) throw PreconditionError("log-x plot needs positive x values");
        return std::log10(x);
    };
    Axis ax{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    Axis ay = ax;
    for (const auto& s : series) {
        for (const auto* pts : {&s.points, &s.curve}) {
            for (const auto& [x, y] : *pts) {
                if (!std::isfinite(x) || !std::isfinite(y)) continue;
                ax.lo = std::min(ax.lo, tx(x));
                ax.hi = std::max(ax.hi, tx(x));
                ay.lo = std::min(ay.lo, y);
                ay.hi = std::max(ay.hi, y);
            }
        }
    }
    if (!std::isfinite(ax.lo)) ax = {0, 1};
    if (!std::isfinite(ay.lo)) ay = {0, 1};
    ax.widen();
    ay.widen();

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (tx(x) - ax.lo) / (ax.hi - ax.lo) * pw; };
    auto py = [&](double y) { return kTop + (1.0 - (y - ay.lo) / (ay.hi - ay.lo)) * ph; };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"11\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{3}</text>\n"
        "<rect x=\"{4}\" y=\"{5}\" width=\"{6}\" height=\"{7}\" fill=\"none\" stroke=\"#444\"/>\n",
        kWidth, kHeight, kLeft + pw / 2, escape(title), kLeft, kTop, pw, ph);

    // Ticks: five evenly spaced on each axis, decades on a log axis.
    for (int i = 0; i <= 4; ++i) {
        const double vy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
        const double y = kTop + (1.0 - i / 4.0) * ph;
        svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>"
                           "<text x=\"{3}\" y=\"{4:.2f}\" text-anchor=\"end\">{5:.3g}</text>\n",
                           kLeft, y, kLeft + pw, kLeft - 6, y + 4, vy);
    }
    if (log_x) {
        for (double d = std::ceil(ax.lo); d <= ax.hi; d += 1.0) {
            const double x = kLeft + (d - ax.lo) / (ax.hi - ax.lo) * pw;
            svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#ddd\"/>"
                               "<text x=\"{0:.2f}\" y=\"{3}\" text-anchor=\"middle\">1e{4}</text>\n",
                               x, kTop, kTop + ph, kTop + ph + 16, static_cast<int>(d));
        }
    } else {
        for (int i = 0; i <= 4; ++i) {
            const double vx = ax.lo + (ax.hi - ax.lo) * i / 4.0;
            const double x = kLeft + i / 4.0 * pw;
            svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#ddd\"/>"
                               "<text x=\"{0:.2f}\" y=\"{3}\" text-anchor=\"middle\">{4:.3g}</text>\n",
                               x, kTop, kTop + ph, kTop + ph + 16, vx);
        }
    }
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kHeight - 12,
                       escape(x_label));
    svg += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                       kTop + ph / 2, escape(y_label));

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kColors[i % std::size(kColors)];
        if (!s.curve.empty()) {
            std::string pts;
            for (const auto& [x, y] : s.curve) {
                if (!std::isfinite(x) || !std::isfinite(y)) continue;
                pts += fmt::format("{:.2f},{:.2f} ", px(x), py(y));
            }
            if (!pts.empty()) pts.pop_back();
            svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, pts);
        }
        for (const auto& [x, y] : s.points) {
            svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                               px(x), py(y), color);
        }
        const double ly = kTop + 8 + 16.0 * static_cast<double>(i);
        svg += fmt::format("<rect x=\"{}\" y=\"{:.2f}\" width=\"10\" height=\"10\" fill=\"{}\"/>"
                           "<text x=\"{}\" y=\"{:.2f}\">{}</text>\n",
                           kLeft + pw + 12, ly - 9, color, kLeft + pw + 28, ly, escape(s.label));
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace capval::cli
