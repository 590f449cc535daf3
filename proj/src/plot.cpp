#include "emdl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>

#include "emdl/tensor.hpp"

namespace emdl {

std::vector<BenchCsvRow> parse_bench_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("bench CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms")
        throw Error("bench CSV header mismatch: '" + line + "'");

    std::vector<BenchCsvRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        BenchCsvRow r;
        int got = std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.threads,
                              &r.runs, &r.mean_ms, &r.std_ms, &r.min_ms, &r.p50_ms, &r.p90_ms,
                              &r.p99_ms, &r.max_ms);
        if (got != 9)
            throw Error("malformed bench CSV row at line " + std::to_string(lineno));
        rows.push_back(r);
    }
    if (rows.empty()) throw Error("bench CSV has no data rows");
    return rows;
}

namespace {

std::string fmt(double v, int decimals = 1) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

} // namespace

std::string render_latency_svg(const std::vector<BenchCsvRow>& rows) {
    if (rows.empty()) throw Error("nothing to plot");

    constexpr double width = 640, height = 400;
    constexpr double left = 70, right = 20, top = 30, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    int tmin = rows.front().threads, tmax = rows.front().threads;
    double ymax = 0.0;
    size_t best = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        tmin = std::min(tmin, rows[i].threads);
        tmax = std::max(tmax, rows[i].threads);
        ymax = std::max(ymax, rows[i].p50_ms);
        if (rows[i].p50_ms < rows[best].p50_ms) best = i;
    }
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.1;

    auto px = [&](int threads) {
        if (tmax == tmin) return left + plot_w / 2;
        return left + plot_w * (threads - tmin) / static_cast<double>(tmax - tmin);
    };
    auto py = [&](double ms) { return top + plot_h * (1.0 - ms / ymax); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    // axes
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";

    // y ticks
    for (int i = 0; i <= 4; ++i) {
        double v = ymax * i / 4.0;
        double y = py(v);
        svg << "<line x1=\"" << left - 4 << "\" y1=\"" << fmt(y, 2) << "\" x2=\"" << left
            << "\" y2=\"" << fmt(y, 2) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << left - 8 << "\" y=\"" << fmt(y + 4, 2)
            << "\" text-anchor=\"end\" font-size=\"12\">" << fmt(v) << "</text>\n";
    }
    // x ticks, one per sampled thread count
    for (const auto& r : rows) {
        double x = px(r.threads);
        svg << "<line x1=\"" << fmt(x, 2) << "\" y1=\"" << top + plot_h << "\" x2=\"" << fmt(x, 2)
            << "\" y2=\"" << top + plot_h + 4 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt(x, 2) << "\" y=\"" << top + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"12\">" << r.threads << "</text>\n";
    }

    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
        << "\" text-anchor=\"middle\" font-size=\"14\">CPU threads</text>\n";
    svg << "<text x=\"18\" y=\"" << top + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
        << top + plot_h / 2 << ")\">p50 latency (ms)</text>\n";

    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < rows.size(); ++i) {
        if (i) svg << " ";
        svg << fmt(px(rows[i].threads), 2) << "," << fmt(py(rows[i].p50_ms), 2);
    }
    svg << "\"/>\n";

    for (size_t i = 0; i < rows.size(); ++i) {
        bool is_best = i == best;
        svg << "<circle cx=\"" << fmt(px(rows[i].threads), 2) << "\" cy=\""
            << fmt(py(rows[i].p50_ms), 2) << "\" r=\"" << (is_best ? 5 : 3) << "\" fill=\""
            << (is_best ? "#d62728" : "#1f77b4") << "\"/>\n";
    }
    svg << "<text x=\"" << fmt(px(rows[best].threads), 2) << "\" y=\""
        << fmt(py(rows[best].p50_ms) - 10, 2) << "\" text-anchor=\"middle\" font-size=\"12\">"
        << fmt(rows[best].p50_ms, 3) << " ms @ " << rows[best].threads << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

} // namespace emdl
