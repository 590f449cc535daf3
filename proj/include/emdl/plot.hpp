#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emdl {

struct BenchCsvRow {
    int threads = 0;
    int runs = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double min_ms = 0.0;
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};

// Parses the bench CSV format; rejects wrong headers or malformed rows.
std::vector<BenchCsvRow> parse_bench_csv(std::istream& in);

// Standalone SVG line chart of p50 latency against thread count, the minimum
// point marked. Byte-identical output for identical input.
std::string render_latency_svg(const std::vector<BenchCsvRow>& rows);

} // namespace emdl
