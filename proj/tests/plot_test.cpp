#include <doctest.h>

#include <sstream>

#include "emdl/plot.hpp"
#include "emdl/tensor.hpp"

using namespace emdl;

TEST_SUITE_BEGIN("plot");

namespace {

std::vector<BenchCsvRow> sample_rows() {
    std::istringstream in(
        "threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n"
        "1,50,60.200,1.000,58.000,60.000,62.000,63.000,64.000\n"
        "2,50,35.500,0.900,34.000,35.000,37.000,38.000,39.000\n"
        "4,50,22.100,0.800,21.000,22.000,24.000,25.000,26.000\n"
        "8,50,25.000,1.200,23.000,24.500,27.000,28.000,29.000\n");
    return parse_bench_csv(in);
}

size_t count_occurrences(const std::string& s, const std::string& needle) {
    size_t count = 0, pos = 0;
    while ((pos = s.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

} // namespace

TEST_CASE("csv parser") {
    auto rows = sample_rows();
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].threads == 1);
    CHECK(rows[2].p50_ms == doctest::Approx(22.0));

    SUBCASE("bad header") {
        std::istringstream in("threads,latency\n1,2\n");
        CHECK_THROWS_AS(parse_bench_csv(in), Error);
    }
    SUBCASE("malformed row") {
        std::istringstream in(
            "threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n"
            "1,50,oops\n");
        CHECK_THROWS_WITH_AS(parse_bench_csv(in), doctest::Contains("line 2"), Error);
    }
    SUBCASE("empty data") {
        std::istringstream in("threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n");
        CHECK_THROWS_AS(parse_bench_csv(in), Error);
    }
}

TEST_CASE("svg output is deterministic") {
    auto rows = sample_rows();
    CHECK(render_latency_svg(rows) == render_latency_svg(rows));
}

TEST_CASE("svg contains one point per row and marks the minimum") {
    auto rows = sample_rows();
    std::string svg = render_latency_svg(rows);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(count_occurrences(svg, "<circle") == rows.size());
    CHECK(count_occurrences(svg, "r=\"5\"") == 1); // the argmin gets the big marker
    CHECK(svg.find("22.000 ms @ 4") != std::string::npos);
    CHECK(svg.find("CPU threads") != std::string::npos);
    CHECK(svg.find("p50 latency (ms)") != std::string::npos);

    // polyline point count equals the data row count
    size_t start = svg.find("points=\"");
    REQUIRE(start != std::string::npos);
    size_t end = svg.find('"', start + 8);
    std::string points = svg.substr(start + 8, end - start - 8);
    CHECK(count_occurrences(points, ",") == rows.size());
}

TEST_CASE("single-row chart renders") {
    std::istringstream in(
        "threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n"
        "1,10,5.000,0.100,4.900,5.000,5.100,5.200,5.300\n");
    auto rows = parse_bench_csv(in);
    std::string svg = render_latency_svg(rows);
    CHECK(count_occurrences(svg, "<circle") == 1);
    CHECK(count_occurrences(svg, "r=\"5\"") == 1);
}

TEST_SUITE_END();
