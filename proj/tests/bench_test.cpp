#include <doctest.h>

#include <chrono>
#include <random>
#include <sstream>
#include <thread>

#include "emdl/bench.hpp"
#include "emdl/plot.hpp"
#include "test_graphs.hpp"

using namespace emdl;
using namespace testutil;

TEST_SUITE_BEGIN("bench");

TEST_CASE("stats from samples") {
    SUBCASE("tiny sample arithmetic") {
        LatencyStats s = stats_from_samples({10.0, 20.0, 30.0}, 1);
        CHECK(s.mean_ms == doctest::Approx(20.0));
        CHECK(s.p50_ms == 20.0);
        CHECK(s.min_ms == 10.0);
        CHECK(s.max_ms == 30.0);
        CHECK(s.p90_ms == 30.0);               // ceil(0.9*3) = 3rd
        CHECK(s.std_ms == doctest::Approx(10.0)); // sample stdev
        CHECK(s.runs == 3);
    }
    SUBCASE("nearest-rank percentiles on 1..10") {
        std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1}; // unsorted on purpose
        LatencyStats s = stats_from_samples(v, 2);
        CHECK(s.p50_ms == 5.0);  // ceil(0.5*10) = 5th
        CHECK(s.p90_ms == 9.0);  // ceil(0.9*10) = 9th
        CHECK(s.p99_ms == 10.0); // ceil(0.99*10) = 10th
        CHECK(s.thread_count == 2);
    }
    SUBCASE("ordering invariant on random samples") {
        std::mt19937_64 eng(8);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> v;
            int n = 1 + static_cast<int>(eng() % 40);
            for (int i = 0; i < n; ++i) v.push_back(static_cast<double>(eng() % 10000) / 10.0);
            LatencyStats s = stats_from_samples(v, 1);
            CHECK(s.min_ms <= s.p50_ms);
            CHECK(s.p50_ms <= s.p90_ms);
            CHECK(s.p90_ms <= s.p99_ms);
            CHECK(s.p99_ms <= s.max_ms);
            CHECK(s.std_ms >= 0.0);
        }
    }
    SUBCASE("empty rejected") { CHECK_THROWS_AS(stats_from_samples({}, 1), Error); }
}

TEST_CASE("warmup runs are excluded from the measurement") {
    int calls = 0;
    auto fn = [&] {
        if (calls++ == 0) std::this_thread::sleep_for(std::chrono::milliseconds(40));
    };
    auto samples = time_runs(fn, 1, 5);
    REQUIRE(samples.size() == 5);
    for (double ms : samples) CHECK(ms < 30.0);
}

TEST_CASE("a trivial graph benches under a millisecond") {
    Model m;
    m.graph.input_shape = Shape{1, 2, 2, 1};
    m.graph.nodes.push_back(simple_node("r", NodeKind::ReLU6, kGraphInput));
    m.graph.output = "r";
    BenchConfig cfg;
    cfg.warmup_runs = 2;
    cfg.measured_runs = 10;
    LatencyStats s = run_bench(m, cfg, 1);
    CHECK(s.p50_ms < 1.0);
}

TEST_CASE("a singleton sweep reports itself as best") {
    Model m = small_random_model(7);
    BenchConfig cfg;
    cfg.warmup_runs = 1;
    cfg.measured_runs = 3;
    cfg.thread_counts = {1};
    BenchReport r = thread_sweep(m, cfg);
    REQUIRE(r.stats.size() == 1);
    CHECK(r.best_threads == 1);
    CHECK(r.stats[0].thread_count == 1);
    CHECK(r.params == count_params(m.graph));
}

TEST_CASE("sweep verifies output determinism across thread counts") {
    Model m = small_random_model(8);
    BenchConfig cfg;
    cfg.warmup_runs = 0;
    cfg.measured_runs = 4;
    cfg.thread_counts = {1, 2, 4};
    CHECK_NOTHROW(thread_sweep(m, cfg));
}

TEST_CASE("invalid sweep configurations are rejected") {
    Model m = small_random_model(9);
    BenchConfig cfg;
    cfg.thread_counts = {2, 2};
    CHECK_THROWS_WITH_AS(thread_sweep(m, cfg), doctest::Contains("increasing"), Error);
    cfg.thread_counts = {0};
    CHECK_THROWS_AS(thread_sweep(m, cfg), Error);
    cfg.thread_counts = {1};
    cfg.measured_runs = 0;
    CHECK_THROWS_AS(thread_sweep(m, cfg), Error);
}

TEST_CASE("json report mirrors the csv field names") {
    BenchReport r;
    r.model_name = "m";
    r.best_threads = 1;
    r.stats.push_back(stats_from_samples({1.0, 2.0}, 1));
    std::string j = bench_report_json(r);
    for (const char* key : {"\"threads\"", "\"runs\"", "\"mean_ms\"", "\"std_ms\"", "\"min_ms\"",
                            "\"p50_ms\"", "\"p90_ms\"", "\"p99_ms\"", "\"max_ms\"",
                            "\"best_threads\"", "\"activation_peak_bytes\"", "\"encoded_bytes\""})
        CHECK(j.find(key) != std::string::npos);
}

TEST_CASE("bench CSV format") {
    BenchReport r;
    r.stats.push_back(stats_from_samples({1.25, 2.5, 3.125}, 1));
    r.stats.push_back(stats_from_samples({0.5, 0.75}, 4));

    std::ostringstream out;
    emit_bench_csv(r, out);
    std::string csv = out.str();

    SUBCASE("header and row count") {
        CHECK(csv.rfind("threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n", 0) ==
              0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
    SUBCASE("single-entry report emits exactly two lines") {
        BenchReport single;
        single.stats.push_back(stats_from_samples({1.0}, 1));
        std::ostringstream o2;
        emit_bench_csv(single, o2);
        std::string text = o2.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    }
    SUBCASE("round trip preserves three decimals") {
        std::istringstream in(csv);
        auto rows = parse_bench_csv(in);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].threads == 1);
        CHECK(rows[0].runs == 3);
        CHECK(rows[0].mean_ms == doctest::Approx(r.stats[0].mean_ms).epsilon(1e-3));
        CHECK(rows[0].p50_ms == doctest::Approx(2.5));
        CHECK(rows[1].threads == 4);
        CHECK(rows[1].p50_ms == doctest::Approx(0.5)); // ceil(0.5*2) = 1st of 2
    }
}

TEST_SUITE_END();
