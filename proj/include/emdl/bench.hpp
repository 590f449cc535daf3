#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "emdl/graph.hpp"

namespace emdl {

struct BenchConfig {
    int warmup_runs = 10;
    int measured_runs = 50;
    std::vector<int> thread_counts; // strictly increasing; empty = 1..hw cores
    uint64_t seed = 0;
    // Inputs: provided tensors cycled per run, else seeded random in [-1, 1].
    std::vector<Tensor> inputs;
};

struct LatencyStats {
    int thread_count = 1;
    int runs = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
};

// Nearest-rank percentile: value at index ceil(p*n) (1-based) of the sorted
// sample. Sample standard deviation.
LatencyStats stats_from_samples(std::vector<double> samples_ms, int thread_count);

// Calls fn warmup times unmeasured, then runs times, returning the measured
// wall-clock milliseconds per call.
std::vector<double> time_runs(const std::function<void()>& fn, int warmup, int runs);

struct BenchReport {
    std::string model_name;
    int64_t params = 0;
    int64_t madds = 0;
    int64_t encoded_bytes = 0;
    int64_t activation_peak = 0;
    int hardware_threads = 0;
    int best_threads = 0; // argmin of p50 over the sweep
    std::vector<LatencyStats> stats;
};

LatencyStats run_bench(const Model& m, const BenchConfig& cfg, int threads);

// run_bench per thread count in order. Inference outputs are hashed and must
// be bitwise identical across thread counts; a mismatch throws.
BenchReport thread_sweep(const Model& m, const BenchConfig& cfg);

// Header threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms then
// one row per thread count, fixed 3 decimals.
void emit_bench_csv(const BenchReport& r, std::ostream& out);

std::string bench_report_json(const BenchReport& r);

} // namespace emdl
