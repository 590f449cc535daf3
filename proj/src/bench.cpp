#include "emdl/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <random>
#include <thread>

#include <json.hpp>

#include "emdl/executor.hpp"
#include "emdl/model_io.hpp"

namespace emdl {

using nlohmann::json;

namespace {

double percentile_nearest_rank(const std::vector<double>& sorted, double p) {
    const size_t n = sorted.size();
    size_t rank = static_cast<size_t>(std::ceil(p * static_cast<double>(n)));
    rank = std::clamp<size_t>(rank, 1, n);
    return sorted[rank - 1];
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Per-run input, identical for every thread count of a sweep.
Tensor run_input(const BenchConfig& cfg, const Shape& shape, int run_index) {
    if (!cfg.inputs.empty())
        return cfg.inputs[static_cast<size_t>(run_index) % cfg.inputs.size()];
    Tensor t = Tensor::zeros_f32(shape);
    std::mt19937_64 eng(splitmix64(cfg.seed ^ static_cast<uint64_t>(run_index)));
    for (auto& v : t.f32()) {
        double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
        v = static_cast<float>(2.0 * u - 1.0);
    }
    return t;
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

struct BenchRun {
    LatencyStats stats;
    uint64_t output_hash = 0;
};

BenchRun run_once(const Model& m, const BenchConfig& cfg, int threads) {
    if (threads < 1) throw Error("thread count must be positive");
    if (cfg.measured_runs < 1) throw Error("measured_runs must be at least 1");
    if (cfg.warmup_runs < 0) throw Error("warmup_runs must be non-negative");

    Executor ex(m, threads);
    BenchRun out;
    out.output_hash = 0xcbf29ce484222325ull;

    for (int i = 0; i < cfg.warmup_runs; ++i) {
        Tensor input = run_input(cfg, m.graph.input_shape, i);
        ex.infer(input);
    }

    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(cfg.measured_runs));
    for (int i = 0; i < cfg.measured_runs; ++i) {
        Tensor input = run_input(cfg, m.graph.input_shape, cfg.warmup_runs + i);
        auto t0 = std::chrono::steady_clock::now();
        Tensor result = ex.infer(input);
        auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        auto span = result.f32();
        out.output_hash = fnv1a(span.data(), span.size_bytes(), out.output_hash);
    }
    out.stats = stats_from_samples(std::move(samples), threads);
    return out;
}

} // namespace

LatencyStats stats_from_samples(std::vector<double> samples_ms, int thread_count) {
    if (samples_ms.empty()) throw Error("no latency samples");
    LatencyStats s;
    s.thread_count = thread_count;
    s.runs = static_cast<int>(samples_ms.size());

    double sum = 0.0;
    for (double v : samples_ms) sum += v;
    s.mean_ms = sum / static_cast<double>(samples_ms.size());

    double sq = 0.0;
    for (double v : samples_ms) sq += (v - s.mean_ms) * (v - s.mean_ms);
    s.std_ms = samples_ms.size() > 1
                   ? std::sqrt(sq / static_cast<double>(samples_ms.size() - 1))
                   : 0.0;

    std::sort(samples_ms.begin(), samples_ms.end());
    s.min_ms = samples_ms.front();
    s.max_ms = samples_ms.back();
    s.p50_ms = percentile_nearest_rank(samples_ms, 0.50);
    s.p90_ms = percentile_nearest_rank(samples_ms, 0.90);
    s.p99_ms = percentile_nearest_rank(samples_ms, 0.99);
    return s;
}

std::vector<double> time_runs(const std::function<void()>& fn, int warmup, int runs) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return samples;
}

LatencyStats run_bench(const Model& m, const BenchConfig& cfg, int threads) {
    return run_once(m, cfg, threads).stats;
}

BenchReport thread_sweep(const Model& m, const BenchConfig& cfg) {
    std::vector<int> counts = cfg.thread_counts;
    if (counts.empty()) {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        for (int t = 1; t <= std::max(1, hw); ++t) counts.push_back(t);
    }
    for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] < 1) throw Error("thread counts must be positive");
        if (i > 0 && counts[i] <= counts[i - 1])
            throw Error("thread counts must be strictly increasing");
    }

    BenchReport r;
    r.model_name = m.name;
    r.params = count_params(m.graph);
    r.madds = count_madds(m.graph);
    r.encoded_bytes = encoded_size(m).total;
    r.activation_peak = activation_peak_bytes(m);
    r.hardware_threads = static_cast<int>(std::thread::hardware_concurrency());

    uint64_t reference_hash = 0;
    for (size_t i = 0; i < counts.size(); ++i) {
        BenchRun run = run_once(m, cfg, counts[i]);
        if (i == 0) {
            reference_hash = run.output_hash;
        } else if (run.output_hash != reference_hash) {
            throw Error("determinism violation: outputs at " + std::to_string(counts[i]) +
                        " threads differ from " + std::to_string(counts[0]) + " threads");
        }
        r.stats.push_back(run.stats);
    }

    r.best_threads = r.stats.front().thread_count;
    double best = r.stats.front().p50_ms;
    for (const auto& s : r.stats) {
        if (s.p50_ms < best) {
            best = s.p50_ms;
            r.best_threads = s.thread_count;
        }
    }
    return r;
}

void emit_bench_csv(const BenchReport& r, std::ostream& out) {
    out << "threads,runs,mean_ms,std_ms,min_ms,p50_ms,p90_ms,p99_ms,max_ms\n";
    char buf[256];
    for (const auto& s : r.stats) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n",
                      s.thread_count, s.runs, s.mean_ms, s.std_ms, s.min_ms, s.p50_ms, s.p90_ms,
                      s.p99_ms, s.max_ms);
        out << buf;
    }
}

std::string bench_report_json(const BenchReport& r) {
    json j;
    j["model"] = {{"name", r.model_name},
                  {"params", r.params},
                  {"madds", r.madds},
                  {"encoded_bytes", r.encoded_bytes}};
    j["memory"] = {{"encoded_bytes", r.encoded_bytes},
                   {"activation_peak_bytes", r.activation_peak}};
    j["environment"] = {{"hardware_threads", r.hardware_threads}};
    j["best_threads"] = r.best_threads;
    json stats = json::array();
    for (const auto& s : r.stats) {
        stats.push_back({{"threads", s.thread_count},
                         {"runs", s.runs},
                         {"mean_ms", s.mean_ms},
                         {"std_ms", s.std_ms},
                         {"min_ms", s.min_ms},
                         {"p50_ms", s.p50_ms},
                         {"p90_ms", s.p90_ms},
                         {"p99_ms", s.p99_ms},
                         {"max_ms", s.max_ms}});
    }
    j["stats"] = std::move(stats);
    return j.dump(2);
}

} // namespace emdl
