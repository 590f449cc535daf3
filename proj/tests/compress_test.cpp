#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "emdl/compress.hpp"
#include "emdl/model_io.hpp"
#include "test_graphs.hpp"

using namespace emdl;
using namespace testutil;

TEST_SUITE_BEGIN("compress");

namespace {

// Wraps one weight vector in a conv so the compression passes see it.
Model weight_vector_model(std::vector<float> values) {
    Model m;
    int n = static_cast<int>(values.size());
    m.graph.input_shape = Shape{1, 1, 1, 1};
    m.graph.nodes.push_back(conv_node("c", kGraphInput, "w"));
    m.graph.weights.emplace("w", Tensor::from_f32(Shape{n, 1, 1, 1}, std::move(values)));
    m.graph.output = "c";
    return m;
}

std::vector<float> weight_values(const Model& m, const std::string& name = "w") {
    auto span = m.graph.weights.at(name).f32();
    return {span.begin(), span.end()};
}

// Independent oracle: pair each element with its index, sort by (|w|, index),
// zero the first floor(s*n).
std::vector<float> prune_oracle(std::vector<float> w, double sparsity) {
    std::vector<std::pair<float, size_t>> order;
    for (size_t i = 0; i < w.size(); ++i) order.emplace_back(std::fabs(w[i]), i);
    std::sort(order.begin(), order.end());
    size_t cut = static_cast<size_t>(std::floor(sparsity * static_cast<double>(w.size())));
    for (size_t i = 0; i < cut; ++i) w[order[i].second] = 0.0f;
    return w;
}

} // namespace

TEST_CASE("prune_magnitude hand cases") {
    SUBCASE("half of four values") {
        Model m = prune_magnitude(weight_vector_model({0.1f, -0.5f, 0.2f, 0.05f}), 0.5);
        CHECK(weight_values(m) == std::vector<float>{0.0f, -0.5f, 0.2f, 0.0f});
    }
    SUBCASE("sparsity zero is a no-op") {
        Model m = prune_magnitude(weight_vector_model({0.1f, -0.5f}), 0.0);
        CHECK(weight_values(m) == std::vector<float>{0.1f, -0.5f});
    }
    SUBCASE("sparsity one zeroes everything eligible") {
        Model m = prune_magnitude(weight_vector_model({0.1f, -0.5f, 3.0f}), 1.0);
        CHECK(weight_values(m) == std::vector<float>{0.0f, 0.0f, 0.0f});
    }
    SUBCASE("ties break to the lowest flat index") {
        Model m = prune_magnitude(weight_vector_model({0.5f, -0.5f, 0.5f, 1.0f}), 0.5);
        CHECK(weight_values(m) == std::vector<float>{0.0f, 0.0f, 0.5f, 1.0f});
    }
    SUBCASE("out-of-range sparsity rejected") {
        CHECK_THROWS_AS(prune_magnitude(weight_vector_model({1.0f}), -0.1), Error);
        CHECK_THROWS_AS(prune_magnitude(weight_vector_model({1.0f}), 1.5), Error);
    }
}

TEST_CASE("prune matches the oracle on random tensors") {
    std::mt19937_64 eng(404);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + static_cast<int>(eng() % 200);
        std::vector<float> values;
        for (int i = 0; i < n; ++i)
            values.push_back(static_cast<float>(static_cast<int64_t>(eng() % 4001) - 2000) /
                             512.0f);
        double sparsity = static_cast<double>(eng() % 101) / 100.0;

        Model pruned = prune_magnitude(weight_vector_model(values), sparsity);
        std::vector<float> got = weight_values(pruned);
        CHECK(got == prune_oracle(values, sparsity));

        // idempotence
        Model again = prune_magnitude(pruned, sparsity);
        CHECK(weight_values(again) == got);

        // exactly floor(s*n) zeroed, smallest magnitudes gone
        int64_t cut = static_cast<int64_t>(std::floor(sparsity * n));
        int64_t zeros = std::count(got.begin(), got.end(), 0.0f);
        int64_t original_zeros = std::count(values.begin(), values.end(), 0.0f);
        CHECK(zeros == std::max(cut, original_zeros));
        float min_kept = 1e30f, max_cut = 0.0f;
        for (int i = 0; i < n; ++i) {
            if (got[static_cast<size_t>(i)] == 0.0f)
                max_cut = std::max(max_cut, std::fabs(values[static_cast<size_t>(i)]));
            else
                min_kept = std::min(min_kept, std::fabs(got[static_cast<size_t>(i)]));
        }
        if (zeros > 0 && zeros < n) CHECK(min_kept >= max_cut);
    }
}

TEST_CASE("biases and the classifier are exempt from pruning") {
    Model m = small_random_model(55);
    std::vector<float> fc_before = weight_values(m, "fc_w");
    std::vector<float> bias_before = weight_values(m, "c1_b");
    Model pruned = prune_magnitude(std::move(m), 1.0);
    CHECK(weight_values(pruned, "fc_w") == fc_before);
    CHECK(weight_values(pruned, "c1_b") == bias_before);
    for (float v : weight_values(pruned, "c1_w")) CHECK(v == 0.0f);
    for (float v : weight_values(pruned, "d1_w")) CHECK(v == 0.0f);
}

TEST_CASE("cluster_weights hand cases") {
    SUBCASE("two clear groups") {
        Model m = cluster_weights(weight_vector_model({1.0f, 1.1f, 3.0f, 3.1f}), 2, true);
        auto got = weight_values(m);
        CHECK(got[0] == doctest::Approx(1.05));
        CHECK(got[0] == got[1]);
        CHECK(got[2] == doctest::Approx(3.05));
        CHECK(got[2] == got[3]);
        const Codebook& cb = m.codebooks.at("w");
        REQUIRE(cb.centroids.size() == 2);
        CHECK(cb.centroids[0] == doctest::Approx(1.05));
        CHECK(cb.centroids[1] == doctest::Approx(3.05));
    }
    SUBCASE("all-equal tensor is unchanged") {
        Model m = cluster_weights(weight_vector_model({2.0f, 2.0f, 2.0f}), 4, true);
        CHECK(weight_values(m) == std::vector<float>{2.0f, 2.0f, 2.0f});
    }
    SUBCASE("preserved zeros stay exactly zero") {
        Model m = cluster_weights(weight_vector_model({0.0f, -0.5f, 0.2f, 0.0f}), 2, true);
        auto got = weight_values(m);
        CHECK(got[0] == 0.0f);
        CHECK(got[3] == 0.0f);
        const Codebook& cb = m.codebooks.at("w");
        CHECK(cb.assignment[0] == kExemptZero);
        CHECK(cb.assignment[3] == kExemptZero);
    }
    SUBCASE("k below two rejected") {
        CHECK_THROWS_AS(cluster_weights(weight_vector_model({1.0f, 2.0f}), 1, true), Error);
    }
}

TEST_CASE("lloyd objective is non-increasing and the unique bound holds") {
    std::mt19937_64 eng(1001);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 20 + static_cast<int>(eng() % 400);
        std::vector<float> values;
        for (int i = 0; i < n; ++i)
            values.push_back(static_cast<float>(static_cast<int64_t>(eng() % 20001) - 10000) /
                             700.0f);
        int k = 2 + static_cast<int>(eng() % 15);

        ClusterStats stats;
        Model m = cluster_weights(weight_vector_model(values), k, true, &stats);

        const auto& objective = stats.objective.at("w");
        REQUIRE(!objective.empty());
        for (size_t i = 1; i < objective.size(); ++i)
            CHECK(objective[i] <= objective[i - 1] * (1.0 + 1e-12) + 1e-9);

        std::set<float> unique;
        for (float v : weight_values(m))
            if (v != 0.0f) unique.insert(v);
        CHECK(static_cast<int>(unique.size()) <= k);
    }
}

TEST_CASE("clustering with k above the distinct count keeps the bound") {
    Model m = cluster_weights(weight_vector_model({1.0f, 2.0f, 3.0f, 1.0f, 2.0f}), 8, true);
    std::set<float> unique;
    for (float v : weight_values(m)) unique.insert(v);
    CHECK(unique.size() <= 3);
}

TEST_CASE("calibration") {
    SUBCASE("zero graph gives degenerate params") {
        Model m;
        m.graph.input_shape = Shape{1, 2, 2, 1};
        m.graph.nodes.push_back(conv_node("c", kGraphInput, "w"));
        m.graph.weights.emplace("w", Tensor::zeros_f32(Shape{1, 1, 1, 1}));
        m.graph.output = "c";
        Calibration cal = calibrate(m, std::vector<Tensor>{Tensor::zeros_f32(m.graph.input_shape)}, 1);
        CHECK(cal.qparams.at("c").scale == 1.0f);
        CHECK(cal.qparams.at("c").zero_point == 0);
    }
    SUBCASE("relu6 edges stay within [0, 6]") {
        Model m = small_random_model(66);
        auto inputs = random_calibration_inputs(m.graph.input_shape, 6, 9);
        Calibration cal = calibrate(m, inputs, 2);
        CHECK(cal.ranges.at("r1").lo >= 0.0f);
        CHECK(cal.ranges.at("r1").hi <= 6.0f);
        CHECK(cal.ranges.at("r2").lo >= 0.0f);
        CHECK(cal.ranges.at("r2").hi <= 6.0f);
    }
    SUBCASE("two-input ranges are the elementwise extrema of single runs") {
        Model m = small_random_model(67);
        auto inputs = random_calibration_inputs(m.graph.input_shape, 2, 10);
        Calibration both = calibrate(m, inputs, 1);
        Calibration first = calibrate(m, std::span<const Tensor>(&inputs[0], 1), 1);
        Calibration second = calibrate(m, std::span<const Tensor>(&inputs[1], 1), 1);
        for (const auto& [edge, r] : both.ranges) {
            CAPTURE(edge);
            CHECK(r.lo == std::min(first.ranges.at(edge).lo, second.ranges.at(edge).lo));
            CHECK(r.hi == std::max(first.ranges.at(edge).hi, second.ranges.at(edge).hi));
        }
    }
    SUBCASE("empty calibration set rejected") {
        Model m = small_random_model(68);
        CHECK_THROWS_AS(calibrate(m, std::vector<Tensor>{}, 1), Error);
    }
    SUBCASE("seeded random inputs are reproducible") {
        auto a = random_calibration_inputs(Shape{1, 2, 2, 3}, 3, 99);
        auto b = random_calibration_inputs(Shape{1, 2, 2, 3}, 3, 99);
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("quantize_model weight rules") {
    Model m;
    m.graph.input_shape = Shape{1, 1, 1, 2};
    m.graph.nodes.push_back(conv_node("c", kGraphInput, "w", "b"));
    // channel 0: {-1, 1}; channel 1: {0, 0}
    m.graph.weights.emplace("w", Tensor::from_f32(Shape{2, 1, 1, 2}, {-1.0f, 1.0f, 0.0f, 0.0f}));
    m.graph.weights.emplace("b", Tensor::from_f32(Shape{2}, {0.75f, 0.0f}));
    m.graph.output = "c";

    Calibration cal;
    cal.qparams[kGraphInput] = {0.5f, 0};
    cal.qparams["c"] = {1.0f, 0};
    Model qm = quantize_model(std::move(m), cal);

    const Tensor& w = qm.graph.weights.at("w");
    REQUIRE(w.dtype() == DType::I8);
    const auto& pc = std::get<PerChannelQuant>(*w.quant());
    CHECK(pc.axis == 0);
    CHECK(pc.scales[0] == doctest::Approx(1.0 / 127.0));
    CHECK(pc.scales[1] == 1.0f); // all-zero channel falls back to scale 1
    CHECK(w.i8()[0] == -127);
    CHECK(w.i8()[1] == 127);
    CHECK(w.i8()[2] == 0);
    CHECK(w.i8()[3] == 0);

    const Tensor& b = qm.graph.weights.at("b");
    REQUIRE(b.dtype() == DType::I32);
    // bias scale = input_scale * weight_scale = 0.5 / 127
    CHECK(b.i32()[0] == std::llround(0.75 / (0.5 / 127.0)));
    CHECK(b.i32()[1] == 0);
}

TEST_CASE("quantize_model requires full edge coverage") {
    Model m = small_random_model(77);
    auto inputs = random_calibration_inputs(m.graph.input_shape, 2, 1);
    Calibration cal = calibrate(m, inputs, 1);
    cal.qparams.erase("pool");
    CHECK_THROWS_WITH_AS(quantize_model(std::move(m), cal), doctest::Contains("pool"), Error);
}

TEST_CASE("quantizing a clustered tensor preserves the unique-value bound") {
    Model m = small_random_model(81);
    m = prune_magnitude(std::move(m), 0.5);
    m = cluster_weights(std::move(m), 16, true);
    auto inputs = random_calibration_inputs(m.graph.input_shape, 4, 2);
    Calibration cal = calibrate(m, inputs, 1);
    Model qm = quantize_model(std::move(m), cal);

    for (const auto& name : prunable_tensors(qm)) {
        const Tensor& t = qm.graph.weights.at(name);
        REQUIRE(t.dtype() == DType::I8);
        std::set<int8_t> unique;
        for (int8_t v : t.i8())
            if (v != 0) unique.insert(v);
        CHECK(unique.size() <= 16);
        CHECK(qm.codebooks.contains(name)); // codebook survives quantization
    }
}

TEST_CASE("optimize_pipeline") {
    SUBCASE("empty config is the identity with ratio 1") {
        Model m = small_random_model(90);
        std::vector<float> before = weight_values(m, "c1_w");
        CompressionConfig cfg;
        auto [out, report] = optimize_pipeline(std::move(m), cfg);
        CHECK(report.ratio == doctest::Approx(1.0));
        CHECK(report.original_bytes == report.encoded_bytes);
        CHECK(weight_values(out, "c1_w") == before);
    }
    SUBCASE("pruned zeros survive the full pipeline") {
        Model m = small_random_model(91);
        CompressionConfig cfg;
        cfg.sparsity = 0.5;
        cfg.clusters = 8;
        cfg.quantize = true;
        cfg.calib_random = 4;
        cfg.seed = 5;
        auto [out, report] = optimize_pipeline(std::move(m), cfg);

        for (const auto& name : prunable_tensors(out)) {
            const Tensor& t = out.graph.weights.at(name);
            const Codebook& cb = out.codebooks.at(name);
            int64_t zeros = 0;
            for (int64_t i = 0; i < t.elems(); ++i) {
                if (cb.assignment[static_cast<size_t>(i)] == kExemptZero) {
                    CHECK(t.i8()[static_cast<size_t>(i)] == 0);
                    ++zeros;
                }
            }
            CHECK(zeros >= t.elems() / 2 - 1);
        }
        // tensors here are tiny, so codebook overhead caps the ratio
        CHECK(report.ratio > 2.0);
    }
    SUBCASE("topology is never changed") {
        Model m = small_random_model(92);
        std::vector<std::string> ids;
        for (const auto& n : m.graph.nodes) ids.push_back(n.id);
        CompressionConfig cfg;
        cfg.sparsity = 0.3;
        cfg.clusters = 4;
        cfg.quantize = true;
        cfg.calib_random = 2;
        auto [out, report] = optimize_pipeline(std::move(m), cfg);
        (void)report;
        REQUIRE(out.graph.nodes.size() == ids.size());
        for (size_t i = 0; i < ids.size(); ++i) CHECK(out.graph.nodes[i].id == ids[i]);
    }
    SUBCASE("report serializes with stable keys") {
        Model m = small_random_model(93);
        CompressionConfig cfg;
        cfg.quantize = true;
        cfg.calib_random = 2;
        auto [out, report] = optimize_pipeline(std::move(m), cfg);
        (void)out;
        std::string j = report.to_json();
        CHECK(j.find("\"original_bytes\"") != std::string::npos);
        CHECK(j.find("\"encoded_bytes\"") != std::string::npos);
        CHECK(j.find("\"ratio\"") != std::string::npos);
        CHECK(j.find("\"per_tensor\"") != std::string::npos);
    }
}

TEST_CASE("q8 storage is about a quarter of f32 above 1e5 params") {
    // one wide conv pushes the model past 1e5 params so per-channel scale
    // tables become negligible
    std::mt19937_64 eng(94);
    Model m;
    m.graph.input_shape = Shape{1, 8, 8, 128};
    m.graph.nodes.push_back(conv_node("c", kGraphInput, "c_w", "c_b"));
    m.graph.weights.emplace("c_w", random_f32(Shape{128, 3, 3, 128}, eng, 0.2f));
    m.graph.weights.emplace("c_b", random_f32(Shape{128}, eng, 0.1f));
    m.graph.nodes.push_back(simple_node("pool", NodeKind::GlobalAvgPool, "c"));
    m.graph.nodes.push_back(fc_node("fc", "pool", "fc_w"));
    m.graph.weights.emplace("fc_w", random_f32(Shape{7, 128}, eng, 0.3f));
    m.graph.nodes.push_back(simple_node("softmax", NodeKind::Softmax, "fc"));
    m.graph.output = "softmax";
    REQUIRE(count_params(m.graph) >= 100000);

    int64_t original = 0;
    for (const auto& [name, t] : m.graph.weights) {
        (void)name;
        original += static_cast<int64_t>(t.payload_bytes());
    }
    CompressionConfig cfg;
    cfg.quantize = true;
    cfg.calib_random = 2;
    auto [out, report] = optimize_pipeline(std::move(m), cfg);
    (void)out;
    CHECK(report.original_bytes == original);
    CHECK(report.encoded_bytes <= static_cast<int64_t>(0.26 * original));
}

TEST_SUITE_END();
