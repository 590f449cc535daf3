#include "emdl/compress.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "emdl/model_io.hpp"

namespace emdl {

using nlohmann::json;

std::vector<std::string> prunable_tensors(const Model& m) {
    std::vector<std::string> names;
    std::string classifier;
    for (const auto& n : m.graph.nodes) {
        if (!n.parameterized()) continue;
        names.push_back(n.weights);
        if (n.kind == NodeKind::FullyConnected) classifier = n.weights;
    }
    if (!classifier.empty())
        names.erase(std::remove(names.begin(), names.end(), classifier), names.end());
    return names;
}

Model prune_magnitude(Model m, double sparsity) {
    if (sparsity < 0.0 || sparsity > 1.0) throw Error("sparsity must be in [0, 1]");
    for (const auto& name : prunable_tensors(m)) {
        Tensor& t = m.graph.weights.at(name);
        auto w = t.f32();
        const int64_t n = static_cast<int64_t>(w.size());
        const int64_t cut = static_cast<int64_t>(std::floor(sparsity * static_cast<double>(n)));
        if (cut == 0) continue;
        std::vector<int64_t> idx(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
            float fa = std::fabs(w[static_cast<size_t>(a)]);
            float fb = std::fabs(w[static_cast<size_t>(b)]);
            return fa != fb ? fa < fb : a < b;
        });
        for (int64_t i = 0; i < cut; ++i) w[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 0.0f;
    }
    return m;
}

namespace {

struct LloydResult {
    std::vector<float> centroids;
    std::vector<uint32_t> assignment; // kExemptZero for exempt elements
    std::vector<double> objective;    // one entry per iteration
};

LloydResult lloyd_cluster(std::span<const float> values, int k, bool preserve_zeros) {
    const size_t n = values.size();
    LloydResult res;
    res.assignment.assign(n, kExemptZero);

    std::vector<size_t> active;
    active.reserve(n);
    float lo = 0.0f, hi = 0.0f;
    bool first = true;
    for (size_t i = 0; i < n; ++i) {
        if (preserve_zeros && values[i] == 0.0f) continue;
        active.push_back(i);
        if (first) {
            lo = hi = values[i];
            first = false;
        } else {
            lo = std::min(lo, values[i]);
            hi = std::max(hi, values[i]);
        }
    }
    if (active.empty()) {
        res.centroids.assign(static_cast<size_t>(k), 0.0f);
        return res;
    }

    res.centroids.resize(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
        double t = k == 1 ? 0.0 : static_cast<double>(j) / (k - 1);
        res.centroids[static_cast<size_t>(j)] =
            static_cast<float>(lo + t * (static_cast<double>(hi) - lo));
    }

    std::vector<uint32_t> assign(active.size(), 0);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        double objective = 0.0;
        for (size_t ai = 0; ai < active.size(); ++ai) {
            const double v = values[active[ai]];
            uint32_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                double d = v - res.centroids[static_cast<size_t>(j)];
                d *= d;
                if (d < best_d) { // strict: ties keep the lower index
                    best_d = d;
                    best = static_cast<uint32_t>(j);
                }
            }
            if (assign[ai] != best) {
                assign[ai] = best;
                changed = true;
            }
            objective += best_d;
        }
        res.objective.push_back(objective);
        if (!changed && iter > 0) break;

        std::vector<double> sum(static_cast<size_t>(k), 0.0);
        std::vector<int64_t> count(static_cast<size_t>(k), 0);
        for (size_t ai = 0; ai < active.size(); ++ai) {
            sum[assign[ai]] += values[active[ai]];
            ++count[assign[ai]];
        }
        for (int j = 0; j < k; ++j) {
            if (count[static_cast<size_t>(j)] > 0)
                res.centroids[static_cast<size_t>(j)] = static_cast<float>(
                    sum[static_cast<size_t>(j)] / static_cast<double>(count[static_cast<size_t>(j)]));
            // empty clusters keep their previous centroid
        }
    }

    for (size_t ai = 0; ai < active.size(); ++ai) res.assignment[active[ai]] = assign[ai];
    return res;
}

} // namespace

Model cluster_weights(Model m, int k, bool preserve_zeros, ClusterStats* stats) {
    if (k < 2) throw Error("cluster count must be at least 2");
    for (const auto& name : prunable_tensors(m)) {
        Tensor& t = m.graph.weights.at(name);
        auto w = t.f32();
        LloydResult r = lloyd_cluster(w, k, preserve_zeros);
        for (size_t i = 0; i < w.size(); ++i)
            if (r.assignment[i] != kExemptZero) w[i] = r.centroids[r.assignment[i]];
        Codebook cb;
        cb.centroids = std::move(r.centroids);
        cb.assignment = std::move(r.assignment);
        cb.preserved_zero = preserve_zeros;
        m.codebooks[name] = std::move(cb);
        if (stats) stats->objective[name] = std::move(r.objective);
    }
    return m;
}

std::vector<Tensor> random_calibration_inputs(const Shape& input_shape, int count,
                                              uint64_t seed) {
    if (count < 1) throw Error("calibration input count must be positive");
    std::vector<Tensor> inputs;
    inputs.reserve(static_cast<size_t>(count));
    std::mt19937_64 eng(seed);
    for (int i = 0; i < count; ++i) {
        Tensor t = Tensor::zeros_f32(input_shape);
        for (auto& v : t.f32()) {
            double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
            v = static_cast<float>(2.0 * u - 1.0);
        }
        inputs.push_back(std::move(t));
    }
    return inputs;
}

Calibration calibrate(const Model& m, std::span<const Tensor> inputs, int threads) {
    if (inputs.empty()) throw Error("calibration requires at least one input");
    Executor ex(m, threads);
    Calibration cal;
    for (const Tensor& in : inputs) ex.infer_recording(in, cal.ranges);
    for (const auto& [edge, r] : cal.ranges)
        cal.qparams[edge] = quant_params_from_range(r.lo, r.hi);
    return cal;
}

namespace {

int weight_channel_axis(NodeKind kind) {
    switch (kind) {
        case NodeKind::Conv2D: return 0;
        case NodeKind::DepthwiseConv2D: return 3;
        case NodeKind::FullyConnected: return 0;
        default: return 0;
    }
}

// channel index of flat element i along `axis`
int64_t channel_of(const Shape& s, int axis, int64_t i) {
    int64_t inner = 1;
    for (int d = axis + 1; d < s.rank(); ++d) inner *= s[d];
    return (i / inner) % s[axis];
}

} // namespace

Model quantize_model(Model m, const Calibration& calib) {
    auto edge_params = [&](const std::string& edge) -> const QuantParams& {
        auto it = calib.qparams.find(edge);
        if (it == calib.qparams.end())
            throw Error("calibration does not cover edge '" + edge + "'");
        return it->second;
    };
    edge_params(kGraphInput);
    for (const auto& n : m.graph.nodes) edge_params(n.id);

    for (const auto& n : m.graph.nodes) {
        if (!n.parameterized()) continue;
        Tensor& w = m.graph.weights.at(n.weights);
        if (w.dtype() != DType::F32)
            throw Error("node '" + n.id + "': weights already quantized");
        const Shape shape = w.shape();
        const int64_t count = shape.elems();
        auto src = w.f32();

        const bool clustered = m.codebooks.contains(n.weights);
        std::vector<float> channel_scales; // per output channel, post-quant
        Tensor q;

        if (clustered) {
            float max_abs = 0.0f;
            for (float v : src) max_abs = std::max(max_abs, std::fabs(v));
            const float scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
            QuantParams qp{scale, 0};
            q = Tensor::zeros_i8(shape, qp);
            auto dst = q.i8();
            for (int64_t i = 0; i < count; ++i)
                dst[static_cast<size_t>(i)] = quantize(src[static_cast<size_t>(i)], qp);
            const int axis = weight_channel_axis(n.kind);
            channel_scales.assign(static_cast<size_t>(shape[axis]), scale);
        } else {
            const int axis = weight_channel_axis(n.kind);
            const int64_t channels = shape[axis];
            std::vector<float> maxes(static_cast<size_t>(channels), 0.0f);
            for (int64_t i = 0; i < count; ++i) {
                int64_t c = channel_of(shape, axis, i);
                maxes[static_cast<size_t>(c)] =
                    std::max(maxes[static_cast<size_t>(c)], std::fabs(src[static_cast<size_t>(i)]));
            }
            PerChannelQuant pc;
            pc.axis = axis;
            pc.scales.resize(static_cast<size_t>(channels));
            for (int64_t c = 0; c < channels; ++c)
                pc.scales[static_cast<size_t>(c)] =
                    maxes[static_cast<size_t>(c)] > 0.0f ? maxes[static_cast<size_t>(c)] / 127.0f
                                                         : 1.0f;
            channel_scales = pc.scales;
            q = Tensor::zeros_i8(shape, pc);
            auto dst = q.i8();
            for (int64_t i = 0; i < count; ++i) {
                int64_t c = channel_of(shape, axis, i);
                dst[static_cast<size_t>(i)] = quantize(
                    src[static_cast<size_t>(i)],
                    QuantParams{channel_scales[static_cast<size_t>(c)], 0});
            }
        }
        m.graph.weights.at(n.weights) = std::move(q);

        if (!n.bias.empty()) {
            // bias scale is input_scale * weight_scale per channel
            Tensor& bias = m.graph.weights.at(n.bias);
            const float in_scale = edge_params(n.inputs[0]).scale;
            auto bsrc = bias.f32();
            Tensor bq = Tensor::zeros_i32(bias.shape());
            auto bdst = bq.i32();
            for (size_t c = 0; c < bsrc.size(); ++c) {
                const double s = static_cast<double>(in_scale) * channel_scales[c];
                double v = std::clamp(bsrc[c] / s, -2147483648.0, 2147483647.0);
                bdst[c] = static_cast<int32_t>(std::llround(v));
            }
            m.graph.weights.at(n.bias) = std::move(bq);
        }
    }

    m.activation_quant = calib.qparams;
    return m;
}

namespace {

int64_t count_nonzeros(const Tensor& t) {
    int64_t n = 0;
    switch (t.dtype()) {
        case DType::F32:
            for (float v : t.f32()) n += v != 0.0f;
            break;
        case DType::I8:
            for (int8_t v : t.i8()) n += v != 0;
            break;
        case DType::I32:
            for (int32_t v : t.i32()) n += v != 0;
            break;
    }
    return n;
}

int64_t count_unique(const Tensor& t) {
    switch (t.dtype()) {
        case DType::F32: {
            std::set<float> s(t.f32().begin(), t.f32().end());
            return static_cast<int64_t>(s.size());
        }
        case DType::I8: {
            std::set<int8_t> s(t.i8().begin(), t.i8().end());
            return static_cast<int64_t>(s.size());
        }
        case DType::I32: {
            std::set<int32_t> s(t.i32().begin(), t.i32().end());
            return static_cast<int64_t>(s.size());
        }
    }
    return 0;
}

} // namespace

std::pair<Model, CompressionReport> optimize_pipeline(Model m, const CompressionConfig& cfg) {
    if (cfg.clusters && *cfg.clusters < 2) throw Error("cluster count must be at least 2");

    CompressionReport report;
    std::map<std::string, int64_t> original;
    for (const auto& [name, t] : m.graph.weights) {
        original[name] = static_cast<int64_t>(t.payload_bytes());
        report.original_bytes += static_cast<int64_t>(t.payload_bytes());
    }

    m = prune_magnitude(std::move(m), cfg.sparsity);
    if (cfg.clusters) m = cluster_weights(std::move(m), *cfg.clusters, true);
    if (cfg.quantize) {
        std::vector<Tensor> random_inputs;
        std::span<const Tensor> inputs = cfg.calib_inputs;
        if (inputs.empty()) {
            random_inputs =
                random_calibration_inputs(m.graph.input_shape, cfg.calib_random, cfg.seed);
            inputs = random_inputs;
        }
        Calibration cal = calibrate(m, inputs, cfg.threads);
        m = quantize_model(std::move(m), cal);
    }

    EncodedSize enc = encoded_size(m);
    report.encoded_bytes = enc.total;
    report.ratio = enc.total > 0
                       ? static_cast<double>(report.original_bytes) / static_cast<double>(enc.total)
                       : 1.0;
    for (const TensorSize& ts : enc.tensors) {
        const Tensor& t = m.graph.weights.at(ts.name);
        TensorReport tr;
        tr.name = ts.name;
        tr.encoding = encoding_name(ts.encoding);
        tr.original_bytes = original.at(ts.name);
        tr.encoded_bytes = ts.bytes;
        tr.nonzeros = count_nonzeros(t);
        tr.unique_values = count_unique(t);
        report.per_tensor.push_back(std::move(tr));
    }
    return {std::move(m), std::move(report)};
}

std::string CompressionReport::to_json() const {
    json j;
    j["original_bytes"] = original_bytes;
    j["encoded_bytes"] = encoded_bytes;
    j["ratio"] = ratio;
    json arr = json::array();
    for (const auto& t : per_tensor) {
        arr.push_back({{"name", t.name},
                       {"encoding", t.encoding},
                       {"original_bytes", t.original_bytes},
                       {"encoded_bytes", t.encoded_bytes},
                       {"nonzeros", t.nonzeros},
                       {"unique_values", t.unique_values}});
    }
    j["per_tensor"] = std::move(arr);
    return j.dump(2);
}

} // namespace emdl
