#include "emdl/graph.hpp"

#include <algorithm>
#include <set>

namespace emdl {

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::Conv2D: return "Conv2D";
        case NodeKind::DepthwiseConv2D: return "DepthwiseConv2D";
        case NodeKind::FullyConnected: return "FullyConnected";
        case NodeKind::ReLU6: return "ReLU6";
        case NodeKind::Add: return "Add";
        case NodeKind::GlobalAvgPool: return "GlobalAvgPool";
        case NodeKind::Softmax: return "Softmax";
    }
    return "?";
}

NodeKind node_kind_from_name(const std::string& s) {
    if (s == "Conv2D") return NodeKind::Conv2D;
    if (s == "DepthwiseConv2D") return NodeKind::DepthwiseConv2D;
    if (s == "FullyConnected") return NodeKind::FullyConnected;
    if (s == "ReLU6") return NodeKind::ReLU6;
    if (s == "Add") return NodeKind::Add;
    if (s == "GlobalAvgPool") return NodeKind::GlobalAvgPool;
    if (s == "Softmax") return NodeKind::Softmax;
    throw Error("unknown node kind '" + s + "'");
}

bool Model::quantized() const {
    bool any = false;
    for (const auto& n : graph.nodes) {
        if (!n.parameterized()) continue;
        auto it = graph.weights.find(n.weights);
        if (it != graph.weights.end() && it->second.dtype() == DType::I8) any = true;
    }
    return any;
}

namespace {

int conv_out_dim(int in, int k, int stride, Padding pad, const std::string& id) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    if (in < k) throw Error("node '" + id + "': kernel larger than input with Valid padding");
    return (in - k) / stride + 1;
}

int expected_inputs(NodeKind k) { return k == NodeKind::Add ? 2 : 1; }

} // namespace

std::map<std::string, Shape> infer_shapes(const GraphSpec& g) {
    if (g.input_shape.rank() != 4 || g.input_shape[0] != 1)
        throw Error("graph input shape must be rank-4 NHWC with N=1, got " + g.input_shape.str());
    for (int d : g.input_shape.dims)
        if (d < 1) throw Error("graph input shape has non-positive dim");

    std::map<std::string, Shape> shapes;
    shapes[kGraphInput] = g.input_shape;

    std::set<std::string> seen;
    std::map<std::string, int> weight_uses;
    for (const auto& [name, t] : g.weights) {
        (void)t;
        weight_uses[name] = 0;
    }

    auto weight_at = [&](const NodeSpec& n, const std::string& name) -> const Tensor& {
        auto it = g.weights.find(name);
        if (it == g.weights.end())
            throw Error("node '" + n.id + "' references missing tensor '" + name + "'");
        ++weight_uses[name];
        return it->second;
    };

    for (const auto& n : g.nodes) {
        if (n.id.empty()) throw Error("node with empty id");
        if (n.id == kGraphInput) throw Error("node id 'input' is reserved");
        if (!seen.insert(n.id).second) throw Error("duplicate node id '" + n.id + "'");
        if (static_cast<int>(n.inputs.size()) != expected_inputs(n.kind))
            throw Error("node '" + n.id + "': wrong input count");

        std::vector<Shape> in_shapes;
        for (const auto& ref : n.inputs) {
            auto it = shapes.find(ref);
            if (it == shapes.end())
                throw Error("node '" + n.id + "' references '" + ref +
                            "' which is not an earlier node");
            in_shapes.push_back(it->second);
        }
        const Shape& in0 = in_shapes[0];

        Shape out;
        switch (n.kind) {
            case NodeKind::Conv2D: {
                if (in0.rank() != 4) throw Error("node '" + n.id + "': Conv2D input must be NHWC");
                const Tensor& w = weight_at(n, n.weights);
                if (w.shape().rank() != 4)
                    throw Error("node '" + n.id + "': Conv2D weights must be OHWI");
                int co = w.shape()[0], kh = w.shape()[1], kw = w.shape()[2], ci = w.shape()[3];
                if (ci != in0[3])
                    throw Error("node '" + n.id + "': weight input channels " +
                                std::to_string(ci) + " != activation channels " +
                                std::to_string(in0[3]));
                if (n.stride != 1 && n.stride != 2)
                    throw Error("node '" + n.id + "': stride must be 1 or 2");
                int ho = conv_out_dim(in0[1], kh, n.stride, n.padding, n.id);
                int wo = conv_out_dim(in0[2], kw, n.stride, n.padding, n.id);
                out = Shape{1, ho, wo, co};
                if (!n.bias.empty()) {
                    const Tensor& b = weight_at(n, n.bias);
                    if (b.shape().rank() != 1 || b.shape()[0] != co)
                        throw Error("node '" + n.id + "': bias must be rank-1 of size " +
                                    std::to_string(co));
                }
                break;
            }
            case NodeKind::DepthwiseConv2D: {
                if (in0.rank() != 4)
                    throw Error("node '" + n.id + "': DepthwiseConv2D input must be NHWC");
                const Tensor& w = weight_at(n, n.weights);
                if (w.shape().rank() != 4 || w.shape()[0] != 1)
                    throw Error("node '" + n.id + "': depthwise weights must be 1xHxWxC");
                int kh = w.shape()[1], kw = w.shape()[2], c = w.shape()[3];
                if (c != in0[3])
                    throw Error("node '" + n.id + "': depthwise channels mismatch");
                if (n.stride != 1 && n.stride != 2)
                    throw Error("node '" + n.id + "': stride must be 1 or 2");
                int ho = conv_out_dim(in0[1], kh, n.stride, n.padding, n.id);
                int wo = conv_out_dim(in0[2], kw, n.stride, n.padding, n.id);
                out = Shape{1, ho, wo, c};
                if (!n.bias.empty()) {
                    const Tensor& b = weight_at(n, n.bias);
                    if (b.shape().rank() != 1 || b.shape()[0] != c)
                        throw Error("node '" + n.id + "': bias must be rank-1 of size " +
                                    std::to_string(c));
                }
                break;
            }
            case NodeKind::FullyConnected: {
                const Tensor& w = weight_at(n, n.weights);
                if (w.shape().rank() != 2)
                    throw Error("node '" + n.id + "': FC weights must be Out x In");
                int64_t in_elems = in0.elems(); // batch is 1 throughout
                if (w.shape()[1] != in_elems)
                    throw Error("node '" + n.id + "': FC expects " +
                                std::to_string(w.shape()[1]) + " inputs, activation has " +
                                std::to_string(in_elems));
                out = Shape{1, w.shape()[0]};
                if (!n.bias.empty()) {
                    const Tensor& b = weight_at(n, n.bias);
                    if (b.shape().rank() != 1 || b.shape()[0] != w.shape()[0])
                        throw Error("node '" + n.id + "': bias must be rank-1 of size " +
                                    std::to_string(w.shape()[0]));
                }
                break;
            }
            case NodeKind::ReLU6:
            case NodeKind::Softmax:
                out = in0;
                break;
            case NodeKind::Add:
                if (in_shapes[0] != in_shapes[1])
                    throw Error("node '" + n.id + "': Add input shapes differ");
                out = in0;
                break;
            case NodeKind::GlobalAvgPool:
                if (in0.rank() != 4)
                    throw Error("node '" + n.id + "': GlobalAvgPool input must be NHWC");
                out = Shape{1, in0[3]};
                break;
        }
        shapes[n.id] = std::move(out);
    }

    if (g.output.empty() || !shapes.contains(g.output))
        throw Error("graph output '" + g.output + "' is not a node");
    for (const auto& [name, uses] : weight_uses)
        if (uses != 1)
            throw Error("weight tensor '" + name + "' referenced " + std::to_string(uses) +
                        " times, expected exactly 1");
    return shapes;
}

void validate(const GraphSpec& g) { infer_shapes(g); }

int64_t count_params(const GraphSpec& g) {
    int64_t total = 0;
    for (const auto& [name, t] : g.weights) {
        (void)name;
        total += t.elems();
    }
    return total;
}

int64_t count_madds(const GraphSpec& g) {
    auto shapes = infer_shapes(g);
    int64_t total = 0;
    for (const auto& n : g.nodes) {
        const Shape& out = shapes[n.id];
        switch (n.kind) {
            case NodeKind::Conv2D: {
                const Shape& w = g.weights.at(n.weights).shape();
                total += static_cast<int64_t>(out[1]) * out[2] * out[3] *
                         (static_cast<int64_t>(w[1]) * w[2] * w[3]);
                break;
            }
            case NodeKind::DepthwiseConv2D: {
                const Shape& w = g.weights.at(n.weights).shape();
                total += static_cast<int64_t>(out[1]) * out[2] * out[3] *
                         (static_cast<int64_t>(w[1]) * w[2]);
                break;
            }
            case NodeKind::FullyConnected: {
                const Shape& w = g.weights.at(n.weights).shape();
                total += static_cast<int64_t>(w[0]) * w[1];
                break;
            }
            default:
                break;
        }
    }
    return total;
}

namespace {

int64_t peak_bytes(const GraphSpec& g, bool int8_edges) {
    auto shapes = infer_shapes(g);
    const int n = static_cast<int>(g.nodes.size());

    std::map<std::string, int> produced; // edge -> producing step
    std::map<std::string, int> last_use; // edge -> last consuming step
    produced[kGraphInput] = 0;
    last_use[kGraphInput] = 0;
    for (int i = 0; i < n; ++i) {
        produced[g.nodes[i].id] = i;
        last_use[g.nodes[i].id] = i;
        for (const auto& ref : g.nodes[i].inputs) last_use[ref] = i;
    }
    // The graph output must survive the whole schedule.
    last_use[g.output] = n == 0 ? 0 : n - 1;

    auto edge_bytes = [&](const std::string& edge) -> int64_t {
        int64_t elems = shapes.at(edge).elems();
        // Softmax emits float probabilities even on the int8 path.
        bool f32 = !int8_edges;
        if (int8_edges) {
            if (edge != kGraphInput) {
                for (const auto& nd : g.nodes)
                    if (nd.id == edge && nd.kind == NodeKind::Softmax) f32 = true;
            }
        }
        return elems * (f32 ? 4 : 1);
    };

    int64_t peak = 0;
    for (int step = 0; step < std::max(n, 1); ++step) {
        int64_t live = 0;
        for (const auto& [edge, p] : produced) {
            if (p <= step && last_use.at(edge) >= step) live += edge_bytes(edge);
        }
        peak = std::max(peak, live);
    }
    return peak;
}

} // namespace

int64_t activation_peak_bytes(const GraphSpec& g) { return peak_bytes(g, false); }

int64_t activation_peak_bytes(const Model& m) {
    return peak_bytes(m.graph, m.quantized());
}

} // namespace emdl
