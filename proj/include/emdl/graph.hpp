#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emdl/tensor.hpp"

namespace emdl {

enum class NodeKind : uint8_t {
    Conv2D,
    DepthwiseConv2D,
    FullyConnected,
    ReLU6,
    Add,
    GlobalAvgPool,
    Softmax,
};

enum class Padding : uint8_t { Same, Valid };

const char* node_kind_name(NodeKind k);
NodeKind node_kind_from_name(const std::string& s);

// The reserved input marker. Node ids must differ from it.
inline constexpr const char* kGraphInput = "input";

struct NodeSpec {
    std::string id;
    NodeKind kind = NodeKind::ReLU6;
    std::vector<std::string> inputs; // earlier node ids, or kGraphInput
    int stride = 1;                  // conv kinds only, 1 or 2
    Padding padding = Padding::Same; // conv kinds only
    std::string weights;             // tensor name for parameterized kinds
    std::string bias;                // optional tensor name, "" = no bias

    bool parameterized() const {
        return kind == NodeKind::Conv2D || kind == NodeKind::DepthwiseConv2D ||
               kind == NodeKind::FullyConnected;
    }
};

struct GraphSpec {
    Shape input_shape;           // NHWC, N = 1
    std::vector<NodeSpec> nodes; // topological order
    std::string output;          // id of the output node
    std::map<std::string, Tensor> weights;
};

// Shared centroid values installed by weight clustering. Assignment holds a
// centroid index per element; pruned positions exempt from clustering carry
// kExemptZero and stay exactly 0.
inline constexpr uint32_t kExemptZero = 0xffffffffu;

struct Codebook {
    std::vector<float> centroids;
    std::vector<uint32_t> assignment;
    bool preserved_zero = true;
};

struct Model {
    std::string name = "model";
    std::vector<std::string> labels; // class label names, may be empty
    GraphSpec graph;
    std::map<std::string, Codebook> codebooks;
    // Per-edge activation params, keyed by producing node id (plus
    // kGraphInput for the graph input edge). Present on quantized models.
    std::map<std::string, QuantParams> activation_quant;

    bool quantized() const;
};

// Structural + shape validation. Throws Error with the offending node named.
// Returns the inferred output shape of every node plus kGraphInput.
std::map<std::string, Shape> infer_shapes(const GraphSpec& g);
void validate(const GraphSpec& g);

int64_t count_params(const GraphSpec& g);

// Multiply-accumulate count: Conv2D = Ho*Wo*Co*(Kh*Kw*Ci),
// DepthwiseConv2D = Ho*Wo*C*Kh*Kw, FullyConnected = In*Out, rest 0.
int64_t count_madds(const GraphSpec& g);

// Peak of simultaneously live activation bytes over the topological
// schedule; a buffer is live from its producer to its last consumer.
int64_t activation_peak_bytes(const GraphSpec& g);
int64_t activation_peak_bytes(const Model& m);

} // namespace emdl
