#include "emdl/mobilenet.hpp"

#include <cmath>
#include <random>

namespace emdl {

namespace {

int make_divisible(double v, int divisor = 8) {
    int new_v = std::max(divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
    if (new_v < 0.9 * v) new_v += divisor;
    return new_v;
}

// He-uniform fill driven directly by engine bits, so files built from the
// same seed are byte-identical regardless of the standard library.
class WeightRng {
public:
    explicit WeightRng(uint64_t seed) : eng_(seed) {}

    void fill_he_uniform(std::span<float> dst, int64_t fan_in) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : dst) {
            double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53; // [0, 1)
            v = static_cast<float>((2.0 * u - 1.0) * limit);
        }
    }

private:
    std::mt19937_64 eng_;
};

struct Builder {
    Model model;
    WeightRng rng;
    WeightInit init;
    std::string last; // id of the previous node's output edge

    Builder(WeightInit ini, uint64_t seed) : rng(seed), init(ini), last(kGraphInput) {}

    Tensor make_weight(Shape shape, int64_t fan_in) {
        Tensor t = Tensor::zeros_f32(std::move(shape));
        if (init == WeightInit::Random) rng.fill_he_uniform(t.f32(), fan_in);
        return t;
    }

    std::string conv(const std::string& id, int co, int k, int stride, int ci) {
        NodeSpec n;
        n.id = id;
        n.kind = NodeKind::Conv2D;
        n.inputs = {last};
        n.stride = stride;
        n.padding = Padding::Same;
        n.weights = id + "_w";
        n.bias = id + "_b";
        model.graph.weights.emplace(n.weights,
                                    make_weight(Shape{co, k, k, ci},
                                                static_cast<int64_t>(k) * k * ci));
        model.graph.weights.emplace(n.bias, Tensor::zeros_f32(Shape{co}));
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }

    std::string depthwise(const std::string& id, int c, int k, int stride) {
        NodeSpec n;
        n.id = id;
        n.kind = NodeKind::DepthwiseConv2D;
        n.inputs = {last};
        n.stride = stride;
        n.padding = Padding::Same;
        n.weights = id + "_w";
        n.bias = id + "_b";
        model.graph.weights.emplace(n.weights,
                                    make_weight(Shape{1, k, k, c}, static_cast<int64_t>(k) * k));
        model.graph.weights.emplace(n.bias, Tensor::zeros_f32(Shape{c}));
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }

    std::string relu6(const std::string& id) {
        NodeSpec n;
        n.id = id;
        n.kind = NodeKind::ReLU6;
        n.inputs = {last};
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }

    std::string add(const std::string& id, const std::string& a, const std::string& b) {
        NodeSpec n;
        n.id = id;
        n.kind = NodeKind::Add;
        n.inputs = {a, b};
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }

    std::string simple(const std::string& id, NodeKind kind) {
        NodeSpec n;
        n.id = id;
        n.kind = kind;
        n.inputs = {last};
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }

    std::string fully_connected(const std::string& id, int out_n, int in_n) {
        NodeSpec n;
        n.id = id;
        n.kind = NodeKind::FullyConnected;
        n.inputs = {last};
        n.weights = id + "_w";
        n.bias = id + "_b";
        model.graph.weights.emplace(n.weights, make_weight(Shape{out_n, in_n}, in_n));
        model.graph.weights.emplace(n.bias, Tensor::zeros_f32(Shape{out_n}));
        model.graph.nodes.push_back(std::move(n));
        last = id;
        return id;
    }
};

} // namespace

Model build_mobilenet_v2(double width_multiplier, int num_classes, int input_size,
                         WeightInit init, uint64_t seed) {
    if (input_size <= 0 || input_size % 32 != 0)
        throw Error("input_size must be a positive multiple of 32");
    if (num_classes < 2) throw Error("num_classes must be at least 2");
    if (!(width_multiplier > 0.0)) throw Error("width_multiplier must be positive");

    // t = expansion, c = base output channels, n = repeats, s = first stride.
    struct Block {
        int t, c, n, s;
    };
    static constexpr Block schedule[] = {
        {1, 16, 1, 1}, {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
        {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
    };

    Builder b(init, seed);
    b.model.name = "mobilenet_v2";
    b.model.graph.input_shape = Shape{1, input_size, input_size, 3};

    int ch = make_divisible(32 * width_multiplier);
    b.conv("stem", ch, 3, 2, 3);
    b.relu6("stem_relu");

    int block_index = 0;
    for (const Block& blk : schedule) {
        const int cout = make_divisible(blk.c * width_multiplier);
        for (int r = 0; r < blk.n; ++r) {
            ++block_index;
            const std::string p = "b" + std::to_string(block_index);
            const int stride = r == 0 ? blk.s : 1;
            const int hidden = static_cast<int>(std::lround(ch * static_cast<double>(blk.t)));
            const std::string block_in = b.last;

            if (blk.t != 1) {
                b.conv(p + "_expand", hidden, 1, 1, ch);
                b.relu6(p + "_expand_relu");
            }
            b.depthwise(p + "_dw", hidden, 3, stride);
            b.relu6(p + "_dw_relu");
            b.conv(p + "_project", cout, 1, 1, hidden);
            if (stride == 1 && ch == cout) b.add(p + "_add", p + "_project", block_in);
            ch = cout;
        }
    }

    const int head = width_multiplier > 1.0 ? make_divisible(1280 * width_multiplier) : 1280;
    b.conv("head", head, 1, 1, ch);
    b.relu6("head_relu");
    b.simple("pool", NodeKind::GlobalAvgPool);
    b.fully_connected("classifier", num_classes, head);
    b.simple("softmax", NodeKind::Softmax);

    b.model.graph.output = "softmax";
    validate(b.model.graph);
    return std::move(b.model);
}

} // namespace emdl
