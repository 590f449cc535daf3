#include <doctest.h>

#include <cstring>
#include <random>

#include "emdl/executor.hpp"
#include "test_graphs.hpp"

using namespace emdl;
using namespace testutil;

TEST_SUITE_BEGIN("executor");

namespace {

// Reference convolution: plain quadruple loop, summation order ky, kx, ci,
// bias added last. The executor kernel must reproduce it bit for bit.
std::vector<float> reference_conv(const std::vector<float>& x, int ih, int iw, int ci,
                                  const std::vector<float>& w, int co, int kh, int kw,
                                  const std::vector<float>& bias, int stride, bool same,
                                  bool depthwise) {
    int oh = same ? (ih + stride - 1) / stride : (ih - kh) / stride + 1;
    int ow = same ? (iw + stride - 1) / stride : (iw - kw) / stride + 1;
    int pad_top = same ? std::max((oh - 1) * stride + kh - ih, 0) / 2 : 0;
    int pad_left = same ? std::max((ow - 1) * stride + kw - iw, 0) / 2 : 0;
    int out_c = depthwise ? ci : co;

    std::vector<float> out(static_cast<size_t>(oh) * ow * out_c, 0.0f);
    for (int o = 0; o < out_c; ++o) {
        for (int h = 0; h < oh; ++h) {
            for (int v = 0; v < ow; ++v) {
                float acc = 0.0f;
                for (int ky = 0; ky < kh; ++ky) {
                    int y = h * stride - pad_top + ky;
                    if (y < 0 || y >= ih) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        int xx = v * stride - pad_left + kx;
                        if (xx < 0 || xx >= iw) continue;
                        if (depthwise) {
                            acc += x[(static_cast<size_t>(y) * iw + xx) * ci + o] *
                                   w[(static_cast<size_t>(ky) * kw + kx) * ci + o];
                        } else {
                            for (int c = 0; c < ci; ++c)
                                acc += x[(static_cast<size_t>(y) * iw + xx) * ci + c] *
                                       w[((static_cast<size_t>(o) * kh + ky) * kw + kx) * ci + c];
                        }
                    }
                }
                if (!bias.empty()) acc += bias[static_cast<size_t>(o)];
                out[(static_cast<size_t>(h) * ow + v) * out_c + o] = acc;
            }
        }
    }
    return out;
}

Model single_conv_model(int ih, int ci, int co, int k, int stride, Padding pad, bool depthwise,
                        bool with_bias, std::mt19937_64& eng) {
    Model m;
    m.graph.input_shape = Shape{1, ih, ih, ci};
    std::string bias_name = with_bias ? "b" : "";
    if (depthwise)
        m.graph.nodes.push_back(dw_node("c", kGraphInput, "w", bias_name, stride, pad));
    else
        m.graph.nodes.push_back(conv_node("c", kGraphInput, "w", bias_name, stride, pad));
    Shape ws = depthwise ? Shape{1, k, k, ci} : Shape{co, k, k, ci};
    m.graph.weights.emplace("w", random_f32(ws, eng));
    if (with_bias)
        m.graph.weights.emplace("b", random_f32(Shape{depthwise ? ci : co}, eng, 0.3f));
    m.graph.output = "c";
    return m;
}

} // namespace

TEST_CASE("identity 1x1 conv into softmax yields [1.0]") {
    Model m;
    m.graph.input_shape = Shape{1, 1, 1, 1};
    m.graph.nodes.push_back(conv_node("c", kGraphInput, "w"));
    m.graph.weights.emplace("w", Tensor::from_f32(Shape{1, 1, 1, 1}, {1.0f}));
    m.graph.nodes.push_back(simple_node("softmax", NodeKind::Softmax, "c"));
    m.graph.output = "softmax";

    Executor ex(m, 1);
    Tensor out = ex.infer(Tensor::from_f32(Shape{1, 1, 1, 1}, {0.37f}));
    REQUIRE(out.elems() == 1);
    CHECK(out.f32()[0] == 1.0f);
}

TEST_CASE("zero fully-connected into softmax is uniform over 7 classes") {
    Model m;
    m.graph.input_shape = Shape{1, 1, 1, 4};
    m.graph.nodes.push_back(fc_node("fc", kGraphInput, "w", "b"));
    m.graph.weights.emplace("w", Tensor::zeros_f32(Shape{7, 4}));
    m.graph.weights.emplace("b", Tensor::zeros_f32(Shape{7}));
    m.graph.nodes.push_back(simple_node("softmax", NodeKind::Softmax, "fc"));
    m.graph.output = "softmax";

    Executor ex(m, 2);
    Tensor out = ex.infer(Tensor::from_f32(Shape{1, 1, 1, 4}, {1, -2, 3, 0.5f}));
    REQUIRE(out.elems() == 7);
    for (float v : out.f32()) CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
}

TEST_CASE("hand-computed 3x3 same conv on a 2x2 input") {
    // input [[1,2],[3,4]], kernel rows [[1,2,3],[4,5,6],[7,8,9]]
    Model m;
    m.graph.input_shape = Shape{1, 2, 2, 1};
    m.graph.nodes.push_back(conv_node("c", kGraphInput, "w"));
    m.graph.weights.emplace("w",
                            Tensor::from_f32(Shape{1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    m.graph.output = "c";

    Executor ex(m, 1);
    Tensor out = ex.infer(Tensor::from_f32(Shape{1, 2, 2, 1}, {1, 2, 3, 4}));
    auto o = out.f32();
    REQUIRE(o.size() == 4);
    CHECK(o[0] == 77.0f);
    CHECK(o[1] == 67.0f);
    CHECK(o[2] == 47.0f);
    CHECK(o[3] == 37.0f);
}

TEST_CASE("conv kernels match the reference bitwise") {
    std::mt19937_64 eng(123);
    for (int trial = 0; trial < 40; ++trial) {
        int ih = 2 + static_cast<int>(eng() % 7);
        int ci = 1 + static_cast<int>(eng() % 5);
        int co = 1 + static_cast<int>(eng() % 6);
        int k = 1 + 2 * static_cast<int>(eng() % 2); // 1 or 3
        int stride = 1 + static_cast<int>(eng() % 2);
        bool same = eng() % 2 == 0;
        bool depthwise = eng() % 3 == 0;
        bool with_bias = eng() % 2 == 0;
        if (!same && ih < k) continue;
        Padding pad = same ? Padding::Same : Padding::Valid;

        Model m = single_conv_model(ih, ci, co, k, stride, pad, depthwise, with_bias, eng);
        Tensor input = random_f32(Shape{1, ih, ih, ci}, eng);

        Executor ex(m, 1 + static_cast<int>(eng() % 4));
        Tensor got = ex.infer(input);

        std::vector<float> x(input.f32().begin(), input.f32().end());
        auto wspan = m.graph.weights.at("w").f32();
        std::vector<float> w(wspan.begin(), wspan.end());
        std::vector<float> bias;
        if (with_bias) {
            auto bspan = m.graph.weights.at("b").f32();
            bias.assign(bspan.begin(), bspan.end());
        }
        std::vector<float> want =
            reference_conv(x, ih, ih, ci, w, co, k, k, bias, stride, same, depthwise);

        REQUIRE(static_cast<size_t>(got.elems()) == want.size());
        auto g = got.f32();
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(std::memcmp(&g[i], &want[i], 4) == 0); // bitwise, not approx
        }
    }
}

TEST_CASE("thread-count determinism on random graphs") {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        Model m = small_random_model(seed);
        std::mt19937_64 eng(seed * 99);
        Tensor input = random_f32(m.graph.input_shape, eng);

        Executor ex1(m, 1);
        Tensor ref = ex1.infer(input);
        for (int threads : {2, 4, 8}) {
            Executor exn(m, threads);
            Tensor got = exn.infer(input);
            REQUIRE(got.elems() == ref.elems());
            CHECK(std::memcmp(got.f32().data(), ref.f32().data(),
                              got.f32().size_bytes()) == 0);
        }
    }
}

TEST_CASE("softmax output sums to one and ignores logit shifts") {
    auto build = [](float bias_shift) {
        Model m;
        m.graph.input_shape = Shape{1, 1, 1, 3};
        m.graph.nodes.push_back(fc_node("fc", kGraphInput, "w", "b"));
        m.graph.weights.emplace(
            "w", Tensor::from_f32(Shape{5, 3}, {0.2f, -1.0f, 0.5f, 1.2f, 0.3f, -0.4f, 0.0f, 0.8f,
                                                -0.2f, -0.6f, 0.1f, 0.9f, 0.4f, -0.3f, 0.7f}));
        std::vector<float> b(5, bias_shift);
        m.graph.weights.emplace("b", Tensor::from_f32(Shape{5}, std::move(b)));
        m.graph.nodes.push_back(simple_node("softmax", NodeKind::Softmax, "fc"));
        m.graph.output = "softmax";
        return m;
    };
    Tensor input = Tensor::from_f32(Shape{1, 1, 1, 3}, {0.3f, -0.7f, 1.1f});

    Model m0 = build(0.0f);
    Model m1 = build(3.7f); // constant added to every logit
    Executor e0(m0, 1), e1(m1, 1);
    auto p0 = e0.infer(input);
    auto p1 = e1.infer(input);

    double sum = 0.0;
    for (float v : p0.f32()) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    for (int i = 0; i < 5; ++i)
        CHECK(p0.f32()[static_cast<size_t>(i)] ==
              doctest::Approx(p1.f32()[static_cast<size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("input shape mismatch is rejected before execution") {
    Model m = small_random_model(5);
    Executor ex(m, 1);
    CHECK_THROWS_WITH_AS(ex.infer(Tensor::zeros_f32(Shape{1, 4, 4, 3})),
                         doctest::Contains("does not match"), Error);
    CHECK_THROWS_AS(ex.infer(Tensor::zeros_i8(Shape{1, 8, 8, 3}, QuantParams{1.0f, 0})), Error);
}

TEST_CASE("an executor can be reused across inferences") {
    Model m = small_random_model(6);
    std::mt19937_64 eng(60);
    Tensor a = random_f32(m.graph.input_shape, eng);
    Tensor b = random_f32(m.graph.input_shape, eng);

    Executor ex(m, 2);
    Tensor first = ex.infer(a);
    ex.infer(b); // must not leak state into the next run
    Tensor again = ex.infer(a);
    CHECK(std::memcmp(first.f32().data(), again.f32().data(), first.f32().size_bytes()) == 0);
}

TEST_CASE("gap averages each channel") {
    Model m;
    m.graph.input_shape = Shape{1, 2, 2, 2};
    m.graph.nodes.push_back(simple_node("pool", NodeKind::GlobalAvgPool, kGraphInput));
    m.graph.output = "pool";
    Executor ex(m, 1);
    // channel 0: 1,3,5,7 -> 4; channel 1: 2,4,6,8 -> 5
    Tensor out = ex.infer(Tensor::from_f32(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    CHECK(out.f32()[0] == 4.0f);
    CHECK(out.f32()[1] == 5.0f);
}

TEST_SUITE_END();
