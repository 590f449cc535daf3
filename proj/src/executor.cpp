#include "emdl/executor.hpp"

#include <algorithm>
#include <cmath>

#if defined(__SSE2__)
#include <emmintrin.h>
#endif

namespace emdl {

WorkerPool::WorkerPool(int threads) : threads_(std::max(1, threads)) {
    workers_.reserve(static_cast<size_t>(threads_ - 1));
    for (int i = 1; i < threads_; ++i)
        workers_.emplace_back([this, i] { worker_loop(i); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lk(mu_);
        stop_ = true;
    }
    cv_job_.notify_all();
    for (auto& t : workers_) t.join();
}

void WorkerPool::worker_loop(int index) {
    uint64_t last_gen = 0;
    for (;;) {
        const std::function<void(int)>* job = nullptr;
        {
            std::unique_lock lk(mu_);
            cv_job_.wait(lk, [&] { return stop_ || generation_ != last_gen; });
            if (stop_) return;
            last_gen = generation_;
            job = job_;
        }
        (*job)(index);
        {
            std::lock_guard lk(mu_);
            if (--pending_ == 0) cv_done_.notify_one();
        }
    }
}

void WorkerPool::run(const std::function<void(int)>& fn) {
    if (threads_ == 1) {
        fn(0);
        return;
    }
    {
        std::lock_guard lk(mu_);
        job_ = &fn;
        pending_ = threads_ - 1;
        ++generation_;
    }
    cv_job_.notify_all();
    fn(0);
    std::unique_lock lk(mu_);
    cv_done_.wait(lk, [&] { return pending_ == 0; });
}

void parallel_chunks(WorkerPool& pool, int64_t n,
                     const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    const int64_t chunk = (n + pool.threads() - 1) / pool.threads();
    pool.run([&](int idx) {
        int64_t b = idx * chunk;
        int64_t e = std::min(n, b + chunk);
        if (b < e) fn(b, e);
    });
}

namespace {

struct ConvGeom {
    int ih, iw, ci;
    int oh, ow, co;
    int kh, kw, stride;
    int pad_top, pad_left;
};

ConvGeom conv_geom(const Shape& in, const Shape& out, const Shape& w, int stride,
                   Padding padding, bool depthwise) {
    ConvGeom g{};
    g.ih = in[1];
    g.iw = in[2];
    g.ci = in[3];
    g.oh = out[1];
    g.ow = out[2];
    g.co = out[3];
    g.kh = w[1];
    g.kw = w[2];
    g.stride = stride;
    if (padding == Padding::Same) {
        // Extra padding cell goes to the bottom/right.
        int ph = std::max((g.oh - 1) * stride + g.kh - g.ih, 0);
        int pw = std::max((g.ow - 1) * stride + g.kw - g.iw, 0);
        g.pad_top = ph / 2;
        g.pad_left = pw / 2;
    }
    (void)depthwise;
    return g;
}

// Fixed summation order ky, kx, ci; one worker owns each output channel, so
// the result does not depend on the thread count.
void conv2d_f32(const ConvGeom& g, std::span<const float> x, std::span<const float> w,
                std::span<const float> bias, std::span<float> out, WorkerPool& pool) {
    parallel_chunks(pool, g.co, [&](int64_t ob, int64_t oe) {
        for (int64_t o = ob; o < oe; ++o) {
            const float b = bias.empty() ? 0.0f : bias[static_cast<size_t>(o)];
            const float* wo = w.data() + o * g.kh * g.kw * g.ci;
            for (int h = 0; h < g.oh; ++h) {
                const int y0 = h * g.stride - g.pad_top;
                for (int v = 0; v < g.ow; ++v) {
                    const int x0 = v * g.stride - g.pad_left;
                    float acc = 0.0f;
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= g.ih) continue;
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const int xx = x0 + kx;
                            if (xx < 0 || xx >= g.iw) continue;
                            const float* xp = x.data() + (static_cast<int64_t>(y) * g.iw + xx) * g.ci;
                            const float* wp = wo + (static_cast<int64_t>(ky) * g.kw + kx) * g.ci;
                            for (int c = 0; c < g.ci; ++c) acc += xp[c] * wp[c];
                        }
                    }
                    out[(static_cast<int64_t>(h) * g.ow + v) * g.co + o] = acc + b;
                }
            }
        }
    });
}

void depthwise_f32(const ConvGeom& g, std::span<const float> x, std::span<const float> w,
                   std::span<const float> bias, std::span<float> out, WorkerPool& pool) {
    parallel_chunks(pool, g.co, [&](int64_t cb, int64_t ce) {
        for (int64_t c = cb; c < ce; ++c) {
            const float b = bias.empty() ? 0.0f : bias[static_cast<size_t>(c)];
            for (int h = 0; h < g.oh; ++h) {
                const int y0 = h * g.stride - g.pad_top;
                for (int v = 0; v < g.ow; ++v) {
                    const int x0 = v * g.stride - g.pad_left;
                    float acc = 0.0f;
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= g.ih) continue;
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const int xx = x0 + kx;
                            if (xx < 0 || xx >= g.iw) continue;
                            acc += x[(static_cast<int64_t>(y) * g.iw + xx) * g.ci + c] *
                                   w[(static_cast<int64_t>(ky) * g.kw + kx) * g.ci + c];
                        }
                    }
                    out[(static_cast<int64_t>(h) * g.ow + v) * g.co + c] = acc + b;
                }
            }
        }
    });
}

void fully_connected_f32(std::span<const float> x, std::span<const float> w, int64_t in_n,
                         std::span<const float> bias, std::span<float> out, WorkerPool& pool) {
    parallel_chunks(pool, static_cast<int64_t>(out.size()), [&](int64_t ob, int64_t oe) {
        for (int64_t o = ob; o < oe; ++o) {
            const float* wp = w.data() + o * in_n;
            float acc = 0.0f;
            for (int64_t i = 0; i < in_n; ++i) acc += x[static_cast<size_t>(i)] * wp[i];
            out[static_cast<size_t>(o)] = acc + (bias.empty() ? 0.0f : bias[static_cast<size_t>(o)]);
        }
    });
}

void softmax_f32(std::span<const float> x, std::span<float> out) {
    float m = x[0];
    for (float v : x) m = std::max(m, v);
    float sum = 0.0f;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
}

int8_t requant(double value, const QuantParams& q) {
    long long v = round_half_away(value) + q.zero_point;
    return static_cast<int8_t>(std::clamp<long long>(v, -128, 127));
}

// int8 dot product, exact in int32. Integer addition is associative, so the
// SIMD lane regrouping cannot change the result.
int32_t dot_i8(const int8_t* x, const int8_t* w, int64_t n) {
    int32_t sum = 0;
    int64_t i = 0;
#if defined(__SSE2__)
    if (n >= 16) {
        const __m128i zero = _mm_setzero_si128();
        __m128i acc = _mm_setzero_si128();
        for (; i + 16 <= n; i += 16) {
            __m128i xv = _mm_loadu_si128(reinterpret_cast<const __m128i*>(x + i));
            __m128i wv = _mm_loadu_si128(reinterpret_cast<const __m128i*>(w + i));
            __m128i xneg = _mm_cmpgt_epi8(zero, xv);
            __m128i wneg = _mm_cmpgt_epi8(zero, wv);
            __m128i xlo = _mm_unpacklo_epi8(xv, xneg);
            __m128i wlo = _mm_unpacklo_epi8(wv, wneg);
            __m128i xhi = _mm_unpackhi_epi8(xv, xneg);
            __m128i whi = _mm_unpackhi_epi8(wv, wneg);
            acc = _mm_add_epi32(acc, _mm_madd_epi16(xlo, wlo));
            acc = _mm_add_epi32(acc, _mm_madd_epi16(xhi, whi));
        }
        acc = _mm_add_epi32(acc, _mm_shuffle_epi32(acc, _MM_SHUFFLE(1, 0, 3, 2)));
        acc = _mm_add_epi32(acc, _mm_shuffle_epi32(acc, _MM_SHUFFLE(2, 3, 0, 1)));
        sum = _mm_cvtsi128_si32(acc);
    }
#endif
    for (; i < n; ++i)
        sum += static_cast<int32_t>(x[i]) * static_cast<int32_t>(w[i]);
    return sum;
}

// wsum holds per-(o, ky, kx) channel sums of the weights, so the input
// zero-point correction moves out of the dot product:
//   sum (x - zx) * w  =  sum x * w  -  zx * sum w   (over the valid window)
void conv2d_i8(const ConvGeom& g, std::span<const int8_t> x, const QuantParams& qx,
               std::span<const int8_t> w, const Tensor& wt, std::span<const int32_t> wsum,
               std::span<const int32_t> bias, const QuantParams& qo, std::span<int8_t> out,
               WorkerPool& pool) {
    parallel_chunks(pool, g.co, [&](int64_t ob, int64_t oe) {
        for (int64_t o = ob; o < oe; ++o) {
            const double mult = static_cast<double>(qx.scale) * wt.scale_for_channel(o) / qo.scale;
            const int32_t binit = bias.empty() ? 0 : bias[static_cast<size_t>(o)];
            const int32_t zx = qx.zero_point;
            const int8_t* wo = w.data() + o * g.kh * g.kw * g.ci;
            const int32_t* wso = wsum.data() + o * g.kh * g.kw;
            for (int h = 0; h < g.oh; ++h) {
                const int y0 = h * g.stride - g.pad_top;
                for (int v = 0; v < g.ow; ++v) {
                    const int x0 = v * g.stride - g.pad_left;
                    int32_t acc = binit;
                    int32_t corr = 0;
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= g.ih) continue;
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const int xx = x0 + kx;
                            if (xx < 0 || xx >= g.iw) continue;
                            const int8_t* xp = x.data() + (static_cast<int64_t>(y) * g.iw + xx) * g.ci;
                            const int8_t* wp = wo + (static_cast<int64_t>(ky) * g.kw + kx) * g.ci;
                            acc += dot_i8(xp, wp, g.ci);
                            corr += wso[ky * g.kw + kx];
                        }
                    }
                    acc -= zx * corr;
                    out[(static_cast<int64_t>(h) * g.ow + v) * g.co + o] =
                        requant(acc * mult, qo);
                }
            }
        }
    });
}

// Channels sit contiguously in NHWC, so each worker accumulates its channel
// range lane-wise per kernel tap. Per-channel sums never mix, which keeps
// the per-element result independent of the partition.
void depthwise_i8(const ConvGeom& g, std::span<const int8_t> x, const QuantParams& qx,
                  std::span<const int8_t> w, std::span<const double> mult,
                  std::span<const int32_t> bias, const QuantParams& qo, std::span<int8_t> out,
                  std::span<std::vector<int32_t>> scratch, WorkerPool& pool) {
    const int64_t chunk = (g.co + pool.threads() - 1) / pool.threads();
    pool.run([&](int worker) {
        const int64_t cb = worker * chunk;
        const int64_t ce = std::min<int64_t>(g.co, cb + chunk);
        if (cb >= ce) return;
        const int64_t span = ce - cb;
        int32_t* acc = scratch[static_cast<size_t>(worker)].data();
        const int zx = qx.zero_point;

        for (int h = 0; h < g.oh; ++h) {
            const int y0 = h * g.stride - g.pad_top;
            for (int v = 0; v < g.ow; ++v) {
                const int x0 = v * g.stride - g.pad_left;
                for (int64_t i = 0; i < span; ++i)
                    acc[i] = bias.empty() ? 0 : bias[static_cast<size_t>(cb + i)];
                for (int ky = 0; ky < g.kh; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= g.ih) continue;
                    for (int kx = 0; kx < g.kw; ++kx) {
                        const int xx = x0 + kx;
                        if (xx < 0 || xx >= g.iw) continue;
                        const int8_t* xp =
                            x.data() + (static_cast<int64_t>(y) * g.iw + xx) * g.ci + cb;
                        const int8_t* wp =
                            w.data() + (static_cast<int64_t>(ky) * g.kw + kx) * g.ci + cb;
                        for (int64_t i = 0; i < span; ++i)
                            acc[i] += (static_cast<int32_t>(xp[i]) - zx) *
                                      static_cast<int32_t>(wp[i]);
                    }
                }
                int8_t* op = out.data() + (static_cast<int64_t>(h) * g.ow + v) * g.co + cb;
                for (int64_t i = 0; i < span; ++i)
                    op[i] = requant(acc[i] * mult[static_cast<size_t>(cb + i)], qo);
            }
        }
    });
}

void fully_connected_i8(std::span<const int8_t> x, const QuantParams& qx,
                        std::span<const int8_t> w, const Tensor& wt, int64_t in_n,
                        std::span<const int32_t> wsum, std::span<const int32_t> bias,
                        const QuantParams& qo, std::span<int8_t> out, WorkerPool& pool) {
    parallel_chunks(pool, static_cast<int64_t>(out.size()), [&](int64_t ob, int64_t oe) {
        for (int64_t o = ob; o < oe; ++o) {
            const double mult = static_cast<double>(qx.scale) * wt.scale_for_channel(o) / qo.scale;
            const int8_t* wp = w.data() + o * in_n;
            int32_t acc = bias.empty() ? 0 : bias[static_cast<size_t>(o)];
            acc += dot_i8(x.data(), wp, in_n);
            acc -= qx.zero_point * wsum[static_cast<size_t>(o)];
            out[static_cast<size_t>(o)] = requant(acc * mult, qo);
        }
    });
}

} // namespace

Executor::Executor(const Model& model, int thread_count)
    : model_(model), shapes_(infer_shapes(model.graph)), pool_(thread_count) {
    if (thread_count < 1) throw Error("thread_count must be positive");
    quantized_ = model.quantized();

    int64_t softmax_elems = 0;
    for (const auto& n : model_.graph.nodes) {
        const int64_t elems = shapes_.at(n.id).elems();
        if (quantized_) {
            if (n.parameterized()) {
                const Tensor& w = model_.graph.weights.at(n.weights);
                if (w.dtype() != DType::I8)
                    throw Error("node '" + n.id + "': quantized graph has non-int8 weights");
                if (!n.bias.empty() &&
                    model_.graph.weights.at(n.bias).dtype() != DType::I32)
                    throw Error("node '" + n.id + "': quantized graph requires int32 bias");
            }
            if (n.kind == NodeKind::Softmax) {
                if (n.id != model_.graph.output)
                    throw Error("Softmax must be the output node of a quantized graph");
                fbuf_[n.id] = std::vector<float>(static_cast<size_t>(elems), 0.0f);
                softmax_elems = std::max(softmax_elems, elems);
            } else {
                qbuf_[n.id] = std::vector<int8_t>(static_cast<size_t>(elems), 0);
            }
        } else {
            if (n.parameterized() &&
                model_.graph.weights.at(n.weights).dtype() != DType::F32)
                throw Error("node '" + n.id + "': float graph has non-float weights");
            fbuf_[n.id] = std::vector<float>(static_cast<size_t>(elems), 0.0f);
        }
    }

    if (quantized_) {
        qbuf_[kGraphInput] =
            std::vector<int8_t>(static_cast<size_t>(model_.graph.input_shape.elems()), 0);
        softmax_scratch_.resize(static_cast<size_t>(softmax_elems), 0.0f);
        int64_t max_dw_channels = 0;
        // Every edge needs calibrated params before the first run.
        auto require = [&](const std::string& edge) -> const QuantParams& {
            auto it = model_.activation_quant.find(edge);
            if (it == model_.activation_quant.end())
                throw Error("missing activation quant params for edge '" + edge + "'");
            return it->second;
        };
        require(kGraphInput);
        for (const auto& n : model_.graph.nodes) {
            if (n.kind != NodeKind::Softmax) require(n.id);

            if (n.kind == NodeKind::Conv2D || n.kind == NodeKind::FullyConnected) {
                const Tensor& w = model_.graph.weights.at(n.weights);
                auto wd = w.i8();
                const bool fc = n.kind == NodeKind::FullyConnected;
                const int64_t groups = fc ? w.shape().elems() / w.shape()[1]
                                          : static_cast<int64_t>(w.shape()[0]) * w.shape()[1] *
                                                w.shape()[2];
                const int64_t inner = fc ? w.shape()[1] : w.shape()[3];
                std::vector<int32_t> sums(static_cast<size_t>(groups), 0);
                for (int64_t gidx = 0; gidx < groups; ++gidx) {
                    int32_t s = 0;
                    for (int64_t c = 0; c < inner; ++c)
                        s += wd[static_cast<size_t>(gidx * inner + c)];
                    sums[static_cast<size_t>(gidx)] = s;
                }
                wsums_[n.id] = std::move(sums);
            }
            if (n.kind == NodeKind::DepthwiseConv2D) {
                const Tensor& w = model_.graph.weights.at(n.weights);
                const QuantParams qin = require(n.inputs[0]);
                const QuantParams qo = require(n.id);
                const int64_t channels = w.shape()[3];
                std::vector<double> mult(static_cast<size_t>(channels));
                for (int64_t c = 0; c < channels; ++c)
                    mult[static_cast<size_t>(c)] = static_cast<double>(qin.scale) *
                                                   w.scale_for_channel(c) / qo.scale;
                dw_mult_[n.id] = std::move(mult);
                max_dw_channels = std::max(max_dw_channels, channels);
            }
            if (n.kind == NodeKind::ReLU6) {
                const QuantParams qin = require(n.inputs[0]);
                const QuantParams qo = require(n.id);
                std::array<int8_t, 256>& lut = relu_lut_[n.id];
                for (int q = -128; q <= 127; ++q) {
                    float v = dequantize(static_cast<int8_t>(q), qin);
                    lut[static_cast<size_t>(q + 128)] =
                        quantize(std::min(std::max(v, 0.0f), 6.0f), qo);
                }
            }
        }
        // accumulator row per worker, sized by the widest depthwise layer
        dw_scratch_.assign(static_cast<size_t>(pool_.threads()),
                           std::vector<int32_t>(static_cast<size_t>(max_dw_channels), 0));
    }
}

Tensor Executor::infer(const Tensor& input) { return run(input, nullptr); }

Tensor Executor::infer_recording(const Tensor& input, RangeMap& ranges) {
    if (quantized_) throw Error("calibration recording requires the float path");
    return run(input, &ranges);
}

Tensor Executor::run(const Tensor& input, RangeMap* ranges) {
    if (input.dtype() != DType::F32)
        throw Error("inference input must be F32");
    if (input.shape() != model_.graph.input_shape)
        throw Error("input shape " + input.shape().str() + " does not match graph input " +
                    model_.graph.input_shape.str());

    if (quantized_)
        run_int8(input);
    else
        run_float(input, ranges);

    const std::string& out_id = model_.graph.output;
    Tensor out = Tensor::zeros_f32(shapes_.at(out_id));
    if (!quantized_ || fbuf_.contains(out_id)) {
        const auto& src = fbuf_.at(out_id);
        std::copy(src.begin(), src.end(), out.f32().begin());
    } else {
        const auto& src = qbuf_.at(out_id);
        const QuantParams q = model_.activation_quant.at(out_id);
        auto dst = out.f32();
        for (size_t i = 0; i < src.size(); ++i) dst[i] = dequantize(src[i], q);
    }
    return out;
}

void Executor::run_float(const Tensor& input, RangeMap* ranges) {
    auto record = [&](const std::string& edge, std::span<const float> vals) {
        if (!ranges) return;
        MinMax& r = (*ranges)[edge];
        for (float v : vals) r.update(v);
    };
    record(kGraphInput, input.f32());

    auto edge_data = [&](const std::string& edge) -> std::span<const float> {
        if (edge == kGraphInput) return input.f32();
        return fbuf_.at(edge);
    };

    for (const auto& n : model_.graph.nodes) {
        const Shape& out_shape = shapes_.at(n.id);
        std::span<float> out = fbuf_.at(n.id);
        std::span<const float> in0 = edge_data(n.inputs[0]);
        const Shape& in_shape = shapes_.at(n.inputs[0]);

        switch (n.kind) {
            case NodeKind::Conv2D: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const float> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).f32();
                ConvGeom g = conv_geom(in_shape, out_shape, w.shape(), n.stride, n.padding, false);
                conv2d_f32(g, in0, w.f32(), bias, out, pool_);
                break;
            }
            case NodeKind::DepthwiseConv2D: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const float> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).f32();
                ConvGeom g = conv_geom(in_shape, out_shape, w.shape(), n.stride, n.padding, true);
                depthwise_f32(g, in0, w.f32(), bias, out, pool_);
                break;
            }
            case NodeKind::FullyConnected: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const float> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).f32();
                fully_connected_f32(in0, w.f32(), w.shape()[1], bias, out, pool_);
                break;
            }
            case NodeKind::ReLU6:
                parallel_chunks(pool_, static_cast<int64_t>(out.size()), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i)
                        out[static_cast<size_t>(i)] =
                            std::min(std::max(in0[static_cast<size_t>(i)], 0.0f), 6.0f);
                });
                break;
            case NodeKind::Add: {
                std::span<const float> in1 = edge_data(n.inputs[1]);
                parallel_chunks(pool_, static_cast<int64_t>(out.size()), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i)
                        out[static_cast<size_t>(i)] =
                            in0[static_cast<size_t>(i)] + in1[static_cast<size_t>(i)];
                });
                break;
            }
            case NodeKind::GlobalAvgPool: {
                const int64_t hw = static_cast<int64_t>(in_shape[1]) * in_shape[2];
                const int64_t c = in_shape[3];
                parallel_chunks(pool_, c, [&](int64_t cb, int64_t ce) {
                    for (int64_t ch = cb; ch < ce; ++ch) {
                        float acc = 0.0f;
                        for (int64_t i = 0; i < hw; ++i) acc += in0[static_cast<size_t>(i * c + ch)];
                        out[static_cast<size_t>(ch)] = acc / static_cast<float>(hw);
                    }
                });
                break;
            }
            case NodeKind::Softmax:
                softmax_f32(in0, out);
                break;
        }
        record(n.id, out);
    }
}

void Executor::run_int8(const Tensor& input) {
    const auto& aq = model_.activation_quant;

    {
        const QuantParams q = aq.at(kGraphInput);
        std::span<const float> x = input.f32();
        std::span<int8_t> dst = qbuf_.at(kGraphInput);
        parallel_chunks(pool_, static_cast<int64_t>(x.size()), [&](int64_t b, int64_t e) {
            for (int64_t i = b; i < e; ++i)
                dst[static_cast<size_t>(i)] = quantize(x[static_cast<size_t>(i)], q);
        });
    }

    for (const auto& n : model_.graph.nodes) {
        const Shape& out_shape = shapes_.at(n.id);
        const Shape& in_shape = shapes_.at(n.inputs[0]);
        std::span<const int8_t> in0 = qbuf_.at(n.inputs[0]);
        const QuantParams qin = aq.at(n.inputs[0]);

        switch (n.kind) {
            case NodeKind::Conv2D: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const int32_t> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).i32();
                ConvGeom g = conv_geom(in_shape, out_shape, w.shape(), n.stride, n.padding, false);
                conv2d_i8(g, in0, qin, w.i8(), w, wsums_.at(n.id), bias, aq.at(n.id),
                          qbuf_.at(n.id), pool_);
                break;
            }
            case NodeKind::DepthwiseConv2D: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const int32_t> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).i32();
                ConvGeom g = conv_geom(in_shape, out_shape, w.shape(), n.stride, n.padding, true);
                depthwise_i8(g, in0, qin, w.i8(), dw_mult_.at(n.id), bias, aq.at(n.id),
                             qbuf_.at(n.id), dw_scratch_, pool_);
                break;
            }
            case NodeKind::FullyConnected: {
                const Tensor& w = model_.graph.weights.at(n.weights);
                std::span<const int32_t> bias;
                if (!n.bias.empty()) bias = model_.graph.weights.at(n.bias).i32();
                fully_connected_i8(in0, qin, w.i8(), w, w.shape()[1], wsums_.at(n.id), bias,
                                   aq.at(n.id), qbuf_.at(n.id), pool_);
                break;
            }
            case NodeKind::ReLU6: {
                const std::array<int8_t, 256>& lut = relu_lut_.at(n.id);
                std::span<int8_t> out = qbuf_.at(n.id);
                parallel_chunks(pool_, static_cast<int64_t>(out.size()), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i)
                        out[static_cast<size_t>(i)] =
                            lut[static_cast<size_t>(in0[static_cast<size_t>(i)] + 128)];
                });
                break;
            }
            case NodeKind::Add: {
                std::span<const int8_t> in1 = qbuf_.at(n.inputs[1]);
                const QuantParams qb = aq.at(n.inputs[1]);
                const QuantParams qo = aq.at(n.id);
                std::span<int8_t> out = qbuf_.at(n.id);
                parallel_chunks(pool_, static_cast<int64_t>(out.size()), [&](int64_t b, int64_t e) {
                    for (int64_t i = b; i < e; ++i) {
                        float v = dequantize(in0[static_cast<size_t>(i)], qin) +
                                  dequantize(in1[static_cast<size_t>(i)], qb);
                        out[static_cast<size_t>(i)] = quantize(v, qo);
                    }
                });
                break;
            }
            case NodeKind::GlobalAvgPool: {
                const int64_t hw = static_cast<int64_t>(in_shape[1]) * in_shape[2];
                const int64_t c = in_shape[3];
                const QuantParams qo = aq.at(n.id);
                std::span<int8_t> out = qbuf_.at(n.id);
                parallel_chunks(pool_, c, [&](int64_t cb, int64_t ce) {
                    for (int64_t ch = cb; ch < ce; ++ch) {
                        int64_t acc = 0;
                        for (int64_t i = 0; i < hw; ++i)
                            acc += static_cast<int64_t>(in0[static_cast<size_t>(i * c + ch)]) -
                                   qin.zero_point;
                        double mean = static_cast<double>(qin.scale) * static_cast<double>(acc) /
                                      static_cast<double>(hw);
                        out[static_cast<size_t>(ch)] =
                            quantize(static_cast<float>(mean), qo);
                    }
                });
                break;
            }
            case NodeKind::Softmax: {
                std::span<float> logits(softmax_scratch_.data(), in0.size());
                for (size_t i = 0; i < in0.size(); ++i) logits[i] = dequantize(in0[i], qin);
                softmax_f32(logits, fbuf_.at(n.id));
                break;
            }
        }
    }
}

} // namespace emdl
