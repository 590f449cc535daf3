#pragma once

#include <cstdint>
#include <iosfwd>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace emdl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor shape. Activations are NHWC (N fixed at 1),
// regular conv weights OHWI, depthwise weights 1xHxWxC, fully-connected
// weights Out x In, biases rank-1.
struct Shape {
    std::vector<int> dims;

    Shape() = default;
    Shape(std::initializer_list<int> d) : dims(d) {}
    explicit Shape(std::vector<int> d) : dims(std::move(d)) {}

    int rank() const { return static_cast<int>(dims.size()); }
    int operator[](int i) const { return dims[static_cast<size_t>(i)]; }

    int64_t elems() const {
        int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }

    bool operator==(const Shape&) const = default;

    std::string str() const;
};

enum class DType : uint8_t { F32 = 0, I8 = 1, I32 = 2 };

inline size_t dtype_size(DType t) {
    switch (t) {
        case DType::F32: return 4;
        case DType::I8: return 1;
        case DType::I32: return 4;
    }
    return 0;
}

// Affine int8 quantization: real = scale * (q - zero_point).
struct QuantParams {
    float scale = 1.0f;
    int zero_point = 0;

    bool operator==(const QuantParams&) const = default;
};

// Symmetric per-channel quantization along `axis`; zero points are all 0.
struct PerChannelQuant {
    int axis = 0;
    std::vector<float> scales;

    bool operator==(const PerChannelQuant&) const = default;
};

using QuantInfo = std::variant<QuantParams, PerChannelQuant>;

// Exact round-half-away-from-zero for |v| < 2^52. The fraction v - trunc(v)
// is computed exactly in IEEE double, so this matches llround without the
// libm call that would dominate per-element requantization.
inline long long round_half_away(double v) {
    long long t = static_cast<long long>(v);
    double r = v - static_cast<double>(t);
    return t + (r >= 0.5) - (r <= -0.5);
}

// Rounds half away from zero, saturating to int8.
int8_t quantize(float x, const QuantParams& q);
float dequantize(int8_t v, const QuantParams& q);

// Calibration range -> affine parameters. The range is widened to include 0
// so zero activations and zero padding stay exactly representable.
QuantParams quant_params_from_range(float lo, float hi);

class Tensor {
public:
    Tensor() : data_(std::vector<float>{}) {}

    static Tensor zeros_f32(Shape shape);
    static Tensor from_f32(Shape shape, std::vector<float> values);
    static Tensor zeros_i8(Shape shape, QuantInfo quant);
    static Tensor zeros_i32(Shape shape);

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    int64_t elems() const { return shape_.elems(); }
    size_t payload_bytes() const { return static_cast<size_t>(elems()) * dtype_size(dtype_); }

    std::span<float> f32();
    std::span<const float> f32() const;
    std::span<int8_t> i8();
    std::span<const int8_t> i8() const;
    std::span<int32_t> i32();
    std::span<const int32_t> i32() const;

    const std::optional<QuantInfo>& quant() const { return quant_; }
    void set_quant(std::optional<QuantInfo> q);

    // Uniform access to the weight scale of channel c: per-channel scale
    // when present, otherwise the per-tensor scale.
    float scale_for_channel(int64_t c) const;

    bool operator==(const Tensor& other) const;

private:
    Shape shape_;
    DType dtype_ = DType::F32;
    std::variant<std::vector<float>, std::vector<int8_t>, std::vector<int32_t>> data_;
    std::optional<QuantInfo> quant_;
};

// RTEN raw tensor stream format (little-endian):
//   magic "RTEN", version u8=1, dtype u8 (0=F32, 1=I8), rank u8, pad u8=0,
//   dims u32 x rank, then for I8 only scale f32 + zero_point i32,
//   then the row-major payload.
// Per-channel quantized and I32 tensors are not representable in RTEN.
size_t write_raw_tensor(const Tensor& t, std::ostream& out);
Tensor read_raw_tensor(std::istream& in);

void write_rten_file(const Tensor& t, const std::string& path);
Tensor read_rten_file(const std::string& path);

} // namespace emdl
