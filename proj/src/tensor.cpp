#include "emdl/tensor.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace emdl {

std::string Shape::str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

int8_t quantize(float x, const QuantParams& q) {
    if (std::isnan(x)) return static_cast<int8_t>(q.zero_point);
    double scaled = static_cast<double>(x) / static_cast<double>(q.scale);
    long long v;
    if (scaled >= 4.0e9) {
        v = 127;
    } else if (scaled <= -4.0e9) {
        v = -128;
    } else {
        v = round_half_away(scaled) + q.zero_point;
    }
    return static_cast<int8_t>(std::clamp<long long>(v, -128, 127));
}

float dequantize(int8_t v, const QuantParams& q) {
    return q.scale * static_cast<float>(static_cast<int>(v) - q.zero_point);
}

QuantParams quant_params_from_range(float lo, float hi) {
    if (lo > hi) throw Error("quant_params_from_range: min > max");
    double lo2 = std::min(static_cast<double>(lo), 0.0);
    double hi2 = std::max(static_cast<double>(hi), 0.0);
    if (lo2 == 0.0 && hi2 == 0.0) return {1.0f, 0};
    double scale = (hi2 - lo2) / 255.0;
    // nearbyint (round half to even) so a symmetric range like [-1, 1]
    // lands on zero_point 0 rather than -1.
    double zp = std::nearbyint(-128.0 - lo2 / scale);
    int z = static_cast<int>(std::clamp(zp, -128.0, 127.0));
    return {static_cast<float>(scale), z};
}

static void check_positive_dims(const Shape& s) {
    for (int d : s.dims)
        if (d < 1) throw Error("tensor shape has non-positive dim " + s.str());
}

Tensor Tensor::zeros_f32(Shape shape) {
    check_positive_dims(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::F32;
    t.data_ = std::vector<float>(static_cast<size_t>(t.shape_.elems()), 0.0f);
    return t;
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
    check_positive_dims(shape);
    if (static_cast<int64_t>(values.size()) != shape.elems())
        throw Error("payload length " + std::to_string(values.size()) +
                    " does not match shape " + shape.str());
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::F32;
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::zeros_i8(Shape shape, QuantInfo quant) {
    check_positive_dims(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::I8;
    t.data_ = std::vector<int8_t>(static_cast<size_t>(t.shape_.elems()), 0);
    t.quant_ = std::move(quant);
    t.set_quant(t.quant_);
    return t;
}

Tensor Tensor::zeros_i32(Shape shape) {
    check_positive_dims(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::I32;
    t.data_ = std::vector<int32_t>(static_cast<size_t>(t.shape_.elems()), 0);
    return t;
}

void Tensor::set_quant(std::optional<QuantInfo> q) {
    if (dtype_ == DType::I8 && !q.has_value())
        throw Error("int8 tensor requires quantization parameters");
    if (dtype_ != DType::I8 && q.has_value())
        throw Error("only int8 tensors carry quantization parameters");
    if (q && std::holds_alternative<PerChannelQuant>(*q)) {
        const auto& pc = std::get<PerChannelQuant>(*q);
        if (pc.axis < 0 || pc.axis >= shape_.rank())
            throw Error("per-channel quant axis out of range");
        if (static_cast<int>(pc.scales.size()) != shape_[pc.axis])
            throw Error("per-channel scale count does not match axis size");
        for (float s : pc.scales)
            if (!(s > 0.0f)) throw Error("per-channel scale must be positive");
    }
    if (q && std::holds_alternative<QuantParams>(*q)) {
        const auto& p = std::get<QuantParams>(*q);
        if (!(p.scale > 0.0f)) throw Error("quant scale must be positive");
        if (p.zero_point < -128 || p.zero_point > 127)
            throw Error("zero_point outside int8 range");
    }
    quant_ = std::move(q);
}

std::span<float> Tensor::f32() {
    if (dtype_ != DType::F32) throw Error("tensor is not F32");
    return std::get<std::vector<float>>(data_);
}
std::span<const float> Tensor::f32() const {
    if (dtype_ != DType::F32) throw Error("tensor is not F32");
    return std::get<std::vector<float>>(data_);
}
std::span<int8_t> Tensor::i8() {
    if (dtype_ != DType::I8) throw Error("tensor is not I8");
    return std::get<std::vector<int8_t>>(data_);
}
std::span<const int8_t> Tensor::i8() const {
    if (dtype_ != DType::I8) throw Error("tensor is not I8");
    return std::get<std::vector<int8_t>>(data_);
}
std::span<int32_t> Tensor::i32() {
    if (dtype_ != DType::I32) throw Error("tensor is not I32");
    return std::get<std::vector<int32_t>>(data_);
}
std::span<const int32_t> Tensor::i32() const {
    if (dtype_ != DType::I32) throw Error("tensor is not I32");
    return std::get<std::vector<int32_t>>(data_);
}

float Tensor::scale_for_channel(int64_t c) const {
    if (!quant_) throw Error("tensor has no quantization parameters");
    if (std::holds_alternative<PerChannelQuant>(*quant_))
        return std::get<PerChannelQuant>(*quant_).scales[static_cast<size_t>(c)];
    return std::get<QuantParams>(*quant_).scale;
}

bool Tensor::operator==(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
    if (quant_.has_value() != other.quant_.has_value()) return false;
    if (quant_ && *quant_ != *other.quant_) return false;
    return data_ == other.data_;
}

namespace {

void put_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& out, uint8_t v) { put_bytes(out, &v, 1); }

void put_u32(std::ostream& out, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    put_bytes(out, b, 4);
}

void put_i32(std::ostream& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_f32(std::ostream& out, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(out, u);
}

void get_bytes(std::istream& in, void* p, size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw Error(std::string("truncated RTEN stream while reading ") + what);
}

uint8_t get_u8(std::istream& in, const char* what) {
    uint8_t v;
    get_bytes(in, &v, 1, what);
    return v;
}

uint32_t get_u32(std::istream& in, const char* what) {
    uint8_t b[4];
    get_bytes(in, b, 4, what);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

float get_f32(std::istream& in, const char* what) {
    uint32_t u = get_u32(in, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

} // namespace

size_t write_raw_tensor(const Tensor& t, std::ostream& out) {
    if (t.dtype() == DType::I32)
        throw Error("RTEN format does not support I32 tensors");
    if (t.dtype() == DType::I8 && !std::holds_alternative<QuantParams>(*t.quant()))
        throw Error("RTEN format carries per-tensor quant params only");

    size_t bytes = 0;
    put_bytes(out, "RTEN", 4);
    put_u8(out, 1);
    put_u8(out, t.dtype() == DType::F32 ? 0 : 1);
    put_u8(out, static_cast<uint8_t>(t.shape().rank()));
    put_u8(out, 0);
    bytes += 8;
    for (int d : t.shape().dims) {
        put_u32(out, static_cast<uint32_t>(d));
        bytes += 4;
    }
    if (t.dtype() == DType::I8) {
        const auto& q = std::get<QuantParams>(*t.quant());
        put_f32(out, q.scale);
        put_i32(out, q.zero_point);
        bytes += 8;
        put_bytes(out, t.i8().data(), t.payload_bytes());
    } else {
        for (float v : t.f32()) put_f32(out, v);
    }
    bytes += t.payload_bytes();
    if (!out) throw Error("RTEN write failed");
    return bytes;
}

Tensor read_raw_tensor(std::istream& in) {
    char magic[4];
    get_bytes(in, magic, 4, "magic");
    if (std::memcmp(magic, "RTEN", 4) != 0) throw Error("bad RTEN magic");
    uint8_t version = get_u8(in, "version");
    if (version != 1) throw Error("unsupported RTEN version " + std::to_string(version));
    uint8_t dtype = get_u8(in, "dtype");
    if (dtype > 1) throw Error("unknown RTEN dtype " + std::to_string(dtype));
    uint8_t rank = get_u8(in, "rank");
    uint8_t pad = get_u8(in, "pad");
    if (pad != 0) throw Error("nonzero RTEN pad byte");

    Shape shape;
    for (int i = 0; i < rank; ++i) {
        uint32_t d = get_u32(in, "dims");
        if (d == 0 || d > (1u << 30)) throw Error("invalid RTEN dim");
        shape.dims.push_back(static_cast<int>(d));
    }

    if (dtype == 1) {
        float scale = get_f32(in, "scale");
        int32_t zp = static_cast<int32_t>(get_u32(in, "zero_point"));
        if (!(scale > 0.0f)) throw Error("RTEN scale must be positive");
        if (zp < -128 || zp > 127) throw Error("RTEN zero_point outside int8 range");
        Tensor t = Tensor::zeros_i8(shape, QuantParams{scale, zp});
        get_bytes(in, t.i8().data(), t.payload_bytes(), "payload");
        return t;
    }
    Tensor t = Tensor::zeros_f32(shape);
    for (auto& v : t.f32()) v = get_f32(in, "payload");
    return t;
}

void write_rten_file(const Tensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    write_raw_tensor(t, out);
}

Tensor read_rten_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    Tensor t = read_raw_tensor(in);
    in.peek();
    if (!in.eof()) throw Error("trailing bytes after tensor in " + path);
    return t;
}

} // namespace emdl
