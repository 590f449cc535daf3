#include "emdl/model_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace emdl {

using nlohmann::json;

namespace {

constexpr size_t kBlobAlign = 64;

size_t align_up(size_t v, size_t a) { return (v + a - 1) / a * a; }

struct CodebookLayout {
    std::vector<float> entries; // stored codebook, zero slot last when present
    bool zero_slot = false;
    std::vector<uint32_t> indices;
};

// Stored codebook = k-means centroids plus, when pruned zeros survive, one
// trailing exact-zero slot the exempt positions point at.
CodebookLayout codebook_layout(const Tensor& t, const Codebook& cb) {
    CodebookLayout out;
    out.entries = cb.centroids;
    bool any_exempt = false;
    for (uint32_t a : cb.assignment)
        if (a == kExemptZero) any_exempt = true;
    if (any_exempt) {
        out.entries.push_back(0.0f);
        out.zero_slot = true;
    }
    out.indices.resize(cb.assignment.size());
    const uint32_t zero_index = static_cast<uint32_t>(out.entries.size()) - 1;
    for (size_t i = 0; i < cb.assignment.size(); ++i) {
        uint32_t a = cb.assignment[i];
        if (a == kExemptZero) {
            out.indices[i] = zero_index;
        } else {
            if (a >= cb.centroids.size())
                throw Error("codebook assignment out of range for tensor");
            out.indices[i] = a;
        }
    }
    (void)t;
    return out;
}

int64_t stored_codebook_len(const Model& m, const std::string& name) {
    const Codebook& cb = m.codebooks.at(name);
    bool any_exempt = false;
    for (uint32_t a : cb.assignment)
        if (a == kExemptZero) any_exempt = true;
    return static_cast<int64_t>(cb.centroids.size()) + (any_exempt ? 1 : 0);
}

} // namespace

const char* encoding_name(WeightEncoding e) {
    switch (e) {
        case WeightEncoding::F32: return "F32";
        case WeightEncoding::Q8: return "Q8";
        case WeightEncoding::CL8: return "CL8";
        case WeightEncoding::CL4: return "CL4";
        case WeightEncoding::CLQ8: return "CLQ8";
        case WeightEncoding::I32: return "I32";
    }
    return "?";
}

static WeightEncoding encoding_from_name(const std::string& s) {
    if (s == "F32") return WeightEncoding::F32;
    if (s == "Q8") return WeightEncoding::Q8;
    if (s == "CL8") return WeightEncoding::CL8;
    if (s == "CL4") return WeightEncoding::CL4;
    if (s == "CLQ8") return WeightEncoding::CLQ8;
    if (s == "I32") return WeightEncoding::I32;
    throw Error("unknown weight encoding '" + s + "'");
}

WeightEncoding choose_encoding(const Model& m, const std::string& name) {
    const Tensor& t = m.graph.weights.at(name);
    const bool clustered = m.codebooks.contains(name);
    switch (t.dtype()) {
        case DType::F32:
            if (clustered) {
                int64_t len = stored_codebook_len(m, name);
                if (len <= 16) return WeightEncoding::CL4;
                if (len <= 256) return WeightEncoding::CL8;
                return WeightEncoding::F32;
            }
            return WeightEncoding::F32;
        case DType::I8:
            if (clustered && stored_codebook_len(m, name) <= 256) return WeightEncoding::CLQ8;
            return WeightEncoding::Q8;
        case DType::I32:
            return WeightEncoding::I32;
    }
    return WeightEncoding::F32;
}

static int64_t encoded_bytes_for(const Model& m, const std::string& name, WeightEncoding e) {
    const Tensor& t = m.graph.weights.at(name);
    const int64_t n = t.elems();
    switch (e) {
        case WeightEncoding::F32: return 4 * n;
        case WeightEncoding::Q8: {
            int64_t c = 1;
            if (std::holds_alternative<PerChannelQuant>(*t.quant()))
                c = static_cast<int64_t>(std::get<PerChannelQuant>(*t.quant()).scales.size());
            return 4 * c + n;
        }
        case WeightEncoding::CL8: return 4 * stored_codebook_len(m, name) + n;
        case WeightEncoding::CL4: return 4 * stored_codebook_len(m, name) + (n + 1) / 2;
        case WeightEncoding::CLQ8: return 4 + stored_codebook_len(m, name) + n;
        case WeightEncoding::I32: return 4 * n;
    }
    return 0;
}

EncodedSize encoded_size(const Model& m) {
    EncodedSize out;
    for (const auto& [name, t] : m.graph.weights) {
        (void)t;
        WeightEncoding e = choose_encoding(m, name);
        int64_t bytes = encoded_bytes_for(m, name, e);
        out.tensors.push_back({name, e, bytes});
        out.per_encoding[encoding_name(e)] += bytes;
        out.total += bytes;
    }
    return out;
}

namespace {

void append_f32(std::vector<uint8_t>& v, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    v.push_back(static_cast<uint8_t>(u));
    v.push_back(static_cast<uint8_t>(u >> 8));
    v.push_back(static_cast<uint8_t>(u >> 16));
    v.push_back(static_cast<uint8_t>(u >> 24));
}

void append_i32(std::vector<uint8_t>& v, int32_t i) {
    uint32_t u = static_cast<uint32_t>(i);
    v.push_back(static_cast<uint8_t>(u));
    v.push_back(static_cast<uint8_t>(u >> 8));
    v.push_back(static_cast<uint8_t>(u >> 16));
    v.push_back(static_cast<uint8_t>(u >> 24));
}

float read_f32(const uint8_t* p) {
    uint32_t u = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                 static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

int32_t read_i32(const uint8_t* p) {
    return static_cast<int32_t>(static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                                static_cast<uint32_t>(p[2]) << 16 |
                                static_cast<uint32_t>(p[3]) << 24);
}

std::vector<uint8_t> encode_blob(const Model& m, const std::string& name, WeightEncoding e,
                                 json& meta) {
    const Tensor& t = m.graph.weights.at(name);
    std::vector<uint8_t> blob;
    switch (e) {
        case WeightEncoding::F32:
            for (float v : t.f32()) append_f32(blob, v);
            break;
        case WeightEncoding::Q8: {
            if (std::holds_alternative<PerChannelQuant>(*t.quant())) {
                const auto& pc = std::get<PerChannelQuant>(*t.quant());
                meta["channel_axis"] = pc.axis;
                for (float s : pc.scales) append_f32(blob, s);
            } else {
                const auto& q = std::get<QuantParams>(*t.quant());
                if (q.zero_point != 0)
                    throw Error("Q8 weights must be symmetric (zero_point 0)");
                meta["channel_axis"] = -1;
                append_f32(blob, q.scale);
            }
            for (int8_t v : t.i8()) blob.push_back(static_cast<uint8_t>(v));
            break;
        }
        case WeightEncoding::CL8:
        case WeightEncoding::CL4: {
            CodebookLayout lay = codebook_layout(t, m.codebooks.at(name));
            meta["codebook_size"] = lay.entries.size();
            meta["zero_slot"] = lay.zero_slot;
            if (e == WeightEncoding::CL4 && lay.entries.size() > 16)
                throw Error("CL4 requires codebook length <= 16");
            if (lay.entries.size() > 256) throw Error("CL8 requires codebook length <= 256");
            for (float v : lay.entries) append_f32(blob, v);
            if (e == WeightEncoding::CL8) {
                for (uint32_t idx : lay.indices) blob.push_back(static_cast<uint8_t>(idx));
            } else {
                for (size_t i = 0; i < lay.indices.size(); i += 2) {
                    uint8_t lo = static_cast<uint8_t>(lay.indices[i] & 0xf);
                    uint8_t hi = i + 1 < lay.indices.size()
                                     ? static_cast<uint8_t>(lay.indices[i + 1] & 0xf)
                                     : 0;
                    blob.push_back(static_cast<uint8_t>(lo | hi << 4));
                }
            }
            break;
        }
        case WeightEncoding::CLQ8: {
            CodebookLayout lay = codebook_layout(t, m.codebooks.at(name));
            if (lay.entries.size() > 256) throw Error("CLQ8 requires codebook length <= 256");
            if (!std::holds_alternative<QuantParams>(*t.quant()))
                throw Error("CLQ8 tensor must carry a per-tensor scale");
            const auto& q = std::get<QuantParams>(*t.quant());
            meta["codebook_size"] = lay.entries.size();
            meta["zero_slot"] = lay.zero_slot;
            append_f32(blob, q.scale);
            for (float v : lay.entries)
                blob.push_back(static_cast<uint8_t>(quantize(v, q)));
            for (uint32_t idx : lay.indices) blob.push_back(static_cast<uint8_t>(idx));
            break;
        }
        case WeightEncoding::I32: {
            // Bias scale is input_scale * weight_scale per channel, derivable
            // from the header and the weight blob, so it is not stored.
            for (int32_t v : t.i32()) append_i32(blob, v);
            break;
        }
    }
    if (static_cast<int64_t>(blob.size()) != encoded_bytes_for(m, name, e))
        throw Error("internal: encoded blob size mismatch for '" + name + "'");
    return blob;
}

void decode_blob(Model& m, const std::string& name, WeightEncoding e, Shape shape,
                 const json& meta, const uint8_t* p, size_t len) {
    const int64_t n = shape.elems();
    auto need = [&](size_t want) {
        if (len != want)
            throw Error("tensor '" + name + "': blob length " + std::to_string(len) +
                        " does not match expected " + std::to_string(want));
    };
    switch (e) {
        case WeightEncoding::F32: {
            need(static_cast<size_t>(4 * n));
            Tensor t = Tensor::zeros_f32(shape);
            auto dst = t.f32();
            for (int64_t i = 0; i < n; ++i) dst[static_cast<size_t>(i)] = read_f32(p + 4 * i);
            m.graph.weights.emplace(name, std::move(t));
            break;
        }
        case WeightEncoding::Q8: {
            int axis = meta.at("channel_axis").get<int>();
            QuantInfo qi;
            size_t scale_bytes;
            if (axis < 0) {
                scale_bytes = 4;
                need(scale_bytes + static_cast<size_t>(n));
                qi = QuantParams{read_f32(p), 0};
            } else {
                if (axis >= shape.rank()) throw Error("tensor '" + name + "': bad channel_axis");
                size_t c = static_cast<size_t>(shape[axis]);
                scale_bytes = 4 * c;
                need(scale_bytes + static_cast<size_t>(n));
                PerChannelQuant pc;
                pc.axis = axis;
                pc.scales.resize(c);
                for (size_t i = 0; i < c; ++i) pc.scales[i] = read_f32(p + 4 * i);
                qi = std::move(pc);
            }
            Tensor t = Tensor::zeros_i8(shape, std::move(qi));
            auto dst = t.i8();
            const uint8_t* payload = p + scale_bytes;
            for (int64_t i = 0; i < n; ++i)
                dst[static_cast<size_t>(i)] = static_cast<int8_t>(payload[i]);
            m.graph.weights.emplace(name, std::move(t));
            break;
        }
        case WeightEncoding::CL8:
        case WeightEncoding::CL4: {
            size_t size = meta.at("codebook_size").get<size_t>();
            bool zero_slot = meta.at("zero_slot").get<bool>();
            if (size == 0 || size > 256 || (e == WeightEncoding::CL4 && size > 16))
                throw Error("tensor '" + name + "': invalid codebook size");
            size_t idx_bytes = e == WeightEncoding::CL8 ? static_cast<size_t>(n)
                                                        : static_cast<size_t>((n + 1) / 2);
            need(4 * size + idx_bytes);
            std::vector<float> entries(size);
            for (size_t i = 0; i < size; ++i) entries[i] = read_f32(p + 4 * i);
            const uint8_t* idx = p + 4 * size;

            Codebook cb;
            cb.preserved_zero = zero_slot;
            cb.centroids.assign(entries.begin(), entries.end() - (zero_slot ? 1 : 0));
            cb.assignment.resize(static_cast<size_t>(n));
            Tensor t = Tensor::zeros_f32(shape);
            auto dst = t.f32();
            for (int64_t i = 0; i < n; ++i) {
                uint32_t k = e == WeightEncoding::CL8
                                 ? idx[i]
                                 : static_cast<uint32_t>((idx[i / 2] >> (i % 2 ? 4 : 0)) & 0xf);
                if (k >= size) throw Error("tensor '" + name + "': codebook index out of range");
                dst[static_cast<size_t>(i)] = entries[k];
                cb.assignment[static_cast<size_t>(i)] =
                    zero_slot && k == size - 1 ? kExemptZero : k;
            }
            m.graph.weights.emplace(name, std::move(t));
            m.codebooks.emplace(name, std::move(cb));
            break;
        }
        case WeightEncoding::CLQ8: {
            size_t size = meta.at("codebook_size").get<size_t>();
            bool zero_slot = meta.at("zero_slot").get<bool>();
            if (size == 0 || size > 256)
                throw Error("tensor '" + name + "': invalid codebook size");
            need(4 + size + static_cast<size_t>(n));
            float scale = read_f32(p);
            if (!(scale > 0.0f)) throw Error("tensor '" + name + "': bad CLQ8 scale");
            const uint8_t* book = p + 4;
            const uint8_t* idx = book + size;
            QuantParams q{scale, 0};

            Codebook cb;
            cb.preserved_zero = zero_slot;
            for (size_t i = 0; i + (zero_slot ? 1u : 0u) < size; ++i)
                cb.centroids.push_back(dequantize(static_cast<int8_t>(book[i]), q));
            cb.assignment.resize(static_cast<size_t>(n));
            Tensor t = Tensor::zeros_i8(shape, q);
            auto dst = t.i8();
            for (int64_t i = 0; i < n; ++i) {
                uint32_t k = idx[i];
                if (k >= size) throw Error("tensor '" + name + "': codebook index out of range");
                dst[static_cast<size_t>(i)] = static_cast<int8_t>(book[k]);
                cb.assignment[static_cast<size_t>(i)] =
                    zero_slot && k == size - 1 ? kExemptZero : k;
            }
            m.graph.weights.emplace(name, std::move(t));
            m.codebooks.emplace(name, std::move(cb));
            break;
        }
        case WeightEncoding::I32: {
            need(static_cast<size_t>(4 * n));
            Tensor t = Tensor::zeros_i32(shape);
            auto dst = t.i32();
            for (int64_t i = 0; i < n; ++i)
                dst[static_cast<size_t>(i)] = read_i32(p + 4 * i);
            m.graph.weights.emplace(name, std::move(t));
            break;
        }
    }
}

json graph_to_json(const GraphSpec& g) {
    json jg;
    jg["input_shape"] = g.input_shape.dims;
    jg["output"] = g.output;
    json nodes = json::array();
    for (const auto& n : g.nodes) {
        json jn;
        jn["id"] = n.id;
        jn["kind"] = node_kind_name(n.kind);
        jn["inputs"] = n.inputs;
        if (n.kind == NodeKind::Conv2D || n.kind == NodeKind::DepthwiseConv2D) {
            jn["stride"] = n.stride;
            jn["padding"] = n.padding == Padding::Same ? "Same" : "Valid";
        }
        if (n.parameterized()) {
            jn["weights"] = n.weights;
            if (!n.bias.empty()) jn["bias"] = n.bias;
        }
        nodes.push_back(std::move(jn));
    }
    jg["nodes"] = std::move(nodes);
    return jg;
}

GraphSpec graph_from_json(const json& jg) {
    GraphSpec g;
    g.input_shape = Shape(jg.at("input_shape").get<std::vector<int>>());
    g.output = jg.at("output").get<std::string>();
    for (const auto& jn : jg.at("nodes")) {
        NodeSpec n;
        n.id = jn.at("id").get<std::string>();
        n.kind = node_kind_from_name(jn.at("kind").get<std::string>());
        n.inputs = jn.at("inputs").get<std::vector<std::string>>();
        if (jn.contains("stride")) n.stride = jn.at("stride").get<int>();
        if (jn.contains("padding")) {
            std::string p = jn.at("padding").get<std::string>();
            if (p == "Same")
                n.padding = Padding::Same;
            else if (p == "Valid")
                n.padding = Padding::Valid;
            else
                throw Error("node '" + n.id + "': unknown padding '" + p + "'");
        }
        if (jn.contains("weights")) n.weights = jn.at("weights").get<std::string>();
        if (jn.contains("bias")) n.bias = jn.at("bias").get<std::string>();
        g.nodes.push_back(std::move(n));
    }
    return g;
}

} // namespace

size_t save_model(const Model& m, std::ostream& out) {
    validate(m.graph);

    json header;
    header["name"] = m.name;
    if (!m.labels.empty()) header["labels"] = m.labels;
    header["graph"] = graph_to_json(m.graph);
    if (!m.activation_quant.empty()) {
        json q;
        for (const auto& [edge, qp] : m.activation_quant) {
            q[edge] = {{"scale", qp.scale}, {"zero_point", qp.zero_point}};
        }
        header["activation_quant"] = std::move(q);
    }

    // Blob offsets are relative to the blob section, which begins at the
    // first 64-byte boundary after the JSON header.
    std::vector<std::pair<std::string, std::vector<uint8_t>>> blobs;
    json tensors = json::array();
    size_t cursor = 0;
    for (const auto& [name, t] : m.graph.weights) {
        WeightEncoding e = choose_encoding(m, name);
        json meta;
        meta["name"] = name;
        meta["shape"] = t.shape().dims;
        meta["encoding"] = encoding_name(e);
        std::vector<uint8_t> blob = encode_blob(m, name, e, meta);
        cursor = align_up(cursor, kBlobAlign);
        meta["offset"] = cursor;
        meta["length"] = blob.size();
        cursor += blob.size();
        tensors.push_back(std::move(meta));
        blobs.emplace_back(name, std::move(blob));
    }
    header["tensors"] = std::move(tensors);

    const std::string header_text = header.dump();
    const size_t header_end = 12 + header_text.size();
    const size_t blob_base = align_up(header_end, kBlobAlign);

    auto put_u16 = [&](uint16_t v) {
        char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    auto put_u32 = [&](uint32_t v) {
        char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                     static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
        out.write(b, 4);
    };

    out.write("EMDL", 4);
    put_u16(1);
    put_u16(0);
    put_u32(static_cast<uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    size_t written = header_end;
    auto pad_to = [&](size_t target) {
        static const char zeros[kBlobAlign] = {};
        while (written < target) {
            size_t chunk = std::min(target - written, kBlobAlign);
            out.write(zeros, static_cast<std::streamsize>(chunk));
            written += chunk;
        }
    };

    size_t cursor2 = 0;
    for (const auto& [name, blob] : blobs) {
        (void)name;
        cursor2 = align_up(cursor2, kBlobAlign);
        pad_to(blob_base + cursor2);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size()));
        written += blob.size();
        cursor2 += blob.size();
    }
    if (!out) throw Error("EMDL write failed");
    return written;
}

Model load_model(std::istream& in) {
    std::string all(std::istreambuf_iterator<char>(in), {});
    const auto* data = reinterpret_cast<const uint8_t*>(all.data());
    const size_t size = all.size();

    if (size < 12 || std::memcmp(data, "EMDL", 4) != 0) throw Error("bad EMDL magic");
    uint16_t version = static_cast<uint16_t>(data[4] | data[5] << 8);
    uint16_t flags = static_cast<uint16_t>(data[6] | data[7] << 8);
    if (version != 1) throw Error("unsupported EMDL version " + std::to_string(version));
    if (flags != 0) throw Error("unsupported EMDL flags");
    uint32_t header_len = static_cast<uint32_t>(data[8]) | static_cast<uint32_t>(data[9]) << 8 |
                          static_cast<uint32_t>(data[10]) << 16 |
                          static_cast<uint32_t>(data[11]) << 24;
    if (12 + static_cast<size_t>(header_len) > size) throw Error("EMDL header truncated");

    json header;
    try {
        header = json::parse(all.substr(12, header_len));
    } catch (const json::exception& e) {
        throw Error(std::string("EMDL header JSON invalid: ") + e.what());
    }

    const size_t blob_base = align_up(12 + header_len, kBlobAlign);

    Model m;
    try {
        m.name = header.value("name", "model");
        if (header.contains("labels"))
            m.labels = header.at("labels").get<std::vector<std::string>>();
        m.graph = graph_from_json(header.at("graph"));
        if (header.contains("activation_quant")) {
            for (const auto& [edge, jq] : header.at("activation_quant").items()) {
                m.activation_quant[edge] = QuantParams{jq.at("scale").get<float>(),
                                                       jq.at("zero_point").get<int>()};
            }
        }

        std::vector<std::pair<size_t, size_t>> spans;
        for (const auto& meta : header.at("tensors")) {
            std::string name = meta.at("name").get<std::string>();
            Shape shape(meta.at("shape").get<std::vector<int>>());
            WeightEncoding e = encoding_from_name(meta.at("encoding").get<std::string>());
            size_t offset = meta.at("offset").get<size_t>();
            size_t length = meta.at("length").get<size_t>();
            if (blob_base + offset + length > size || blob_base + offset < blob_base)
                throw Error("tensor '" + name + "': blob out of file range");
            spans.emplace_back(offset, offset + length);
            if (m.graph.weights.contains(name))
                throw Error("duplicate tensor '" + name + "' in directory");
            decode_blob(m, name, e, std::move(shape), meta, data + blob_base + offset, length);
        }
        std::sort(spans.begin(), spans.end());
        for (size_t i = 1; i < spans.size(); ++i)
            if (spans[i].first < spans[i - 1].second) throw Error("overlapping tensor blobs");
    } catch (const json::exception& e) {
        throw Error(std::string("EMDL header JSON invalid: ") + e.what());
    }

    validate(m.graph);
    return m;
}

void save_model_file(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    save_model(m, out);
}

Model load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return load_model(in);
}

Model model_from_graph_json(const std::string& json_text, const std::string& weights_dir) {
    json spec;
    try {
        spec = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("graph spec JSON invalid: ") + e.what());
    }
    Model m;
    try {
        m.name = spec.value("name", "model");
        if (spec.contains("labels"))
            m.labels = spec.at("labels").get<std::vector<std::string>>();
        m.graph = graph_from_json(spec.contains("graph") ? spec.at("graph") : spec);
    } catch (const json::exception& e) {
        throw Error(std::string("graph spec JSON invalid: ") + e.what());
    }
    for (const auto& n : m.graph.nodes) {
        for (const std::string* name : {&n.weights, &n.bias}) {
            if (name->empty()) continue;
            std::string path = weights_dir + "/" + *name + ".rten";
            m.graph.weights.emplace(*name, read_rten_file(path));
        }
    }
    validate(m.graph);
    return m;
}

} // namespace emdl
