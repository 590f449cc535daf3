#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "emdl/graph.hpp"

namespace emdl {

// Storage encodings for weight tensors in the EMDL container.
//   F32  raw float payload
//   Q8   [f32 scale x C][i8 payload] per-channel symmetric
//   CL8  [f32 codebook][u8 indices] shared centroid values
//   CL4  [f32 codebook][packed 4-bit indices], codebook length <= 16
//   CLQ8 [f32 scale][i8 codebook][u8 indices] quantized centroids
//   I32  [f32 scale x C][i32 payload] quantized biases
enum class WeightEncoding : uint8_t { F32, Q8, CL8, CL4, CLQ8, I32 };

const char* encoding_name(WeightEncoding e);

// The encoding save() will pick for one tensor of the model.
WeightEncoding choose_encoding(const Model& m, const std::string& name);

struct TensorSize {
    std::string name;
    WeightEncoding encoding;
    int64_t bytes; // payload plus quant/codebook metadata
};

struct EncodedSize {
    int64_t total = 0;
    std::map<std::string, int64_t> per_encoding;
    std::vector<TensorSize> tensors;
};

EncodedSize encoded_size(const Model& m);

// EMDL container: magic "EMDL", version u16=1, flags u16=0, header_len u32,
// JSON header (graph + tensor directory), then 64-byte aligned blobs.
// Canonical: identical models serialize to identical bytes.
size_t save_model(const Model& m, std::ostream& out);
Model load_model(std::istream& in);

void save_model_file(const Model& m, const std::string& path);
Model load_model_file(const std::string& path);

// Assembles a model from a JSON graph description (the same schema as the
// EMDL header's graph section) plus a directory of <tensor-name>.rten files.
Model model_from_graph_json(const std::string& json_text, const std::string& weights_dir);

} // namespace emdl
