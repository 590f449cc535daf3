#pragma once

#include <string>
#include <vector>

#include "emdl/tensor.hpp"

namespace emdl {

// 8-bit raster, row-major HWC, 1 (gray) or 3 (RGB) channels.
struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
};

// Binary PPM (P6) / PGM (P5) with maxval 255.
RasterImage load_pnm(std::istream& in);
RasterImage load_pnm_file(const std::string& path);

// Bilinear resize to target x target (sample at (i+0.5)*scale - 0.5,
// edge-clamped), grayscale replicated to 3 channels, values mapped to
// v/127.5 - 1. Output shape 1 x target x target x 3.
Tensor preprocess(const RasterImage& img, int target = 224);

// Loads a model input from a PPM/PGM raster (preprocessed to the model
// input size) or directly from an RTEN tensor, dispatching on file magic.
Tensor load_input(const std::string& path, const Shape& input_shape);

} // namespace emdl
