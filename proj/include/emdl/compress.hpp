#pragma once

#include <optional>
#include <span>

#include "emdl/executor.hpp"
#include "emdl/graph.hpp"

namespace emdl {

struct CompressionConfig {
    double sparsity = 0.0;        // fraction of each eligible tensor to zero
    std::optional<int> clusters;  // k-means codebook size, >= 2
    bool quantize = false;
    // Calibration inputs: preprocessed tensors when provided, otherwise
    // `calib_random` seeded random inputs in [-1, 1].
    std::vector<Tensor> calib_inputs;
    int calib_random = 100;
    uint64_t seed = 0;
    int threads = 1;
};

struct TensorReport {
    std::string name;
    std::string encoding;
    int64_t original_bytes = 0;
    int64_t encoded_bytes = 0;
    int64_t nonzeros = 0;
    int64_t unique_values = 0;
};

struct CompressionReport {
    int64_t original_bytes = 0;
    int64_t encoded_bytes = 0;
    double ratio = 1.0;
    std::vector<TensorReport> per_tensor;

    std::string to_json() const;
};

// Weight tensors of Conv2D/DepthwiseConv2D/FullyConnected nodes, minus the
// classifier (the last FullyConnected in topological order). Biases are
// never eligible.
std::vector<std::string> prunable_tensors(const Model& m);

// Zeroes exactly floor(sparsity * n) elements of each eligible tensor, those
// with smallest |w|, ties to the lowest flat index.
Model prune_magnitude(Model m, double sparsity);

struct ClusterStats {
    // Lloyd objective (sum of squared distances) per iteration, per tensor.
    std::map<std::string, std::vector<double>> objective;
};

// Per-tensor Lloyd k-means over non-exempt elements with centroids
// initialized linearly spaced on [min, max]; ties assign to the lower
// centroid index; empty clusters keep their centroid; capped at 300
// iterations. Exact zeros stay exempt (and exactly 0) when preserve_zeros.
Model cluster_weights(Model m, int k, bool preserve_zeros = true,
                      ClusterStats* stats = nullptr);

struct Calibration {
    RangeMap ranges;
    std::map<std::string, QuantParams> qparams;
};

// Runs float inference over the calibration inputs recording running
// min/max per activation edge.
Calibration calibrate(const Model& m, std::span<const Tensor> inputs, int threads = 1);

std::vector<Tensor> random_calibration_inputs(const Shape& input_shape, int count,
                                              uint64_t seed);

// Weights to per-output-channel symmetric int8 (clustered tensors quantize
// their centroids with a per-tensor scale), biases to int32 at
// input_scale * weight_scale, activation edges carry the calibrated params.
Model quantize_model(Model m, const Calibration& calib);

// prune -> cluster -> calibrate+quantize, in that order.
std::pair<Model, CompressionReport> optimize_pipeline(Model m, const CompressionConfig& cfg);

} // namespace emdl
