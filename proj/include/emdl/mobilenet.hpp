#pragma once

#include <cstdint>

#include "emdl/graph.hpp"

namespace emdl {

enum class WeightInit { Zeros, Random };

// Standard MobileNetV2: 3x3 stride-2 stem, 17 inverted-residual bottlenecks
// (expansion 6, first block 1) in the published channel/stride schedule, 1x1
// conv to 1280, global average pool, classifier, softmax. Batch norm is
// folded at construction, so every conv carries a bias and the graph has no
// standalone norm nodes. input_size must be divisible by 32.
Model build_mobilenet_v2(double width_multiplier, int num_classes, int input_size,
                         WeightInit init, uint64_t seed = 0);

} // namespace emdl
