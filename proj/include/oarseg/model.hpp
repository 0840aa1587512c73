// U-Net-style encoder/decoder with residual encoder blocks and a bottleneck
// of parallel dilated convolutions summed together.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oarseg/ops.hpp"
#include "oarseg/tensor.hpp"

namespace oarseg {

enum class ResidualMode { add, concat };

struct ModelConfig {
    int in_channels = 1;
    int num_classes = 5;
    int depth = 4;
    int base_channels = 8;
    std::vector<int> dilation_rates = {1, 2, 3, 4};
    ResidualMode residual_mode = ResidualMode::add;
    uint64_t seed = 0;

    void validate() const;
    int spatial_divisor() const { return 1 << depth; }
};

// Ordered map from canonical parameter name (e.g. "enc1.conv1.weight") to a
// requires_grad tensor. std::map keeps iteration lexicographic.
using ParameterSet = std::map<std::string, Tensor>;

struct ModelState {
    ModelConfig config;
    ParameterSet params;
    std::map<std::string, BatchNormState> bn_states;  // keyed by layer prefix, e.g. "enc1.bn1"
    BatchNormOptions bn_options;
};

// Builds all parameters with He (fan-in) Gaussian initialization drawn
// deterministically from config.seed. Two builds with the same seed are
// bit-identical.
ModelState build_model(const ModelConfig& config);

// Full forward pass: [N,in_channels,H,W] -> per-pixel class probabilities
// [N,num_classes,H,W]. H and W must be divisible by 2^depth. Train mode
// updates batch-norm running statistics; eval mode is a pure function.
Tensor forward(Tape* tape, ModelState& state, const Tensor& batch, Mode mode);

// Stage pieces, exposed so tests can probe them individually.
Tensor encoder_block_forward(Tape* tape, ModelState& state, int level, const Tensor& x, Mode mode);
Tensor bottleneck_forward(Tape* tape, ModelState& state, const Tensor& x);
Tensor decoder_block_forward(Tape* tape, ModelState& state, int level, const Tensor& x,
                             const Tensor& skip, Mode mode);
Tensor head_forward(Tape* tape, ModelState& state, const Tensor& x);

// Per-pixel argmax over the channel axis of [N,K,H,W]; ties go to the lowest
// class index. Returns labels in [N,H,W] row-major order.
std::vector<uint8_t> predict_labels(const Tensor& probabilities);

int64_t total_parameters(const ParameterSet& params);

// Human-readable layer table (name, output shape for the given input size,
// parameter count) plus a total row.
std::string model_summary(const ModelConfig& config, int input_h, int input_w);

}  // namespace oarseg
