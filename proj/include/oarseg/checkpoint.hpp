// Binary training-state container: magic "UNDRCKPT", version, model config,
// schedule state, RNG state, and length-prefixed name/shape/payload tensor
// records (little-endian, 64-bit floats). Carries everything needed to
// resume a run bit-identically, including the best-epoch snapshot.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "oarseg/losses.hpp"
#include "oarseg/model.hpp"

namespace oarseg {

using NamedTensors = std::map<std::string, Tensor>;

struct Checkpoint {
    uint32_t version = 1;
    ModelConfig model;
    LossKind loss_kind = LossKind::dice;
    int stage = 1;
    int epoch = -1;  // last completed epoch within the stage; -1 = none
    uint64_t step = 0;
    double lr = 1e-4;
    double best_val_dsc = -1.0;
    int best_epoch = -1;
    int plateau_count = 0;
    int stop_count = 0;
    std::array<uint64_t, 4> rng_state{0, 0, 0, 0};

    NamedTensors params;
    NamedTensors buffers;  // batch-norm running stats, e.g. "enc1.bn1.running_mean"
    NamedTensors adam_m;
    NamedTensors adam_v;

    bool has_best = false;  // snapshot of the best-validation epoch
    NamedTensors best_params;
    NamedTensors best_buffers;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds a runnable model from checkpoint contents (params cloned,
// requires_grad set, batch-norm states restored from buffers).
ModelState model_from_checkpoint(const Checkpoint& checkpoint);

// Collects initialized batch-norm running stats as named buffer tensors.
NamedTensors buffers_from_state(const ModelState& state);

NamedTensors clone_tensors(const NamedTensors& tensors);

}  // namespace oarseg
