// ADAM optimization, k-fold splitting, the two-stage training schedule
// (stage 1: Dice loss, no online augmentation; stage 2: fine-tune with
// online augmentation, Tversky by default), checkpointing, plateau lr decay
// and early stopping. Training is a pure function of (dataset, config,
// seed): reruns are bit-identical.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oarseg/augment.hpp"
#include "oarseg/checkpoint.hpp"
#include "oarseg/losses.hpp"
#include "oarseg/model.hpp"
#include "oarseg/volume.hpp"

namespace oarseg {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double decay_factor = 0.2;   // lr multiplier on validation plateau
    int plateau_patience = 5;    // epochs without improvement before decay
    int early_stop_patience = 10;
    int batch_size = 4;
    int stage1_max_epochs = 100;
    int stage2_epochs = 50;
    int folds = 5;
    LossConfig loss;
    uint64_t seed = 0;
    AugmentRanges augment;       // stage-2 online augmentation ranges
    double stop_at_val_dsc = -1.0;  // optional: stop once validation reaches this

    // Runtime hook invoked after every epoch (progress reporting); not part
    // of the persisted training state.
    std::function<void(const struct EpochLog&)> on_epoch;

    void validate() const;
};

// --- optimizer ---

struct AdamState {
    NamedTensors m, v;
    uint64_t step = 0;
};

// One ADAM update over all parameters; gradients are read from each
// parameter tensor and must be populated (rejected naming the parameter
// otherwise). Gradients are left untouched.
void adam_step(ParameterSet& params, AdamState& state, double lr, double beta1, double beta2,
               double eps);

// --- data ---

struct FoldSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Deterministic shuffle by seed, then `folds` disjoint validation chunks
// covering every case exactly once.
std::vector<FoldSplit> five_fold_split(const std::vector<std::string>& case_ids, int folds,
                                       uint64_t seed);

struct TrainSample {
    int case_index = 0;  // index into the case list this sample came from
    std::vector<double> image;
    std::vector<uint8_t> labels;
};

struct FoldData {
    int height = 0, width = 0;
    int num_classes = 5;
    std::vector<TrainSample> train;
    std::vector<TrainSample> val;
    std::vector<int> train_case_indices;
    std::vector<int> val_case_indices;
};

// Slices preprocessed volumes into training samples. Training cases get the
// offline flip augmentation (original + horizontal + vertical = 3 subjects
// per case); validation cases do not. Rejects overlapping case sets.
FoldData build_fold_data(const std::vector<Volume>& cases, const std::vector<int>& train_cases,
                         const std::vector<int>& val_cases, int num_classes, bool offline_flips);

// --- training ---

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double loss = 0.0;
    double val_dsc = 0.0;
    double lr = 0.0;
};

std::string format_epoch_log(const EpochLog& entry);

struct TrainResult {
    Checkpoint best;  // state at the best-validation epoch
    Checkpoint last;  // state at the final epoch (resume point)
    std::vector<EpochLog> log;
};

// Stage 1: mini-batch ADAM on the configured loss (Dice by protocol),
// validation mean foreground DSC after each epoch, plateau lr decay, early
// stopping, best-epoch checkpointing.
TrainResult train_stage1(const FoldData& fold, const ModelConfig& model_config,
                         const TrainConfig& config);

// Stage 2: loads the stage-1 weights and fine-tunes for exactly
// config.stage2_epochs epochs with per-sample online augmentation and
// config.loss (no early stopping). A checkpoint with stage == 2 resumes
// mid-run bit-identically instead.
TrainResult train_stage2(const Checkpoint& start, const FoldData& fold, const TrainConfig& config);

// Continues stage 1 from a mid-run checkpoint.
TrainResult resume_stage1(const Checkpoint& start, const FoldData& fold, const TrainConfig& config);

// Pooled per-class overlap counts over a sample set -> mean foreground DSC
// (per-class empty-vs-empty counts as 1). Eval-mode forward, no gradients.
double validation_dsc(ModelState& model, const std::vector<TrainSample>& samples, int height,
                      int width, int num_classes, int batch_size);

// --- inference ---

// Per-slice eval-mode forward, argmax decode, restack, then (optionally)
// largest-connected-component filtering.
std::vector<uint8_t> predict_volume(ModelState& model, const Volume& preprocessed, int batch_size,
                                    bool postprocess);

}  // namespace oarseg
