// Differentiable training objectives: multiclass soft Dice and Tversky.
#pragma once

#include "oarseg/tensor.hpp"

namespace oarseg {

enum class LossKind { dice, tversky };

struct LossConfig {
    LossKind kind = LossKind::dice;
    double alpha = 0.5;  // false-positive weight (Tversky)
    double beta = 0.5;   // false-negative weight (Tversky)
    double smooth = 1e-6;
    bool include_background = true;
    // With the factor of 2 the per-class term is the soft Dice coefficient
    // and the loss lies in [0,1]; without it the per-class term tops out at
    // 1/2 for a perfect match.
    bool dice_factor_two = true;
};

// pred: [N,K,H,W] per-pixel class probabilities. target: one-hot [N,K,H,W]
// (entries exactly 0 or 1, per-pixel channel sum exactly 1; anything else is
// rejected). Sums pool over the whole batch; the loss is 1 minus the mean
// per-class overlap term over the included classes. Differentiable w.r.t.
// pred only.
Tensor soft_dice_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config);

// Per-class Tversky index (TP + s) / (TP + alpha*FP + beta*FN + s); with
// alpha = beta = 0.5 it coincides with factor-2 soft Dice.
Tensor tversky_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config);

// Dispatch on config.kind.
Tensor segmentation_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config);

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

}  // namespace oarseg
