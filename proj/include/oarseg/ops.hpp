// Differentiable layer primitives. Every op computes its forward result,
// and when `tape` is non-null and any input requires a gradient, records a
// backward rule that accumulates (never overwrites) into input gradients.
// All heavy loops parallelize over disjoint output regions with fixed-order
// inner accumulation, so results are bit-identical for any thread count.
#pragma once

#include "oarseg/tensor.hpp"

namespace oarseg {

enum class Mode { train, eval };

// Per-layer running statistics for batch normalization. Uninitialized until
// the first train-mode pass (or a checkpoint load); eval mode rejects
// uninitialized state.
struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    bool initialized = false;
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;  // new = (1 - momentum) * old + momentum * batch
};

// Cross-correlation with zero padding, stride 1, square odd kernel, and
// kernel-tap spacing `dilation`. input [N,Ci,H,W], kernel [Co,Ci,k,k],
// bias [Co] -> [N,Co,H',W'] with H' = H + 2*padding - dilation*(k-1).
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int padding, int dilation);

// Elementwise max(x, 0); subgradient at 0 is 0.
Tensor relu(Tape* tape, const Tensor& input);

// Train mode normalizes per channel over (N,H,W) with batch statistics
// (population variance) and updates `state` by exponential moving average;
// eval mode normalizes with the running statistics and leaves them untouched.
Tensor batchnorm2d(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, const BatchNormOptions& options, Mode mode);

// 2x2 windows, stride 2, maximum per window; gradient routes to the first
// maximal element in row-major window order. H and W must be even.
Tensor maxpool2d(Tape* tape, const Tensor& input);

// Nearest-neighbor upsampling by 2 in both spatial dims; backward sums the
// four gradient contributions per source pixel.
Tensor upsample2d(Tape* tape, const Tensor& input);

// Channel-axis concatenation of [N,Ca,H,W] and [N,Cb,H,W].
Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b);

// Elementwise sum of identically shaped tensors.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);

// Elementwise product of identically shaped tensors.
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

// Per-pixel softmax over the channel axis of [N,K,H,W], K >= 2, computed
// with max-subtraction; per-pixel channel sums are 1.
Tensor softmax_channels(Tape* tape, const Tensor& input);

// Sum of all elements -> scalar tensor.
Tensor sum(Tape* tape, const Tensor& input);

}  // namespace oarseg
