// Online augmentation: one composed in-plane affine transform (zoom,
// rotation, shift, shear, crop jitter) plus optional flips. Images resample
// bilinearly, labels nearest-neighbor; out-of-frame regions take the image
// minimum / background label.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "oarseg/rng.hpp"

namespace oarseg {

struct AugmentParams {
    double zoom = 1.0;
    double rotation_deg = 0.0;
    double shift_y = 0.0;  // fraction of height
    double shift_x = 0.0;  // fraction of width
    double shear_deg = 0.0;
    double jitter_y = 0.0;  // crop jitter, pixels
    double jitter_x = 0.0;
    bool flip_h = false;
    bool flip_v = false;
    uint64_t rng_seed = 0;

    bool is_identity() const {
        return zoom == 1.0 && rotation_deg == 0.0 && shift_y == 0.0 && shift_x == 0.0 &&
               shear_deg == 0.0 && jitter_y == 0.0 && jitter_x == 0.0 && !flip_h && !flip_v;
    }
};

struct AugmentRanges {
    double zoom_lo = 0.9, zoom_hi = 1.1;
    double rotation_deg = 10.0;
    double shift_frac = 0.1;
    double shear_deg = 5.0;
    double crop_jitter_px = 8.0;
    bool draw_flips = false;
};

// Draws one parameter set from the configured ranges; reproducible from the
// seed (the same seed always yields the same params).
AugmentParams draw_augment_params(uint64_t seed, const AugmentRanges& ranges);

// Applies the composed transform to one slice (and its labels, when
// nonempty). Identity params return the input bit-identically.
std::pair<std::vector<double>, std::vector<uint8_t>> random_augment(
    const std::vector<double>& image, const std::vector<uint8_t>& labels, int height, int width,
    const AugmentParams& params);

}  // namespace oarseg
