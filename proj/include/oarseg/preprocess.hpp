// Intensity conditioning and geometry ops for the training pipeline:
// HU windowing -> per-slice CLAHE -> volume normalization -> center crop,
// plus the offline flip augmentations.
#pragma once

#include <vector>

#include "oarseg/volume.hpp"

namespace oarseg {

struct PreprocessConfig {
    double window_lo = -1000.0;  // HU
    double window_hi = 1000.0;
    int clahe_tiles_y = 8;
    int clahe_tiles_x = 8;
    double clahe_clip = 2.0;  // multiple of the uniform histogram bin height
    int clahe_bins = 256;
    int crop_h = 288;
    int crop_w = 288;
};

// Clamp to [lo_hu, hi_hu] then map affinely to [0,1].
Volume window_and_scale(const Volume& volume, double lo_hu, double hi_hu);

// Contrast-limited adaptive histogram equalization of one slice with values
// in [0,1]: per-tile clipped histograms (excess redistributed uniformly),
// CDF mappings, and bilinear interpolation between tile mappings.
std::vector<double> clahe_slice(const std::vector<double>& slice, int height, int width,
                                double clip_limit, int tiles_y, int tiles_x, int bins = 256);

// (x - mean) / std over the whole volume (population std). Rejects
// zero-variance input.
Volume normalize_volume(const Volume& volume);

// Center crop of every slice to out_h x out_w; slice count unchanged; labels
// cropped with the same window. Offset is floor((H-out_h)/2).
Volume center_crop(const Volume& volume, int out_h, int out_w);

enum class FlipAxis { horizontal, vertical };

// Mirror along the chosen in-plane axis; labels mirrored identically.
Volume flip_volume(const Volume& volume, FlipAxis axis);

// The full pipeline in fixed order: window -> CLAHE per slice -> normalize
// -> center crop (skipped when crop covers the slice).
Volume preprocess_volume(const Volume& volume, const PreprocessConfig& config);

}  // namespace oarseg
