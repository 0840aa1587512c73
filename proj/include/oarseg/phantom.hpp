// Deterministic synthetic thoracic phantoms: a soft-tissue body containing
// four non-overlapping labeled structures (esophagus, heart, trachea,
// aorta), with HU-like intensities and seeded geometry jitter. A test
// vehicle for the pipeline, not an anatomical model.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "oarseg/volume.hpp"

namespace oarseg {

struct PhantomSpec {
    std::array<int, 3> dims{32, 96, 96};               // [D,H,W]
    std::array<double, 3> spacing{0.98, 0.98, 2.5};    // (sx, sy, sz) mm
    double noise_std = 8.0;
    uint64_t seed = 0;

    // HU-like intensities; the esophagus sits closest to soft tissue so it
    // stays the lowest-contrast structure.
    double air_hu = -1000.0;
    double body_hu = 40.0;
    double esophagus_hu = 62.0;
    double heart_hu = 110.0;
    double trachea_hu = -950.0;
    double aorta_hu = 160.0;

    void validate() const;
};

constexpr uint8_t kLabelBackground = 0;
constexpr uint8_t kLabelEsophagus = 1;
constexpr uint8_t kLabelHeart = 2;
constexpr uint8_t kLabelTrachea = 3;
constexpr uint8_t kLabelAorta = 4;
constexpr int kNumClasses = 5;

// Image + exact labels (noise is applied to the image only). The same seed
// always yields bit-identical output. Image intensities are quantized to
// float32-representable values so NIfTI round trips are exact.
Volume generate_phantom(const PhantomSpec& spec);

// Writes n_cases phantoms under out_dir/case_<i>/{image.nii,labels.nii}
// with per-case seeds spec.seed + index. Returns the case directory names.
std::vector<std::string> generate_dataset(int n_cases, const PhantomSpec& spec_template,
                                          uint64_t seed, const std::string& out_dir);

}  // namespace oarseg
