// Largest-connected-component filtering of predicted label maps
// (6-connectivity in 3D).
#pragma once

#include <cstdint>
#include <vector>

#include "oarseg/metrics.hpp"  // Dims3

namespace oarseg {

struct ComponentLabeling {
    std::vector<int32_t> component_map;  // 0 = background, components numbered from 1
    std::vector<int64_t> sizes;          // sizes[i] = voxels of component i+1
    int num_components() const { return static_cast<int>(sizes.size()); }
};

// Labels each maximal 6-connected region of the binary mask. Components are
// numbered in order of their lexicographically smallest voxel index.
ComponentLabeling connected_components(const std::vector<uint8_t>& mask, const Dims3& dims);

// For each foreground class independently, clears to background every voxel
// outside the class's largest component. Ties go to the component containing
// the lexicographically smallest voxel index.
std::vector<uint8_t> largest_component_filter(const std::vector<uint8_t>& labelmap, const Dims3& dims,
                                              int num_classes);

}  // namespace oarseg
