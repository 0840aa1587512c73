// 3D scalar volume with voxel spacing and an optional label map.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace oarseg {

struct Volume {
    std::array<int, 3> dims{0, 0, 0};          // [D,H,W]; W varies fastest in data
    std::vector<double> data;                  // D*H*W scalars
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (sx, sy, sz) mm for (W,H,D) axes
    std::vector<uint8_t> labels;               // empty, or congruent with data

    int depth() const { return dims[0]; }
    int height() const { return dims[1]; }
    int width() const { return dims[2]; }
    int64_t numel() const { return static_cast<int64_t>(dims[0]) * dims[1] * dims[2]; }
    bool has_labels() const { return !labels.empty(); }

    int64_t index(int d, int h, int w) const {
        return (static_cast<int64_t>(d) * dims[1] + h) * dims[2] + w;
    }
    double& at(int d, int h, int w) { return data[static_cast<size_t>(index(d, h, w))]; }
    double at(int d, int h, int w) const { return data[static_cast<size_t>(index(d, h, w))]; }
    uint8_t& label_at(int d, int h, int w) { return labels[static_cast<size_t>(index(d, h, w))]; }
    uint8_t label_at(int d, int h, int w) const { return labels[static_cast<size_t>(index(d, h, w))]; }

    void validate() const {
        if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
            throw std::invalid_argument("volume: dims must be positive");
        if (static_cast<int64_t>(data.size()) != numel())
            throw std::invalid_argument("volume: data size does not match dims");
        if (!labels.empty() && labels.size() != data.size())
            throw std::invalid_argument("volume: labels not congruent with data");
        for (double s : spacing)
            if (!(s > 0.0)) throw std::invalid_argument("volume: spacing components must be > 0");
    }
};

}  // namespace oarseg
