#include "oarseg/postprocess.hpp"

#include <stdexcept>

namespace oarseg {

ComponentLabeling connected_components(const std::vector<uint8_t>& mask, const Dims3& dims) {
    if (static_cast<int64_t>(mask.size()) != dims_numel(dims))
        throw std::invalid_argument("connected_components: mask size does not match dims");
    const int d = dims[0], h = dims[1], w = dims[2];

    ComponentLabeling result;
    result.component_map.assign(mask.size(), 0);
    std::vector<int64_t> stack;
    for (int64_t seed = 0; seed < static_cast<int64_t>(mask.size()); ++seed) {
        if (!mask[static_cast<size_t>(seed)] || result.component_map[static_cast<size_t>(seed)] != 0)
            continue;
        const int32_t id = static_cast<int32_t>(result.sizes.size()) + 1;
        int64_t size = 0;
        stack.clear();
        stack.push_back(seed);
        result.component_map[static_cast<size_t>(seed)] = id;
        while (!stack.empty()) {
            const int64_t cur = stack.back();
            stack.pop_back();
            ++size;
            const int x = static_cast<int>(cur % w);
            const int y = static_cast<int>((cur / w) % h);
            const int z = static_cast<int>(cur / (static_cast<int64_t>(w) * h));
            const int64_t neighbors[6] = {
                z > 0 ? cur - static_cast<int64_t>(w) * h : -1,
                z < d - 1 ? cur + static_cast<int64_t>(w) * h : -1,
                y > 0 ? cur - w : -1,
                y < h - 1 ? cur + w : -1,
                x > 0 ? cur - 1 : -1,
                x < w - 1 ? cur + 1 : -1,
            };
            for (int64_t nb : neighbors) {
                if (nb < 0) continue;
                if (mask[static_cast<size_t>(nb)] && result.component_map[static_cast<size_t>(nb)] == 0) {
                    result.component_map[static_cast<size_t>(nb)] = id;
                    stack.push_back(nb);
                }
            }
        }
        result.sizes.push_back(size);
    }
    return result;
}

std::vector<uint8_t> largest_component_filter(const std::vector<uint8_t>& labelmap, const Dims3& dims,
                                              int num_classes) {
    if (static_cast<int64_t>(labelmap.size()) != dims_numel(dims))
        throw std::invalid_argument("largest_component_filter: labelmap size does not match dims");
    for (uint8_t v : labelmap)
        if (v >= num_classes)
            throw std::invalid_argument("largest_component_filter: label " + std::to_string(v) +
                                        " out of range [0," + std::to_string(num_classes) + ")");

    std::vector<uint8_t> out = labelmap;
    std::vector<uint8_t> mask(labelmap.size());
    for (int c = 1; c < num_classes; ++c) {
        for (size_t i = 0; i < labelmap.size(); ++i) mask[i] = labelmap[i] == c;
        const ComponentLabeling cc = connected_components(mask, dims);
        if (cc.num_components() <= 1) continue;
        // Largest component; ties resolve to the lowest id, which is the one
        // containing the lexicographically smallest voxel.
        int32_t keep = 1;
        for (int32_t id = 2; id <= cc.num_components(); ++id)
            if (cc.sizes[static_cast<size_t>(id - 1)] > cc.sizes[static_cast<size_t>(keep - 1)]) keep = id;
        for (size_t i = 0; i < labelmap.size(); ++i)
            if (mask[i] && cc.component_map[i] != keep) out[i] = 0;
    }
    return out;
}

}  // namespace oarseg
