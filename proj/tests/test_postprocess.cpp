#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "oarseg/postprocess.hpp"
#include "oarseg/rng.hpp"

using namespace oarseg;

namespace {

// Independent oracle: union-find over face-adjacent voxel pairs.
struct UnionFind {
    std::vector<int64_t> parent;
    explicit UnionFind(int64_t n) : parent(static_cast<size_t>(n)) {
        for (int64_t i = 0; i < n; ++i) parent[static_cast<size_t>(i)] = i;
    }
    int64_t find(int64_t a) {
        while (parent[static_cast<size_t>(a)] != a) {
            parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
            a = parent[static_cast<size_t>(a)];
        }
        return a;
    }
    void unite(int64_t a, int64_t b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

std::vector<int64_t> oracle_components(const std::vector<uint8_t>& mask, const Dims3& dims) {
    const int d = dims[0], h = dims[1], w = dims[2];
    UnionFind uf(dims_numel(dims));
    auto idx = [&](int z, int y, int x) { return (static_cast<int64_t>(z) * h + y) * w + x; };
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!mask[static_cast<size_t>(idx(z, y, x))]) continue;
                if (z + 1 < d && mask[static_cast<size_t>(idx(z + 1, y, x))])
                    uf.unite(idx(z, y, x), idx(z + 1, y, x));
                if (y + 1 < h && mask[static_cast<size_t>(idx(z, y + 1, x))])
                    uf.unite(idx(z, y, x), idx(z, y + 1, x));
                if (x + 1 < w && mask[static_cast<size_t>(idx(z, y, x + 1))])
                    uf.unite(idx(z, y, x), idx(z, y, x + 1));
            }
    std::vector<int64_t> roots(mask.size(), -1);
    for (int64_t i = 0; i < dims_numel(dims); ++i)
        if (mask[static_cast<size_t>(i)]) roots[static_cast<size_t>(i)] = uf.find(i);
    return roots;
}

// Same partition up to relabeling.
bool partitions_match(const std::vector<int32_t>& ours, const std::vector<int64_t>& oracle) {
    std::map<int32_t, int64_t> fwd;
    std::map<int64_t, int32_t> rev;
    for (size_t i = 0; i < ours.size(); ++i) {
        const bool in_ours = ours[i] != 0;
        const bool in_oracle = oracle[i] >= 0;
        if (in_ours != in_oracle) return false;
        if (!in_ours) continue;
        auto f = fwd.find(ours[i]);
        if (f == fwd.end()) {
            fwd[ours[i]] = oracle[i];
        } else if (f->second != oracle[i]) {
            return false;
        }
        auto r = rev.find(oracle[i]);
        if (r == rev.end()) {
            rev[oracle[i]] = ours[i];
        } else if (r->second != ours[i]) {
            return false;
        }
    }
    return true;
}

std::vector<uint8_t> point_mask(const Dims3& dims, std::initializer_list<std::array<int, 3>> points) {
    std::vector<uint8_t> mask(static_cast<size_t>(dims_numel(dims)), 0);
    for (const auto& p : points)
        mask[static_cast<size_t>((static_cast<int64_t>(p[0]) * dims[1] + p[1]) * dims[2] + p[2])] = 1;
    return mask;
}

}  // namespace

TEST_CASE("connected_components examples") {
    // single solid cube -> one component
    const Dims3 dims{6, 6, 6};
    std::vector<uint8_t> cube(static_cast<size_t>(dims_numel(dims)), 0);
    for (int z = 1; z < 4; ++z)
        for (int y = 1; y < 4; ++y)
            for (int x = 1; x < 4; ++x)
                cube[static_cast<size_t>((static_cast<int64_t>(z) * 6 + y) * 6 + x)] = 1;
    const ComponentLabeling one = connected_components(cube, dims);
    CHECK(one.num_components() == 1);
    CHECK(one.sizes[0] == 27);

    // two distant voxels -> two components
    const ComponentLabeling two =
        connected_components(point_mask(dims, {{0, 0, 0}, {5, 5, 5}}), dims);
    CHECK(two.num_components() == 2);

    // edge-diagonal neighbors are not 6-connected
    const ComponentLabeling diag =
        connected_components(point_mask(dims, {{0, 0, 0}, {0, 1, 1}}), dims);
    CHECK(diag.num_components() == 2);

    // face neighbors are
    const ComponentLabeling face =
        connected_components(point_mask(dims, {{0, 0, 0}, {0, 0, 1}}), dims);
    CHECK(face.num_components() == 1);

    const ComponentLabeling empty =
        connected_components(std::vector<uint8_t>(static_cast<size_t>(dims_numel(dims)), 0), dims);
    CHECK(empty.num_components() == 0);
}

TEST_CASE("connected_components matches the union-find oracle on random masks") {
    Rng rng(42);
    for (int trial = 0; trial < 60; ++trial) {
        const Dims3 dims{2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7)),
                         2 + static_cast<int>(rng.below(7))};
        std::vector<uint8_t> mask(static_cast<size_t>(dims_numel(dims)));
        const double fill = rng.uniform(0.2, 0.8);
        for (auto& v : mask) v = rng.uniform() < fill ? 1 : 0;

        const ComponentLabeling ours = connected_components(mask, dims);
        const std::vector<int64_t> oracle = oracle_components(mask, dims);
        CHECK(partitions_match(ours.component_map, oracle));

        // sizes agree with a direct count
        std::map<int32_t, int64_t> counts;
        for (int32_t id : ours.component_map)
            if (id != 0) ++counts[id];
        for (int32_t id = 1; id <= ours.num_components(); ++id)
            CHECK(counts[id] == ours.sizes[static_cast<size_t>(id - 1)]);
    }
}

TEST_CASE("largest_component_filter examples") {
    const Dims3 dims{4, 6, 6};
    // one blob per class -> unchanged
    std::vector<uint8_t> labels(static_cast<size_t>(dims_numel(dims)), 0);
    auto set = [&](int z, int y, int x, uint8_t c) {
        labels[static_cast<size_t>((static_cast<int64_t>(z) * 6 + y) * 6 + x)] = c;
    };
    set(0, 0, 0, 1);
    set(0, 0, 1, 1);
    set(1, 2, 2, 2);
    set(2, 4, 4, 3);
    set(3, 1, 1, 4);
    CHECK(largest_component_filter(labels, dims, 5) == labels);

    // 10-voxel blob of class 1 plus a 2-voxel blob: the small one clears
    std::vector<uint8_t> two_blobs(static_cast<size_t>(dims_numel(dims)), 0);
    for (int x = 0; x < 5; ++x) {
        two_blobs[static_cast<size_t>(x)] = 1;               // z0,y0,x0..4
        two_blobs[static_cast<size_t>(6 + x)] = 1;           // z0,y1,x0..4
    }
    two_blobs[static_cast<size_t>((3 * 6 + 5) * 6 + 5)] = 1;  // far blob voxel 1
    two_blobs[static_cast<size_t>((3 * 6 + 4) * 6 + 5)] = 1;  // far blob voxel 2
    const std::vector<uint8_t> filtered = largest_component_filter(two_blobs, dims, 5);
    int64_t kept = 0, cleared = 0;
    for (size_t i = 0; i < filtered.size(); ++i) {
        if (two_blobs[i] && filtered[i]) ++kept;
        if (two_blobs[i] && !filtered[i]) ++cleared;
    }
    CHECK(kept == 10);
    CHECK(cleared == 2);

    // all-background map unchanged
    std::vector<uint8_t> blank(static_cast<size_t>(dims_numel(dims)), 0);
    CHECK(largest_component_filter(blank, dims, 5) == blank);

    std::vector<uint8_t> bad = blank;
    bad[0] = 9;
    CHECK_THROWS_AS(largest_component_filter(bad, dims, 5), std::invalid_argument);
}

TEST_CASE("largest_component_filter tie goes to the earliest component") {
    const Dims3 dims{1, 1, 7};
    // two 2-voxel components of class 1 separated by background
    std::vector<uint8_t> labels = {1, 1, 0, 0, 1, 1, 0};
    const std::vector<uint8_t> filtered = largest_component_filter(labels, dims, 2);
    CHECK(filtered == std::vector<uint8_t>{1, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("filter properties: subset, connectivity, idempotence") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        const Dims3 dims{1 + static_cast<int>(rng.below(8)), 1 + static_cast<int>(rng.below(8)),
                         1 + static_cast<int>(rng.below(8))};
        std::vector<uint8_t> labels(static_cast<size_t>(dims_numel(dims)));
        for (auto& v : labels) v = static_cast<uint8_t>(rng.below(5));

        const std::vector<uint8_t> once = largest_component_filter(labels, dims, 5);
        // never adds voxels; only reassigns to background
        for (size_t i = 0; i < labels.size(); ++i) {
            const bool unchanged = once[i] == labels[i];
            const bool cleared = once[i] == 0 && labels[i] != 0;
            CHECK((unchanged || cleared));
        }
        // per class the output is one 6-connected component or empty
        for (int c = 1; c < 5; ++c) {
            std::vector<uint8_t> mask(labels.size());
            for (size_t i = 0; i < labels.size(); ++i) mask[i] = once[i] == c;
            const ComponentLabeling cc = connected_components(mask, dims);
            CHECK(cc.num_components() <= 1);
        }
        // idempotence
        CHECK(largest_component_filter(once, dims, 5) == once);
    }
}
