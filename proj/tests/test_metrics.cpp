#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oarseg/metrics.hpp"
#include "oarseg/rng.hpp"

using namespace oarseg;

namespace {

// Brute-force oracles over full masks: every voxel pair is considered.
double oracle_dice(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] != 0;
        nb += b[i] != 0;
        inter += a[i] != 0 && b[i] != 0;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double oracle_directed_hd(const std::vector<uint8_t>& from, const std::vector<uint8_t>& to,
                          const Dims3& dims, const Spacing3& spacing) {
    const int h = dims[1], w = dims[2];
    double worst = 0.0;
    for (int64_t i = 0; i < dims_numel(dims); ++i) {
        if (!from[static_cast<size_t>(i)]) continue;
        const double ax = static_cast<double>(i % w) * spacing[0];
        const double ay = static_cast<double>((i / w) % h) * spacing[1];
        const double az = static_cast<double>(i / (static_cast<int64_t>(w) * h)) * spacing[2];
        double best = std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < dims_numel(dims); ++j) {
            if (!to[static_cast<size_t>(j)]) continue;
            const double bx = static_cast<double>(j % w) * spacing[0];
            const double by = static_cast<double>((j / w) % h) * spacing[1];
            const double bz = static_cast<double>(j / (static_cast<int64_t>(w) * h)) * spacing[2];
            const double dist = std::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by) +
                                          (az - bz) * (az - bz));
            best = std::min(best, dist);
        }
        worst = std::max(worst, best);
    }
    return worst;
}

double oracle_hd(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, const Dims3& dims,
                 const Spacing3& spacing) {
    return std::max(oracle_directed_hd(a, b, dims, spacing), oracle_directed_hd(b, a, dims, spacing));
}

std::vector<uint8_t> random_mask(const Dims3& dims, double fill, Rng& rng) {
    std::vector<uint8_t> mask(static_cast<size_t>(dims_numel(dims)));
    for (auto& v : mask) v = rng.uniform() < fill ? 1 : 0;
    return mask;
}

std::vector<uint8_t> point_mask(const Dims3& dims, std::initializer_list<std::array<int, 3>> points) {
    std::vector<uint8_t> mask(static_cast<size_t>(dims_numel(dims)), 0);
    for (const auto& p : points)
        mask[static_cast<size_t>((static_cast<int64_t>(p[0]) * dims[1] + p[1]) * dims[2] + p[2])] = 1;
    return mask;
}

// Solid axis-aligned box, for the boundary-extraction equivalence property.
std::vector<uint8_t> box_mask(const Dims3& dims, std::array<int, 3> lo, std::array<int, 3> hi) {
    std::vector<uint8_t> mask(static_cast<size_t>(dims_numel(dims)), 0);
    for (int z = lo[0]; z <= hi[0]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int x = lo[2]; x <= hi[2]; ++x)
                mask[static_cast<size_t>((static_cast<int64_t>(z) * dims[1] + y) * dims[2] + x)] = 1;
    return mask;
}

}  // namespace

TEST_CASE("dice_score examples") {
    const Dims3 dims{2, 2, 2};
    std::vector<uint8_t> a = point_mask(dims, {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}});
    CHECK(dice_score(a, a) == 1.0);

    std::vector<uint8_t> b = point_mask(dims, {{1, 0, 0}, {0, 1, 1}});
    std::vector<uint8_t> disjoint = point_mask(dims, {{0, 0, 0}});
    CHECK(dice_score(b, disjoint) == 0.0);

    // |G|=4, |P|=2, overlap 2 -> 2*2/(4+2)
    std::vector<uint8_t> g = point_mask(dims, {{0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 1, 1}});
    std::vector<uint8_t> p = point_mask(dims, {{0, 0, 0}, {0, 0, 1}});
    CHECK(dice_score(g, p) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // empty vs empty -> 1 by convention
    std::vector<uint8_t> empty(8, 0);
    CHECK(dice_score(empty, empty) == 1.0);
    CHECK(dice_score(g, empty) == 0.0);

    CHECK_THROWS_AS(dice_score(g, std::vector<uint8_t>(4, 0)), std::invalid_argument);
    CHECK(dice_score(g, p) == dice_score(p, g));
}

TEST_CASE("hausdorff_distance examples") {
    const Spacing3 unit{1.0, 1.0, 1.0};

    const Dims3 dims{8, 8, 8};
    std::vector<uint8_t> a = point_mask(dims, {{0, 0, 0}, {3, 2, 1}});
    const HausdorffResult same = hausdorff_distance(a, a, dims, unit);
    CHECK(same.defined);
    CHECK(same.mm == 0.0);

    // 3-4-5 triangle: G={(0,0,0)}, P={(0,3,4)} (z, y, x) at unit spacing
    std::vector<uint8_t> g = point_mask(dims, {{0, 0, 0}});
    std::vector<uint8_t> p = point_mask(dims, {{0, 3, 4}});
    CHECK(hausdorff_distance(g, p, dims, unit).mm == doctest::Approx(5.0).epsilon(1e-12));

    // far point dominates symmetrically
    const Dims3 dims2{11, 1, 1};
    std::vector<uint8_t> two = point_mask(dims2, {{0, 0, 0}, {10, 0, 0}});
    std::vector<uint8_t> one = point_mask(dims2, {{0, 0, 0}});
    CHECK(hausdorff_distance(two, one, dims2, unit).mm == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(hausdorff_distance(one, two, dims2, unit).mm == doctest::Approx(10.0).epsilon(1e-12));

    // empty mask -> undefined
    std::vector<uint8_t> empty(static_cast<size_t>(dims_numel(dims)), 0);
    CHECK_FALSE(hausdorff_distance(g, empty, dims, unit).defined);
    CHECK_FALSE(hausdorff_distance(empty, empty, dims, unit).defined);
}

TEST_CASE("hausdorff distance equals the all-pairs oracle on random masks") {
    Rng rng(101);
    const Dims3 dims{8, 8, 8};
    const Spacing3 spacing{0.7, 1.1, 2.0};
    for (int trial = 0; trial < 40; ++trial) {
        const double fill = rng.uniform(0.05, 0.6);
        std::vector<uint8_t> a = random_mask(dims, fill, rng);
        std::vector<uint8_t> b = random_mask(dims, fill, rng);
        bool a_any = false, b_any = false;
        for (size_t i = 0; i < a.size(); ++i) {
            a_any = a_any || a[i];
            b_any = b_any || b[i];
        }
        if (!a_any || !b_any) continue;
        const HausdorffResult hd = hausdorff_distance(a, b, dims, spacing);
        REQUIRE(hd.defined);
        CHECK(std::abs(hd.mm - oracle_hd(a, b, dims, spacing)) < 1e-9);

        const HausdorffResult rev = hausdorff_distance(b, a, dims, spacing);
        CHECK(hd.mm == rev.mm);  // symmetry
    }
}

TEST_CASE("boundary extraction equivalence on solid shapes") {
    Rng rng(102);
    const Dims3 dims{10, 10, 10};
    const Spacing3 spacing{1.0, 1.25, 0.5};
    for (int trial = 0; trial < 10; ++trial) {
        auto corner = [&rng]() {
            const int a = static_cast<int>(rng.below(5));
            return std::array<int, 3>{a, static_cast<int>(rng.below(5)),
                                      static_cast<int>(rng.below(5))};
        };
        auto lo1 = corner();
        auto lo2 = corner();
        std::array<int, 3> hi1, hi2;
        for (int i = 0; i < 3; ++i) {
            hi1[static_cast<size_t>(i)] = lo1[static_cast<size_t>(i)] + 2 + static_cast<int>(rng.below(4));
            hi2[static_cast<size_t>(i)] = lo2[static_cast<size_t>(i)] + 2 + static_cast<int>(rng.below(4));
        }
        std::vector<uint8_t> a = box_mask(dims, lo1, hi1);
        std::vector<uint8_t> b = box_mask(dims, lo2, hi2);
        CHECK(std::abs(hausdorff_distance(a, b, dims, spacing).mm - oracle_hd(a, b, dims, spacing)) <
              1e-9);
    }
}

TEST_CASE("dilating the target never increases the directed distance") {
    Rng rng(103);
    const Dims3 dims{8, 8, 8};
    const Spacing3 unit{1.0, 1.0, 1.0};
    std::vector<uint8_t> a = random_mask(dims, 0.2, rng);
    std::vector<uint8_t> b = random_mask(dims, 0.15, rng);
    std::vector<uint8_t> b_grown = b;
    for (size_t i = 0; i < b_grown.size(); ++i)
        if (rng.uniform() < 0.2) b_grown[i] = 1;
    bool any_a = false, any_b = false;
    for (size_t i = 0; i < a.size(); ++i) {
        any_a = any_a || a[i];
        any_b = any_b || b[i];
    }
    REQUIRE(any_a);
    REQUIRE(any_b);
    CHECK(oracle_directed_hd(a, b_grown, dims, unit) <= oracle_directed_hd(a, b, dims, unit));
}

TEST_CASE("doubling the spacing doubles HD and leaves DSC unchanged") {
    Rng rng(104);
    const Dims3 dims{6, 6, 6};
    const Spacing3 s1{0.9, 1.1, 2.0};
    const Spacing3 s2{1.8, 2.2, 4.0};
    std::vector<uint8_t> a = random_mask(dims, 0.3, rng);
    std::vector<uint8_t> b = random_mask(dims, 0.3, rng);
    const HausdorffResult h1 = hausdorff_distance(a, b, dims, s1);
    const HausdorffResult h2 = hausdorff_distance(a, b, dims, s2);
    REQUIRE(h1.defined);
    CHECK(h2.mm == doctest::Approx(2.0 * h1.mm).epsilon(1e-12));
    CHECK(dice_score(a, b) == dice_score(a, b));
}

TEST_CASE("evaluate_volume per-class metrics and aggregates") {
    const Dims3 dims{4, 4, 4};
    const Spacing3 unit{1.0, 1.0, 1.0};
    std::vector<uint8_t> gt(64, 0);
    // one voxel per class 1..4
    gt[1] = 1;
    gt[2] = 2;
    gt[3] = 3;
    gt[4] = 4;

    const MetricsReport perfect = evaluate_volume(gt, gt, dims, unit, 5);
    REQUIRE(perfect.per_class.size() == 4);
    for (const ClassMetrics& m : perfect.per_class) {
        CHECK(m.dsc == 1.0);
        CHECK(m.hd_defined);
        CHECK(m.hd_mm == 0.0);
    }
    CHECK(perfect.mean_dsc == 1.0);
    CHECK(perfect.mean_hd_mm == 0.0);
    CHECK(perfect.per_class[0].name == "esophagus");
    CHECK(perfect.per_class[1].name == "heart");
    CHECK(perfect.per_class[2].name == "trachea");
    CHECK(perfect.per_class[3].name == "aorta");

    // all-background prediction: class-1 DSC 0, HD undefined
    std::vector<uint8_t> blank(64, 0);
    const MetricsReport missing = evaluate_volume(gt, blank, dims, unit, 5);
    CHECK(missing.per_class[0].dsc == 0.0);
    CHECK_FALSE(missing.per_class[0].hd_defined);
    CHECK_FALSE(missing.mean_hd_defined);

    std::vector<uint8_t> bad(64, 0);
    bad[0] = 7;
    CHECK_THROWS_AS(evaluate_volume(gt, bad, dims, unit, 5), std::invalid_argument);
}

TEST_CASE("evaluate_volume agrees with brute-force oracles on random label maps") {
    Rng rng(105);
    const Dims3 dims{8, 8, 8};
    const Spacing3 spacing{0.98, 0.98, 2.5};
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<uint8_t> gt(512), pred(512);
        for (auto& v : gt) v = static_cast<uint8_t>(rng.below(5));
        for (auto& v : pred) v = static_cast<uint8_t>(rng.below(5));
        const MetricsReport report = evaluate_volume(gt, pred, dims, spacing, 5);
        for (int c = 1; c < 5; ++c) {
            std::vector<uint8_t> g(512), p(512);
            for (size_t i = 0; i < 512; ++i) {
                g[i] = gt[i] == c;
                p[i] = pred[i] == c;
            }
            const ClassMetrics& m = report.per_class[static_cast<size_t>(c - 1)];
            CHECK(m.dsc == oracle_dice(g, p));
            if (m.hd_defined) CHECK(std::abs(m.hd_mm - oracle_hd(g, p, dims, spacing)) < 1e-9);
        }
    }
}

TEST_CASE("report serialization round trip and table format") {
    const Dims3 dims{4, 4, 4};
    const Spacing3 unit{1.0, 0.5, 2.0};
    Rng rng(106);
    std::vector<uint8_t> gt(64), pred(64);
    for (auto& v : gt) v = static_cast<uint8_t>(rng.below(5));
    for (auto& v : pred) v = static_cast<uint8_t>(rng.below(5));
    const MetricsReport report = evaluate_volume(gt, pred, dims, unit, 5);

    const std::string text = serialize_report(report);
    const MetricsReport parsed = parse_report(text);
    CHECK(parsed.num_classes == report.num_classes);
    REQUIRE(parsed.per_class.size() == report.per_class.size());
    for (size_t i = 0; i < parsed.per_class.size(); ++i) {
        CHECK(parsed.per_class[i].class_id == report.per_class[i].class_id);
        CHECK(parsed.per_class[i].name == report.per_class[i].name);
        CHECK(parsed.per_class[i].dsc == report.per_class[i].dsc);
        CHECK(parsed.per_class[i].hd_defined == report.per_class[i].hd_defined);
        CHECK(parsed.per_class[i].hd_mm == report.per_class[i].hd_mm);
        CHECK(parsed.per_class[i].gt_voxels == report.per_class[i].gt_voxels);
    }
    CHECK(parsed.mean_dsc == report.mean_dsc);
    CHECK(parsed.mean_hd_mm == report.mean_hd_mm);

    const std::string table = format_report_table(report);
    const size_t eso = table.find("Esophagus");
    const size_t heart = table.find("Heart");
    const size_t trachea = table.find("Trachea");
    const size_t aorta = table.find("Aorta");
    REQUIRE(eso != std::string::npos);
    CHECK(eso < heart);
    CHECK(heart < trachea);
    CHECK(trachea < aorta);

    CHECK_THROWS_AS(parse_report("not a report"), std::invalid_argument);
}
