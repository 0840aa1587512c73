#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oarseg/nifti.hpp"
#include "oarseg/phantom.hpp"
#include "oarseg/postprocess.hpp"

using namespace oarseg;
namespace fs = std::filesystem;

namespace {

std::array<double, kNumClasses> label_means(const Volume& v) {
    std::array<double, kNumClasses> sums{};
    std::array<int64_t, kNumClasses> counts{};
    for (size_t i = 0; i < v.data.size(); ++i) {
        sums[v.labels[i]] += v.data[i];
        ++counts[v.labels[i]];
    }
    std::array<double, kNumClasses> means{};
    for (int c = 0; c < kNumClasses; ++c)
        means[static_cast<size_t>(c)] =
            counts[static_cast<size_t>(c)] ? sums[static_cast<size_t>(c)] / counts[static_cast<size_t>(c)] : 0.0;
    return means;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("same seed gives bit-identical phantom") {
    PhantomSpec spec;
    spec.seed = 11;
    const Volume a = generate_phantom(spec);
    const Volume b = generate_phantom(spec);
    CHECK(a.data == b.data);
    CHECK(a.labels == b.labels);

    spec.seed = 12;
    const Volume c = generate_phantom(spec);
    CHECK(a.data != c.data);
}

TEST_CASE("all five classes are present and structures never overlap") {
    for (uint64_t seed : {0ULL, 5ULL, 9ULL}) {
        PhantomSpec spec;
        spec.seed = seed;
        const Volume v = generate_phantom(spec);
        std::array<int64_t, kNumClasses> counts{};
        for (uint8_t l : v.labels) {
            REQUIRE(l < kNumClasses);
            ++counts[l];
        }
        for (int c = 0; c < kNumClasses; ++c) CHECK(counts[static_cast<size_t>(c)] >= 1);
    }
}

TEST_CASE("each structure is one 6-connected component") {
    for (uint64_t seed : {1ULL, 7ULL, 13ULL, 21ULL}) {
        PhantomSpec spec;
        spec.seed = seed;
        const Volume v = generate_phantom(spec);
        for (int c = 1; c < kNumClasses; ++c) {
            std::vector<uint8_t> mask(v.labels.size());
            for (size_t i = 0; i < mask.size(); ++i) mask[i] = v.labels[i] == c;
            const ComponentLabeling cc = connected_components(mask, v.dims);
            CHECK_MESSAGE(cc.num_components() == 1, "class " << c << " seed " << seed);
        }
        // so largest-component filtering is a no-op on ground truth
        CHECK(largest_component_filter(v.labels, v.dims, kNumClasses) == v.labels);
    }
}

TEST_CASE("intensity structure: trachea dark, aorta bright, esophagus lowest contrast") {
    for (uint64_t seed : {2ULL, 8ULL, 15ULL}) {
        PhantomSpec spec;
        spec.seed = seed;
        const Volume v = generate_phantom(spec);
        const auto means = label_means(v);
        CHECK(means[kLabelTrachea] < means[kLabelAorta]);

        const double body = means[kLabelBackground];
        const double eso_contrast = std::abs(means[kLabelEsophagus] - spec.body_hu);
        CHECK(eso_contrast < std::abs(means[kLabelHeart] - spec.body_hu));
        CHECK(eso_contrast < std::abs(means[kLabelTrachea] - spec.body_hu));
        CHECK(eso_contrast < std::abs(means[kLabelAorta] - spec.body_hu));
        // background mean mixes air and body; it sits far below soft tissue
        CHECK(body < spec.body_hu);
    }
}

TEST_CASE("noise-free phantom hits the configured intensities exactly") {
    PhantomSpec spec;
    spec.noise_std = 0.0;
    spec.seed = 3;
    const Volume v = generate_phantom(spec);
    for (size_t i = 0; i < v.data.size(); ++i) {
        switch (v.labels[i]) {
            case kLabelEsophagus: CHECK(v.data[i] == spec.esophagus_hu); break;
            case kLabelHeart: CHECK(v.data[i] == spec.heart_hu); break;
            case kLabelTrachea: CHECK(v.data[i] == spec.trachea_hu); break;
            case kLabelAorta: CHECK(v.data[i] == spec.aorta_hu); break;
            default:
                CHECK((v.data[i] == spec.air_hu || v.data[i] == spec.body_hu));
        }
    }
}

TEST_CASE("spec validation and fit rejection") {
    PhantomSpec bad;
    bad.dims = {8, 96, 96};
    CHECK_THROWS_AS(generate_phantom(bad), std::invalid_argument);
    bad.dims = {32, 96, 96};
    bad.noise_std = -1.0;
    CHECK_THROWS_AS(generate_phantom(bad), std::invalid_argument);

    // valid spec floor (>=16 per axis) that is still too small to fit organs
    PhantomSpec tight;
    tight.dims = {16, 20, 20};
    CHECK_THROWS_WITH_AS(generate_phantom(tight), doctest::Contains("too small"),
                         std::invalid_argument);

    PhantomSpec minimal;
    minimal.dims = {16, 48, 48};
    const Volume v = generate_phantom(minimal);
    std::array<int64_t, kNumClasses> counts{};
    for (uint8_t l : v.labels) ++counts[l];
    for (int c = 1; c < kNumClasses; ++c) CHECK(counts[static_cast<size_t>(c)] >= 1);
}

TEST_CASE("generate_dataset writes readable cases and is reproducible") {
    const fs::path dir = fs::temp_directory_path() / "oarseg_phantom_test";
    fs::remove_all(dir);

    PhantomSpec spec;
    spec.dims = {16, 48, 48};
    const std::vector<std::string> cases = generate_dataset(5, spec, 100, dir.string());
    REQUIRE(cases.size() == 5);
    for (const std::string& name : cases) {
        const Volume v = read_case((dir / name).string(), kNumClasses);
        CHECK(v.dims == spec.dims);
        CHECK(v.has_labels());
    }

    // regeneration with the same seed produces identical files
    const std::string before = file_bytes(dir / "case_002" / "image.nii");
    const std::string labels_before = file_bytes(dir / "case_002" / "labels.nii");
    generate_dataset(5, spec, 100, dir.string());
    CHECK(file_bytes(dir / "case_002" / "image.nii") == before);
    CHECK(file_bytes(dir / "case_002" / "labels.nii") == labels_before);

    // different base seed differs
    generate_dataset(5, spec, 101, dir.string());
    CHECK(file_bytes(dir / "case_002" / "image.nii") != before);

    CHECK_THROWS_AS(generate_dataset(0, spec, 1, dir.string()), std::invalid_argument);
}
