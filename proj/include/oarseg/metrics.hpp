// Evaluation metrics: per-organ Dice score and symmetric Hausdorff distance
// in physical (mm) coordinates, plus table-shaped report assembly.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace oarseg {

using Dims3 = std::array<int, 3>;      // [D,H,W]
using Spacing3 = std::array<double, 3>;  // (sx, sy, sz) mm, matching (W,H,D) axes

inline int64_t dims_numel(const Dims3& d) {
    return static_cast<int64_t>(d[0]) * d[1] * d[2];
}

// 2|G∩P| / (|G|+|P|); both masks empty -> 1 by convention.
double dice_score(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred);

struct HausdorffResult {
    double mm = 0.0;
    bool defined = false;  // false when either mask is empty
};

// Symmetric Hausdorff distance max(h(G,P), h(P,G)) over voxel centers in
// physical coordinates (index * spacing). Directed distances are exact for
// arbitrary masks: every voxel of G outside P is a candidate source, and the
// nearest-point search runs over the 6-neighborhood boundary voxels of the
// target mask (the nearest mask voxel to any outside point is always a
// boundary voxel, so the reduction loses nothing).
HausdorffResult hausdorff_distance(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred,
                                   const Dims3& dims, const Spacing3& spacing);

// Voxels of the mask with at least one 6-neighbor outside the mask (volume
// edges count as outside). Returned as flat indices.
std::vector<int64_t> boundary_voxels(const std::vector<uint8_t>& mask, const Dims3& dims);

struct ClassMetrics {
    int class_id = 0;
    std::string name;
    double dsc = 0.0;
    double hd_mm = 0.0;
    bool hd_defined = false;
    int64_t gt_voxels = 0;
    int64_t pred_voxels = 0;
};

struct MetricsReport {
    int num_classes = 0;
    std::vector<ClassMetrics> per_class;  // foreground classes 1..num_classes-1 in order
    double mean_dsc = 0.0;
    double mean_hd_mm = 0.0;
    bool mean_hd_defined = false;
};

// Binarizes both label maps per foreground class and computes both metrics;
// means are arithmetic over foreground classes (HD mean over defined entries
// only). Labels must lie in [0, num_classes).
MetricsReport evaluate_volume(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred,
                              const Dims3& dims, const Spacing3& spacing, int num_classes);

// SegTHOR-convention organ names for the 5-class case; "class<k>" otherwise.
std::string class_name(int class_id, int num_classes);

// key=value serialization, its inverse, and the organ-column table.
std::string serialize_report(const MetricsReport& report);
MetricsReport parse_report(const std::string& text);
std::string format_report_table(const MetricsReport& report);

}  // namespace oarseg
