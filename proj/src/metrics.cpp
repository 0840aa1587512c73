#include "oarseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace oarseg {

double dice_score(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred) {
    if (gt.size() != pred.size())
        throw std::invalid_argument("dice_score: mask sizes differ (" + std::to_string(gt.size()) +
                                    " vs " + std::to_string(pred.size()) + ")");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        const bool g = gt[i] != 0, p = pred[i] != 0;
        inter += (g && p);
        a += g;
        b += p;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<int64_t> boundary_voxels(const std::vector<uint8_t>& mask, const Dims3& dims) {
    const int d = dims[0], h = dims[1], w = dims[2];
    std::vector<int64_t> out;
    auto at = [&](int z, int y, int x) { return mask[(static_cast<int64_t>(z) * h + y) * w + x] != 0; };
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (!at(z, y, x)) continue;
                const bool edge = z == 0 || z == d - 1 || y == 0 || y == h - 1 || x == 0 || x == w - 1;
                if (edge || !at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                    !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1))
                    out.push_back((static_cast<int64_t>(z) * h + y) * w + x);
            }
        }
    }
    return out;
}

namespace {

struct Point3 {
    double x, y, z;
};

Point3 to_physical(int64_t flat, const Dims3& dims, const Spacing3& spacing) {
    const int h = dims[1], w = dims[2];
    const int x = static_cast<int>(flat % w);
    const int y = static_cast<int>((flat / w) % h);
    const int z = static_cast<int>(flat / (static_cast<int64_t>(w) * h));
    return {x * spacing[0], y * spacing[1], z * spacing[2]};
}

// max over voxels of `from` outside `to` of the distance to the nearest
// voxel of `to` (squared, physical units).
double directed_sq(const std::vector<uint8_t>& from, const std::vector<uint8_t>& to,
                   const std::vector<Point3>& to_boundary, const Dims3& dims,
                   const Spacing3& spacing) {
    double worst = 0.0;
    const int64_t n = dims_numel(dims);
    for (int64_t i = 0; i < n; ++i) {
        if (!from[static_cast<size_t>(i)] || to[static_cast<size_t>(i)]) continue;
        const Point3 p = to_physical(i, dims, spacing);
        double best = std::numeric_limits<double>::infinity();
        for (const Point3& q : to_boundary) {
            const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
            const double dist = dx * dx + dy * dy + dz * dz;
            if (dist < best) best = dist;
        }
        if (best > worst) worst = best;
    }
    return worst;
}

}  // namespace

HausdorffResult hausdorff_distance(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred,
                                   const Dims3& dims, const Spacing3& spacing) {
    if (gt.size() != pred.size() || static_cast<int64_t>(gt.size()) != dims_numel(dims))
        throw std::invalid_argument("hausdorff_distance: mask sizes do not match dims");
    bool gt_any = false, pred_any = false;
    for (size_t i = 0; i < gt.size() && !(gt_any && pred_any); ++i) {
        gt_any = gt_any || gt[i] != 0;
        pred_any = pred_any || pred[i] != 0;
    }
    if (!gt_any || !pred_any) return {0.0, false};

    auto physical = [&](const std::vector<int64_t>& idx) {
        std::vector<Point3> pts;
        pts.reserve(idx.size());
        for (int64_t i : idx) pts.push_back(to_physical(i, dims, spacing));
        return pts;
    };
    const std::vector<Point3> gt_bd = physical(boundary_voxels(gt, dims));
    const std::vector<Point3> pred_bd = physical(boundary_voxels(pred, dims));

    const double fwd = directed_sq(gt, pred, pred_bd, dims, spacing);
    const double bwd = directed_sq(pred, gt, gt_bd, dims, spacing);
    return {std::sqrt(std::max(fwd, bwd)), true};
}

std::string class_name(int class_id, int num_classes) {
    static const char* segthor[] = {"background", "esophagus", "heart", "trachea", "aorta"};
    if (num_classes == 5 && class_id >= 0 && class_id < 5) return segthor[class_id];
    return "class" + std::to_string(class_id);
}

MetricsReport evaluate_volume(const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred,
                              const Dims3& dims, const Spacing3& spacing, int num_classes) {
    if (gt.size() != pred.size() || static_cast<int64_t>(gt.size()) != dims_numel(dims))
        throw std::invalid_argument("evaluate_volume: label map sizes do not match dims");
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] >= num_classes)
            throw std::invalid_argument("evaluate_volume: gt label " + std::to_string(gt[i]) +
                                        " out of range [0," + std::to_string(num_classes) + ")");
        if (pred[i] >= num_classes)
            throw std::invalid_argument("evaluate_volume: pred label " + std::to_string(pred[i]) +
                                        " out of range [0," + std::to_string(num_classes) + ")");
    }

    MetricsReport report;
    report.num_classes = num_classes;
    double dsc_sum = 0.0, hd_sum = 0.0;
    int hd_count = 0;
    for (int c = 1; c < num_classes; ++c) {
        std::vector<uint8_t> g(gt.size()), p(gt.size());
        int64_t gv = 0, pv = 0;
        for (size_t i = 0; i < gt.size(); ++i) {
            g[i] = gt[i] == c;
            p[i] = pred[i] == c;
            gv += g[i];
            pv += p[i];
        }
        ClassMetrics m;
        m.class_id = c;
        m.name = class_name(c, num_classes);
        m.dsc = dice_score(g, p);
        const HausdorffResult hd = hausdorff_distance(g, p, dims, spacing);
        m.hd_mm = hd.mm;
        m.hd_defined = hd.defined;
        m.gt_voxels = gv;
        m.pred_voxels = pv;
        dsc_sum += m.dsc;
        if (m.hd_defined) {
            hd_sum += m.hd_mm;
            ++hd_count;
        }
        report.per_class.push_back(std::move(m));
    }
    report.mean_dsc = report.per_class.empty() ? 0.0 : dsc_sum / static_cast<double>(report.per_class.size());
    report.mean_hd_defined = hd_count > 0;
    report.mean_hd_mm = hd_count > 0 ? hd_sum / hd_count : 0.0;
    return report;
}

std::string serialize_report(const MetricsReport& report) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "num_classes=" << report.num_classes << "\n";
    for (const ClassMetrics& m : report.per_class) {
        const std::string p = "class." + std::to_string(m.class_id) + ".";
        os << p << "name=" << m.name << "\n";
        os << p << "dsc=" << m.dsc << "\n";
        os << p << "hd_defined=" << (m.hd_defined ? 1 : 0) << "\n";
        os << p << "hd_mm=" << m.hd_mm << "\n";
        os << p << "gt_voxels=" << m.gt_voxels << "\n";
        os << p << "pred_voxels=" << m.pred_voxels << "\n";
    }
    os << "mean_dsc=" << report.mean_dsc << "\n";
    os << "mean_hd_defined=" << (report.mean_hd_defined ? 1 : 0) << "\n";
    os << "mean_hd_mm=" << report.mean_hd_mm << "\n";
    return os.str();
}

MetricsReport parse_report(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("parse_report: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&kv](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument("parse_report: missing key '" + key + "'");
        return it->second;
    };

    MetricsReport report;
    report.num_classes = std::stoi(get("num_classes"));
    for (int c = 1; c < report.num_classes; ++c) {
        const std::string p = "class." + std::to_string(c) + ".";
        ClassMetrics m;
        m.class_id = c;
        m.name = get(p + "name");
        m.dsc = std::stod(get(p + "dsc"));
        m.hd_defined = std::stoi(get(p + "hd_defined")) != 0;
        m.hd_mm = std::stod(get(p + "hd_mm"));
        m.gt_voxels = std::stoll(get(p + "gt_voxels"));
        m.pred_voxels = std::stoll(get(p + "pred_voxels"));
        report.per_class.push_back(std::move(m));
    }
    report.mean_dsc = std::stod(get("mean_dsc"));
    report.mean_hd_defined = std::stoi(get("mean_hd_defined")) != 0;
    report.mean_hd_mm = std::stod(get("mean_hd_mm"));
    return report;
}

std::string format_report_table(const MetricsReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(10) << "Metric";
    for (const ClassMetrics& m : report.per_class) {
        std::string name = m.name;
        if (!name.empty()) name[0] = static_cast<char>(std::toupper(name[0]));
        os << std::setw(12) << name;
    }
    os << std::setw(12) << "Mean" << "\n";

    os << std::left << std::setw(10) << "DSC";
    os << std::fixed << std::setprecision(4);
    for (const ClassMetrics& m : report.per_class) os << std::setw(12) << m.dsc;
    os << std::setw(12) << report.mean_dsc << "\n";

    os << std::left << std::setw(10) << "HD [mm]";
    for (const ClassMetrics& m : report.per_class) {
        if (m.hd_defined) {
            os << std::setw(12) << m.hd_mm;
        } else {
            os << std::setw(12) << "undefined";
        }
    }
    if (report.mean_hd_defined) {
        os << std::setw(12) << report.mean_hd_mm;
    } else {
        os << std::setw(12) << "undefined";
    }
    os << "\n";
    return os.str();
}

}  // namespace oarseg
