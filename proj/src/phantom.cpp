#include "oarseg/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "oarseg/nifti.hpp"
#include "oarseg/rng.hpp"

namespace oarseg {

void PhantomSpec::validate() const {
    for (int d : dims)
        if (d < 16) throw std::invalid_argument("phantom: dims must be >= 16 in every axis");
    if (noise_std < 0.0) throw std::invalid_argument("phantom: noise_std must be >= 0");
    for (double s : spacing)
        if (!(s > 0.0)) throw std::invalid_argument("phantom: spacing components must be > 0");
}

namespace {

struct Geometry {
    // body
    double body_ry, body_rx;
    // heart ellipsoid
    double heart_cy, heart_cx, heart_cz, heart_ay, heart_ax, heart_az;
    // trachea tube
    double tr_y, tr_x, tr_r, tr_z_lo;
    // esophagus wavy tube
    double eso_y, eso_amp, eso_freq, eso_phase, eso_r;
    // aorta limbs + arch
    double ao_x, ao_desc_y, ao_asc_y, ao_r, ao_z_top, ao_asc_z_lo, ao_arch_rz;
};

Geometry draw_geometry(Rng& rng, int dimD, int dimH, int dimW) {
    const double h = dimH, w = dimW, d = dimD;
    const double m = std::min(h, w);
    Geometry g;
    g.body_ry = (0.42 + rng.uniform(-0.01, 0.01)) * h;
    g.body_rx = (0.46 + rng.uniform(-0.01, 0.01)) * w;

    g.heart_cy = (0.66 + rng.uniform(-0.01, 0.01)) * h;
    g.heart_cx = (0.40 + rng.uniform(-0.015, 0.015)) * w;
    g.heart_cz = (0.40 + rng.uniform(-0.02, 0.02)) * d;
    g.heart_ay = 0.135 * h * rng.uniform(0.95, 1.05);
    g.heart_ax = 0.165 * w * rng.uniform(0.95, 1.05);
    g.heart_az = 0.30 * d * rng.uniform(0.95, 1.05);

    g.tr_y = (0.32 + rng.uniform(-0.01, 0.01)) * h;
    g.tr_x = (0.50 + rng.uniform(-0.01, 0.01)) * w;
    g.tr_r = std::max(0.040 * m * rng.uniform(0.95, 1.05), 1.9);
    g.tr_z_lo = 0.50 * d;

    g.eso_y = g.tr_y + (0.105 + rng.uniform(-0.005, 0.005)) * h;
    g.eso_amp = (0.018 + rng.uniform(-0.004, 0.004)) * w;
    g.eso_freq = rng.uniform(1.0, 2.0);
    g.eso_phase = rng.uniform(0.0, 2.0 * M_PI);
    g.eso_r = std::max(0.023 * m * rng.uniform(0.95, 1.05), 1.6);

    g.ao_x = (0.66 + rng.uniform(-0.01, 0.01)) * w;
    g.ao_desc_y = (0.60 + rng.uniform(-0.01, 0.01)) * h;
    g.ao_asc_y = (0.36 + rng.uniform(-0.01, 0.01)) * h;
    g.ao_r = std::max(0.042 * m * rng.uniform(0.95, 1.05), 1.8);
    g.ao_z_top = 0.62 * d;
    g.ao_asc_z_lo = 0.40 * d;
    g.ao_arch_rz = 0.14 * d * rng.uniform(0.95, 1.05);
    return g;
}

}  // namespace

Volume generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int d = spec.dims[0], h = spec.dims[1], w = spec.dims[2];
    if (h < 48 || w < 48 || d < 16)
        throw std::invalid_argument("phantom: dims " + std::to_string(d) + "x" + std::to_string(h) +
                                    "x" + std::to_string(w) +
                                    " are too small to fit the structures (need >= 16x48x48)");

    Rng rng(spec.seed);
    const Geometry g = draw_geometry(rng, d, h, w);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

    Volume volume;
    volume.dims = spec.dims;
    volume.spacing = spec.spacing;
    volume.data.assign(static_cast<size_t>(volume.numel()), spec.air_hu);
    volume.labels.assign(volume.data.size(), kLabelBackground);

    // body: elliptical cross-section tapering toward the first/last slices
    std::vector<double> taper(static_cast<size_t>(d));
    for (int z = 0; z < d; ++z) {
        const double t = d > 1 ? 2.0 * z / (d - 1) - 1.0 : 0.0;
        taper[static_cast<size_t>(z)] = std::sqrt(std::max(0.55, 1.0 - 0.35 * t * t));
    }
    for (int z = 0; z < d; ++z) {
        const double ry = g.body_ry * taper[static_cast<size_t>(z)];
        const double rx = g.body_rx * taper[static_cast<size_t>(z)];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) volume.at(z, y, x) = spec.body_hu;
            }
        }
    }

    auto stamp = [&](int z, int y, int x, double hu, uint8_t label) {
        if (z < 0 || z >= d || y < 0 || y >= h || x < 0 || x >= w) return;
        if (volume.label_at(z, y, x) != kLabelBackground) return;
        volume.at(z, y, x) = hu;
        volume.label_at(z, y, x) = label;
    };

    // heart: solid ellipsoid
    for (int z = 0; z < d; ++z) {
        const double dz = (z - g.heart_cz) / g.heart_az;
        if (dz * dz > 1.0) continue;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = (y - g.heart_cy) / g.heart_ay;
                const double dx = (x - g.heart_cx) / g.heart_ax;
                if (dy * dy + dx * dx + dz * dz <= 1.0) stamp(z, y, x, spec.heart_hu, kLabelHeart);
            }
        }
    }

    auto stamp_disc = [&](int z, double yc, double xc, double r, double hu, uint8_t label) {
        const int y_lo = std::max(0, static_cast<int>(std::floor(yc - r)));
        const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(yc + r)));
        const int x_lo = std::max(0, static_cast<int>(std::floor(xc - r)));
        const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(xc + r)));
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x)
                if ((y - yc) * (y - yc) + (x - xc) * (x - xc) <= r * r)
                    stamp(z, y, x, hu, label);
    };

    // trachea: straight air-like tube in the upper half
    for (int z = static_cast<int>(std::ceil(g.tr_z_lo)); z < d; ++z)
        stamp_disc(z, g.tr_y, g.tr_x, g.tr_r, spec.trachea_hu, kLabelTrachea);

    // esophagus: thin wavy tube behind the trachea, full depth
    for (int z = 0; z < d; ++z) {
        const double phase = 2.0 * M_PI * g.eso_freq * z / (d - 1) + g.eso_phase;
        const double xc = g.tr_x + g.eso_amp * std::sin(phase);
        stamp_disc(z, g.eso_y, xc, g.eso_r, spec.esophagus_hu, kLabelEsophagus);
    }

    // aorta: descending limb, ascending limb, and an arch joining them
    for (int z = 0; z <= static_cast<int>(g.ao_z_top) && z < d; ++z)
        stamp_disc(z, g.ao_desc_y, g.ao_x, g.ao_r, spec.aorta_hu, kLabelAorta);
    for (int z = static_cast<int>(std::floor(g.ao_asc_z_lo)); z <= static_cast<int>(g.ao_z_top) && z < d; ++z)
        stamp_disc(z, g.ao_asc_y, g.ao_x, g.ao_r, spec.aorta_hu, kLabelAorta);
    {
        const double arch_cy = (g.ao_desc_y + g.ao_asc_y) / 2.0;
        const double arch_ry = (g.ao_desc_y - g.ao_asc_y) / 2.0;
        const double rz_ball = std::max(1.4, g.ao_r * spec.spacing[0] / spec.spacing[2]);
        const int steps = 96;
        for (int s = 0; s <= steps; ++s) {
            const double theta = M_PI * s / steps;
            const double yc = arch_cy + arch_ry * std::cos(theta);
            const double zc = g.ao_z_top + g.ao_arch_rz * std::sin(theta);
            const int z_lo = std::max(0, static_cast<int>(std::floor(zc - rz_ball)));
            const int z_hi = std::min(d - 1, static_cast<int>(std::ceil(zc + rz_ball)));
            for (int z = z_lo; z <= z_hi; ++z) {
                const double dz = (z - zc) / rz_ball;
                if (dz * dz > 1.0) continue;
                const double r_slice = g.ao_r * std::sqrt(1.0 - dz * dz);
                if (r_slice < 0.5) continue;
                stamp_disc(z, yc, g.ao_x, r_slice, spec.aorta_hu, kLabelAorta);
            }
        }
    }

    // additive Gaussian noise on the image only; quantize to float32 so the
    // on-disk representation is lossless
    for (double& v : volume.data) {
        const double noisy = v + rng.normal(0.0, spec.noise_std);
        v = static_cast<double>(static_cast<float>(noisy));
    }
    return volume;
}

std::vector<std::string> generate_dataset(int n_cases, const PhantomSpec& spec_template,
                                          uint64_t seed, const std::string& out_dir) {
    if (n_cases < 1) throw std::invalid_argument("phantom: n_cases must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("phantom: cannot create dataset directory '" + out_dir + "'");

    std::vector<std::string> case_dirs;
    for (int i = 0; i < n_cases; ++i) {
        PhantomSpec spec = spec_template;
        spec.seed = seed + static_cast<uint64_t>(i);
        const Volume volume = generate_phantom(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "case_%03d", i);
        const std::string case_dir = (fs::path(out_dir) / name).string();
        write_case(volume, case_dir);
        case_dirs.push_back(name);
    }
    return case_dirs;
}

}  // namespace oarseg
