#include "oarseg/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace oarseg {

AugmentParams draw_augment_params(uint64_t seed, const AugmentRanges& ranges) {
    Rng rng(seed);
    AugmentParams p;
    p.rng_seed = seed;
    p.zoom = rng.uniform(ranges.zoom_lo, ranges.zoom_hi);
    p.rotation_deg = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg);
    p.shift_y = rng.uniform(-ranges.shift_frac, ranges.shift_frac);
    p.shift_x = rng.uniform(-ranges.shift_frac, ranges.shift_frac);
    p.shear_deg = rng.uniform(-ranges.shear_deg, ranges.shear_deg);
    p.jitter_y = rng.uniform(-ranges.crop_jitter_px, ranges.crop_jitter_px);
    p.jitter_x = rng.uniform(-ranges.crop_jitter_px, ranges.crop_jitter_px);
    if (ranges.draw_flips) {
        p.flip_h = rng.coin();
        p.flip_v = rng.coin();
    }
    return p;
}

namespace {

using Mat3 = std::array<double, 9>;  // row-major 3x3 homogeneous, acting on (x, y, 1)

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            c[static_cast<size_t>(i * 3 + j)] = a[static_cast<size_t>(i * 3)] * b[static_cast<size_t>(j)] +
                                                a[static_cast<size_t>(i * 3 + 1)] * b[static_cast<size_t>(3 + j)] +
                                                a[static_cast<size_t>(i * 3 + 2)] * b[static_cast<size_t>(6 + j)];
    return c;
}

Mat3 translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty, 0, 0, 1}; }

Mat3 inverse_affine(const Mat3& m) {
    const double a = m[0], b = m[1], c = m[2];
    const double d = m[3], e = m[4], f = m[5];
    const double det = a * e - b * d;
    if (det == 0.0) throw std::invalid_argument("augment: singular transform");
    const double ia = e / det, ib = -b / det;
    const double id = -d / det, ie = a / det;
    return {ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f), 0, 0, 1};
}

}  // namespace

std::pair<std::vector<double>, std::vector<uint8_t>> random_augment(
    const std::vector<double>& image, const std::vector<uint8_t>& labels, int height, int width,
    const AugmentParams& params) {
    if (static_cast<int64_t>(image.size()) != static_cast<int64_t>(height) * width)
        throw std::invalid_argument("random_augment: image size does not match dims");
    if (!labels.empty() && labels.size() != image.size())
        throw std::invalid_argument("random_augment: labels not congruent with image");

    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    const double theta = params.rotation_deg * M_PI / 180.0;
    const double shear = std::tan(params.shear_deg * M_PI / 180.0);
    const double ct = std::cos(theta), st = std::sin(theta);

    Mat3 fwd = translation(cx, cy);
    fwd = matmul(fwd, translation(params.shift_x * width + params.jitter_x,
                                  params.shift_y * height + params.jitter_y));
    fwd = matmul(fwd, Mat3{ct, -st, 0, st, ct, 0, 0, 0, 1});
    fwd = matmul(fwd, Mat3{1, shear, 0, 0, 1, 0, 0, 0, 1});
    fwd = matmul(fwd, Mat3{params.zoom, 0, 0, 0, params.zoom, 0, 0, 0, 1});
    fwd = matmul(fwd, translation(-cx, -cy));
    const Mat3 inv = inverse_affine(fwd);

    double fill = image.empty() ? 0.0 : image[0];
    for (double v : image) fill = std::min(fill, v);

    std::vector<double> out_image(image.size());
    std::vector<uint8_t> out_labels(labels.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double sx = inv[0] * x + inv[1] * y + inv[2];
            const double sy = inv[3] * x + inv[4] * y + inv[5];
            const size_t o = static_cast<size_t>(y) * width + static_cast<size_t>(x);

            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            auto pixel = [&](int yy, int xx) {
                if (yy < 0 || yy >= height || xx < 0 || xx >= width) return fill;
                return image[static_cast<size_t>(yy) * width + static_cast<size_t>(xx)];
            };
            const double top = pixel(y0, x0) * (1.0 - fx) + pixel(y0, x0 + 1) * fx;
            const double bot = pixel(y0 + 1, x0) * (1.0 - fx) + pixel(y0 + 1, x0 + 1) * fx;
            out_image[o] = top * (1.0 - fy) + bot * fy;

            if (!labels.empty()) {
                const int nx = static_cast<int>(std::llround(sx));
                const int ny = static_cast<int>(std::llround(sy));
                out_labels[o] = (ny < 0 || ny >= height || nx < 0 || nx >= width)
                                    ? 0
                                    : labels[static_cast<size_t>(ny) * width + static_cast<size_t>(nx)];
            }
        }
    }

    auto swap_pixels = [&](size_t a, size_t b) {
        std::swap(out_image[a], out_image[b]);
        if (!labels.empty()) std::swap(out_labels[a], out_labels[b]);
    };
    if (params.flip_h) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width / 2; ++x)
                swap_pixels(static_cast<size_t>(y) * width + x,
                            static_cast<size_t>(y) * width + (width - 1 - x));
    }
    if (params.flip_v) {
        for (int y = 0; y < height / 2; ++y)
            for (int x = 0; x < width; ++x)
                swap_pixels(static_cast<size_t>(y) * width + x,
                            static_cast<size_t>(height - 1 - y) * width + x);
    }

    return {std::move(out_image), std::move(out_labels)};
}

}  // namespace oarseg
