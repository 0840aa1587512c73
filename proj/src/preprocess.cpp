#include "oarseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oarseg {

Volume window_and_scale(const Volume& volume, double lo_hu, double hi_hu) {
    if (!(lo_hu < hi_hu)) throw std::invalid_argument("window_and_scale: need lo_hu < hi_hu");
    Volume out = volume;
    const double inv = 1.0 / (hi_hu - lo_hu);
    for (double& v : out.data) v = (std::clamp(v, lo_hu, hi_hu) - lo_hu) * inv;
    return out;
}

std::vector<double> clahe_slice(const std::vector<double>& slice, int height, int width,
                                double clip_limit, int tiles_y, int tiles_x, int bins) {
    if (static_cast<int64_t>(slice.size()) != static_cast<int64_t>(height) * width)
        throw std::invalid_argument("clahe_slice: slice size does not match dims");
    if (tiles_y < 1 || tiles_x < 1 || tiles_y > height || tiles_x > width)
        throw std::invalid_argument("clahe_slice: tile grid " + std::to_string(tiles_y) + "x" +
                                    std::to_string(tiles_x) + " does not fit a " +
                                    std::to_string(height) + "x" + std::to_string(width) + " slice");
    if (bins < 2) throw std::invalid_argument("clahe_slice: need at least 2 bins");

    auto bin_of = [bins](double v) {
        int b = static_cast<int>(v * bins);
        return std::clamp(b, 0, bins - 1);
    };

    // Tile boundaries: tile t covers [t*dim/tiles, (t+1)*dim/tiles).
    auto tile_lo = [](int t, int dim, int tiles) { return static_cast<int>(static_cast<int64_t>(t) * dim / tiles); };

    // Per-tile CDF mapping from clipped histograms.
    std::vector<std::vector<double>> mapping(static_cast<size_t>(tiles_y) * tiles_x);
    for (int ty = 0; ty < tiles_y; ++ty) {
        const int y0 = tile_lo(ty, height, tiles_y), y1 = tile_lo(ty + 1, height, tiles_y);
        for (int tx = 0; tx < tiles_x; ++tx) {
            const int x0 = tile_lo(tx, width, tiles_x), x1 = tile_lo(tx + 1, width, tiles_x);
            std::vector<double> hist(static_cast<size_t>(bins), 0.0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    hist[static_cast<size_t>(bin_of(slice[static_cast<size_t>(y) * width + x]))] += 1.0;
            const double total = static_cast<double>(y1 - y0) * (x1 - x0);

            if (std::isfinite(clip_limit)) {
                const double threshold = clip_limit * total / bins;
                double excess = 0.0;
                for (double& h : hist) {
                    if (h > threshold) {
                        excess += h - threshold;
                        h = threshold;
                    }
                }
                const double share = excess / bins;
                for (double& h : hist) h += share;
            }

            std::vector<double>& map = mapping[static_cast<size_t>(ty) * tiles_x + tx];
            map.resize(static_cast<size_t>(bins));
            double cum = 0.0;
            for (int b = 0; b < bins; ++b) {
                cum += hist[static_cast<size_t>(b)];
                map[static_cast<size_t>(b)] = cum / total;
            }
        }
    }

    // Bilinear interpolation between the four surrounding tile mappings,
    // clamped at the borders.
    auto axis_blend = [tile_lo](int pos, int dim, int tiles, int& t0, int& t1, double& frac) {
        const double center_offset = 0.5;
        double f = -1.0;
        t0 = 0;
        for (int t = 0; t < tiles; ++t) {
            const double center = (tile_lo(t, dim, tiles) + tile_lo(t + 1, dim, tiles)) / 2.0 - center_offset;
            if (pos >= center) {
                t0 = t;
                f = center;
            }
        }
        if (f < 0.0) {  // before the first tile center
            t0 = 0;
            t1 = 0;
            frac = 0.0;
            return;
        }
        t1 = std::min(t0 + 1, tiles - 1);
        if (t1 == t0) {
            frac = 0.0;
            return;
        }
        const double c0 = (tile_lo(t0, dim, tiles) + tile_lo(t0 + 1, dim, tiles)) / 2.0 - center_offset;
        const double c1 = (tile_lo(t1, dim, tiles) + tile_lo(t1 + 1, dim, tiles)) / 2.0 - center_offset;
        frac = (pos - c0) / (c1 - c0);
    };

    std::vector<double> out(slice.size());
    std::vector<int> tx0(static_cast<size_t>(width)), tx1(static_cast<size_t>(width));
    std::vector<double> fx(static_cast<size_t>(width));
    for (int x = 0; x < width; ++x)
        axis_blend(x, width, tiles_x, tx0[static_cast<size_t>(x)], tx1[static_cast<size_t>(x)], fx[static_cast<size_t>(x)]);

    for (int y = 0; y < height; ++y) {
        int ty0, ty1;
        double fy;
        axis_blend(y, height, tiles_y, ty0, ty1, fy);
        for (int x = 0; x < width; ++x) {
            const int b = bin_of(slice[static_cast<size_t>(y) * width + x]);
            const double m00 = mapping[static_cast<size_t>(ty0) * tiles_x + tx0[static_cast<size_t>(x)]][static_cast<size_t>(b)];
            const double m01 = mapping[static_cast<size_t>(ty0) * tiles_x + tx1[static_cast<size_t>(x)]][static_cast<size_t>(b)];
            const double m10 = mapping[static_cast<size_t>(ty1) * tiles_x + tx0[static_cast<size_t>(x)]][static_cast<size_t>(b)];
            const double m11 = mapping[static_cast<size_t>(ty1) * tiles_x + tx1[static_cast<size_t>(x)]][static_cast<size_t>(b)];
            const double fxv = fx[static_cast<size_t>(x)];
            const double top = m00 * (1.0 - fxv) + m01 * fxv;
            const double bot = m10 * (1.0 - fxv) + m11 * fxv;
            out[static_cast<size_t>(y) * width + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    return out;
}

Volume normalize_volume(const Volume& volume) {
    if (volume.numel() < 2) throw std::invalid_argument("normalize_volume: need at least 2 voxels");
    double mean = 0.0;
    for (double v : volume.data) mean += v;
    mean /= static_cast<double>(volume.data.size());
    double var = 0.0;
    for (double v : volume.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(volume.data.size());
    if (var == 0.0) throw std::invalid_argument("normalize_volume: zero variance");
    const double inv_std = 1.0 / std::sqrt(var);

    Volume out = volume;
    for (double& v : out.data) v = (v - mean) * inv_std;
    return out;
}

Volume center_crop(const Volume& volume, int out_h, int out_w) {
    const int h = volume.height(), w = volume.width(), d = volume.depth();
    if (out_h < 1 || out_w < 1 || out_h > h || out_w > w)
        throw std::invalid_argument("center_crop: crop " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " does not fit slice " +
                                    std::to_string(h) + "x" + std::to_string(w));
    const int oy = (h - out_h) / 2;
    const int ox = (w - out_w) / 2;

    Volume out;
    out.dims = {d, out_h, out_w};
    out.spacing = volume.spacing;
    out.data.resize(static_cast<size_t>(out.numel()));
    if (volume.has_labels()) out.labels.resize(out.data.size());
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < out_h; ++y) {
            const int64_t src = volume.index(z, y + oy, ox);
            const int64_t dst = out.index(z, y, 0);
            std::copy_n(volume.data.begin() + src, out_w, out.data.begin() + dst);
            if (volume.has_labels())
                std::copy_n(volume.labels.begin() + src, out_w, out.labels.begin() + dst);
        }
    }
    return out;
}

Volume flip_volume(const Volume& volume, FlipAxis axis) {
    Volume out = volume;
    const int d = volume.depth(), h = volume.height(), w = volume.width();
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int sy = axis == FlipAxis::vertical ? h - 1 - y : y;
                const int sx = axis == FlipAxis::horizontal ? w - 1 - x : x;
                out.at(z, y, x) = volume.at(z, sy, sx);
                if (volume.has_labels()) out.label_at(z, y, x) = volume.label_at(z, sy, sx);
            }
        }
    }
    return out;
}

Volume preprocess_volume(const Volume& volume, const PreprocessConfig& config) {
    Volume out = window_and_scale(volume, config.window_lo, config.window_hi);
    const int h = out.height(), w = out.width();
    std::vector<double> slice(static_cast<size_t>(h) * w);
    for (int z = 0; z < out.depth(); ++z) {
        const int64_t base = out.index(z, 0, 0);
        std::copy_n(out.data.begin() + base, slice.size(), slice.begin());
        const std::vector<double> eq = clahe_slice(slice, h, w, config.clahe_clip,
                                                   config.clahe_tiles_y, config.clahe_tiles_x,
                                                   config.clahe_bins);
        std::copy(eq.begin(), eq.end(), out.data.begin() + base);
    }
    out = normalize_volume(out);
    const int crop_h = std::min(config.crop_h, h);
    const int crop_w = std::min(config.crop_w, w);
    if (crop_h != h || crop_w != w) out = center_crop(out, crop_h, crop_w);
    return out;
}

}  // namespace oarseg
