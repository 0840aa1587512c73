#include "oarseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace oarseg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

bool want_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int n, ci, h, w;
    int co, k;
    int ho, wo;
    int pad, dil;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   int padding, int dilation) {
    require(input.rank() == 4, "conv2d: input must be [N,Ci,H,W], got " + shape_str(input.shape()));
    require(kernel.rank() == 4, "conv2d: kernel must be [Co,Ci,k,k], got " + shape_str(kernel.shape()));
    require(bias.rank() == 1, "conv2d: bias must be [Co], got " + shape_str(bias.shape()));
    ConvDims d;
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = kernel.dim(0);
    d.k = kernel.dim(2);
    d.pad = padding;
    d.dil = dilation;
    require(kernel.dim(2) == kernel.dim(3), "conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    require(d.k % 2 == 1, "conv2d: kernel size must be odd, got " + std::to_string(d.k));
    require(dilation >= 1, "conv2d: dilation must be >= 1, got " + std::to_string(dilation));
    require(padding >= 0, "conv2d: padding must be >= 0, got " + std::to_string(padding));
    require(kernel.dim(1) == d.ci,
            "conv2d: input channels " + shape_str(input.shape()) + " do not match kernel " +
                shape_str(kernel.shape()));
    require(bias.dim(0) == d.co, "conv2d: bias size " + shape_str(bias.shape()) +
                                     " does not match kernel output channels " + shape_str(kernel.shape()));
    const int span = dilation * (d.k - 1);
    d.ho = d.h + 2 * padding - span;
    d.wo = d.w + 2 * padding - span;
    require(d.ho >= 1 && d.wo >= 1,
            "conv2d: kernel span " + std::to_string(span + 1) + " exceeds padded input " +
                shape_str(input.shape()) + " with padding " + std::to_string(padding));
    return d;
}

void conv_forward(const ConvDims& d, const double* __restrict in, const double* __restrict ker,
                  const double* __restrict bias, double* __restrict out) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
    const int64_t ker_plane = static_cast<int64_t>(d.k) * d.k;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < d.co; ++co) {
            double* out_p = out + (static_cast<int64_t>(n) * d.co + co) * out_plane;
            const double b = bias[co];
            for (int64_t i = 0; i < out_plane; ++i) out_p[i] = b;
            for (int ci = 0; ci < d.ci; ++ci) {
                const double* in_p = in + (static_cast<int64_t>(n) * d.ci + ci) * in_plane;
                const double* w_p = ker + (static_cast<int64_t>(co) * d.ci + ci) * ker_plane;
                for (int ky = 0; ky < d.k; ++ky) {
                    const int oy_shift = ky * d.dil - d.pad;
                    const int oy_lo = std::max(0, -oy_shift);
                    const int oy_hi = std::min(d.ho, d.h - oy_shift);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const double* __restrict in_row = in_p + static_cast<int64_t>(oy + oy_shift) * d.w;
                        double* __restrict out_row = out_p + static_cast<int64_t>(oy) * d.wo;
                        for (int kx = 0; kx < d.k; ++kx) {
                            const double wv = w_p[ky * d.k + kx];
                            const int ox_shift = kx * d.dil - d.pad;
                            const int ox_lo = std::max(0, -ox_shift);
                            const int ox_hi = std::min(d.wo, d.w - ox_shift);
                            const double* src = in_row + ox_shift;
                            for (int ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wv * src[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward_input(const ConvDims& d, const double* __restrict gout,
                         const double* __restrict ker, double* __restrict gin) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
    const int64_t ker_plane = static_cast<int64_t>(d.k) * d.k;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n) {
        for (int ci = 0; ci < d.ci; ++ci) {
            double* gin_p = gin + (static_cast<int64_t>(n) * d.ci + ci) * in_plane;
            for (int co = 0; co < d.co; ++co) {
                const double* gout_p = gout + (static_cast<int64_t>(n) * d.co + co) * out_plane;
                const double* w_p = ker + (static_cast<int64_t>(co) * d.ci + ci) * ker_plane;
                for (int ky = 0; ky < d.k; ++ky) {
                    const int oy_shift = d.pad - ky * d.dil;  // oy = iy + oy_shift
                    const int iy_lo = std::max(0, -oy_shift);
                    const int iy_hi = std::min(d.h, d.ho - oy_shift);
                    for (int iy = iy_lo; iy < iy_hi; ++iy) {
                        const double* __restrict gout_row = gout_p + static_cast<int64_t>(iy + oy_shift) * d.wo;
                        double* __restrict gin_row = gin_p + static_cast<int64_t>(iy) * d.w;
                        for (int kx = 0; kx < d.k; ++kx) {
                            const double wv = w_p[ky * d.k + kx];
                            const int ox_shift = d.pad - kx * d.dil;
                            const int ix_lo = std::max(0, -ox_shift);
                            const int ix_hi = std::min(d.w, d.wo - ox_shift);
                            const double* src = gout_row + ox_shift;
                            for (int ix = ix_lo; ix < ix_hi; ++ix) gin_row[ix] += wv * src[ix];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward_kernel(const ConvDims& d, const double* __restrict in,
                          const double* __restrict gout, double* __restrict gker) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
    const int64_t ker_plane = static_cast<int64_t>(d.k) * d.k;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < d.co; ++co) {
        for (int ci = 0; ci < d.ci; ++ci) {
            double* gw_p = gker + (static_cast<int64_t>(co) * d.ci + ci) * ker_plane;
            for (int ky = 0; ky < d.k; ++ky) {
                const int oy_shift = ky * d.dil - d.pad;  // iy = oy + oy_shift
                const int oy_lo = std::max(0, -oy_shift);
                const int oy_hi = std::min(d.ho, d.h - oy_shift);
                for (int kx = 0; kx < d.k; ++kx) {
                    const int ox_shift = kx * d.dil - d.pad;
                    const int ox_lo = std::max(0, -ox_shift);
                    const int ox_hi = std::min(d.wo, d.w - ox_shift);
                    // four independent accumulator chains; fixed summation
                    // order keeps results bit-identical run to run
                    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
                    for (int n = 0; n < d.n; ++n) {
                        const double* in_p = in + (static_cast<int64_t>(n) * d.ci + ci) * in_plane;
                        const double* gout_p = gout + (static_cast<int64_t>(n) * d.co + co) * out_plane;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            const double* __restrict in_row = in_p + static_cast<int64_t>(oy + oy_shift) * d.w + ox_shift;
                            const double* __restrict gout_row = gout_p + static_cast<int64_t>(oy) * d.wo;
                            int ox = ox_lo;
                            for (; ox + 4 <= ox_hi; ox += 4) {
                                acc0 += gout_row[ox] * in_row[ox];
                                acc1 += gout_row[ox + 1] * in_row[ox + 1];
                                acc2 += gout_row[ox + 2] * in_row[ox + 2];
                                acc3 += gout_row[ox + 3] * in_row[ox + 3];
                            }
                            for (; ox < ox_hi; ++ox) acc0 += gout_row[ox] * in_row[ox];
                        }
                    }
                    gw_p[ky * d.k + kx] += (acc0 + acc1) + (acc2 + acc3);
                }
            }
        }
    }
}

void conv_backward_bias(const ConvDims& d, const double* __restrict gout, double* __restrict gbias) {
    const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < d.co; ++co) {
        double acc = 0.0;
        for (int n = 0; n < d.n; ++n) {
            const double* gout_p = gout + (static_cast<int64_t>(n) * d.co + co) * out_plane;
            for (int64_t i = 0; i < out_plane; ++i) acc += gout_p[i];
        }
        gbias[co] += acc;
    }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int padding, int dilation) {
    const ConvDims d = conv_dims(input, kernel, bias, padding, dilation);
    Tensor out = Tensor::zeros({d.n, d.co, d.ho, d.wo});
    conv_forward(d, input.data(), kernel.data(), bias.data(), out.data());

    if (want_grad(tape, {&input, &kernel, &bias})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, ker = kernel, b = bias, o = out;
        if (in.requires_grad()) in.ensure_grad();
        if (ker.requires_grad()) ker.ensure_grad();
        if (b.requires_grad()) b.ensure_grad();
        tape->record([d, in, ker, b, o]() mutable {
            if (in.requires_grad()) conv_backward_input(d, o.grad(), ker.data(), in.grad());
            if (ker.requires_grad()) conv_backward_kernel(d, in.data(), o.grad(), ker.grad());
            if (b.requires_grad()) conv_backward_bias(d, o.grad(), b.grad());
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

Tensor relu(Tape* tape, const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const double* x = input.data();
    double* y = out.data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, o = out;
        in.ensure_grad();
        tape->record([in, o]() mutable {
            const double* x = in.data();
            const double* g = o.grad();
            double* gx = in.grad();
            const int64_t n = in.numel();
            for (int64_t i = 0; i < n; ++i)
                if (x[i] > 0.0) gx[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

Tensor batchnorm2d(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, const BatchNormOptions& options, Mode mode) {
    require(input.rank() == 4, "batchnorm2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == c,
            "batchnorm2d: gamma must be [C]=" + std::to_string(c) + ", got " + shape_str(gamma.shape()));
    require(beta.rank() == 1 && beta.dim(0) == c,
            "batchnorm2d: beta must be [C]=" + std::to_string(c) + ", got " + shape_str(beta.shape()));
    const int64_t plane = static_cast<int64_t>(h) * w;
    const int64_t per_channel = static_cast<int64_t>(n) * plane;

    std::vector<double> mean(c), invstd(c);
    if (mode == Mode::train) {
        require(per_channel >= 2, "batchnorm2d: train mode needs N*H*W >= 2, got " +
                                      std::to_string(per_channel));
        if (!state.initialized) {
            state.running_mean = Tensor::zeros({c});
            state.running_var = Tensor::full({c}, 1.0);
            state.initialized = true;
        }
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const double* p = input.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(per_channel);
            double sq = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const double* p = input.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double dlt = p[i] - mu;
                    sq += dlt * dlt;
                }
            }
            const double var = sq / static_cast<double>(per_channel);
            mean[ci] = mu;
            invstd[ci] = 1.0 / std::sqrt(var + options.eps);
            const double m = options.momentum;
            state.running_mean.data()[ci] = (1.0 - m) * state.running_mean.data()[ci] + m * mu;
            state.running_var.data()[ci] = (1.0 - m) * state.running_var.data()[ci] + m * var;
        }
    } else {
        require(state.initialized, "batchnorm2d: eval mode with uninitialized running statistics");
        for (int ci = 0; ci < c; ++ci) {
            mean[ci] = state.running_mean.data()[ci];
            invstd[ci] = 1.0 / std::sqrt(state.running_var.data()[ci] + options.eps);
        }
    }

    Tensor out = Tensor::zeros(input.shape());
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const double* xp = input.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            double* yp = out.data() + (static_cast<int64_t>(ni) * c + ci) * plane;
            const double mu = mean[ci], is = invstd[ci], g = gamma.data()[ci], b = beta.data()[ci];
            for (int64_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * is + b;
        }
    }

    if (want_grad(tape, {&input, &gamma, &beta})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, ga = gamma, be = beta, o = out;
        if (in.requires_grad()) in.ensure_grad();
        if (ga.requires_grad()) ga.ensure_grad();
        if (be.requires_grad()) be.ensure_grad();
        const bool batch_stats = (mode == Mode::train);
        tape->record([in, ga, be, o, mean, invstd, batch_stats, n, c, plane, per_channel]() mutable {
#pragma omp parallel for schedule(static)
            for (int ci = 0; ci < c; ++ci) {
                const double mu = mean[ci], is = invstd[ci], g = ga.data()[ci];
                double s1 = 0.0, s2 = 0.0;  // sum(gy), sum(gy * xhat)
                for (int ni = 0; ni < n; ++ni) {
                    const int64_t base = (static_cast<int64_t>(ni) * c + ci) * plane;
                    const double* gy = o.grad() + base;
                    const double* xp = in.data() + base;
                    for (int64_t i = 0; i < plane; ++i) {
                        s1 += gy[i];
                        s2 += gy[i] * (xp[i] - mu) * is;
                    }
                }
                if (ga.requires_grad()) ga.grad()[ci] += s2;
                if (be.requires_grad()) be.grad()[ci] += s1;
                if (in.requires_grad()) {
                    const double inv_m = 1.0 / static_cast<double>(per_channel);
                    for (int ni = 0; ni < n; ++ni) {
                        const int64_t base = (static_cast<int64_t>(ni) * c + ci) * plane;
                        const double* gy = o.grad() + base;
                        const double* xp = in.data() + base;
                        double* gx = in.grad() + base;
                        if (batch_stats) {
                            for (int64_t i = 0; i < plane; ++i) {
                                const double xhat = (xp[i] - mu) * is;
                                gx[i] += g * is * (gy[i] - s1 * inv_m - xhat * s2 * inv_m);
                            }
                        } else {
                            for (int64_t i = 0; i < plane; ++i) gx[i] += g * is * gy[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

Tensor maxpool2d(Tape* tape, const Tensor& input) {
    require(input.rank() == 4, "maxpool2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(h % 2 == 0 && w % 2 == 0,
            "maxpool2d: spatial dims must be even, got " + shape_str(input.shape()));
    const int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));

    const int64_t in_plane = static_cast<int64_t>(h) * w;
    const int64_t out_plane = static_cast<int64_t>(ho) * wo;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const int64_t in_base = (static_cast<int64_t>(ni) * c + ci) * in_plane;
            const int64_t out_base = (static_cast<int64_t>(ni) * c + ci) * out_plane;
            const double* xp = input.data() + in_base;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    // first maximal element in row-major window order
                    int64_t best_idx = static_cast<int64_t>(2 * oy) * w + 2 * ox;
                    double best = xp[best_idx];
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int64_t idx = static_cast<int64_t>(2 * oy + dy) * w + 2 * ox + dx;
                            if (xp[idx] > best) {
                                best = xp[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data()[out_base + static_cast<int64_t>(oy) * wo + ox] = best;
                    (*argmax)[static_cast<size_t>(out_base + static_cast<int64_t>(oy) * wo + ox)] =
                        in_base + best_idx;
                }
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, o = out;
        in.ensure_grad();
        tape->record([in, o, argmax]() mutable {
            const double* g = o.grad();
            double* gx = in.grad();
            const int64_t m = o.numel();
            for (int64_t i = 0; i < m; ++i) gx[(*argmax)[static_cast<size_t>(i)]] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// upsample2d
// ---------------------------------------------------------------------------

Tensor upsample2d(Tape* tape, const Tensor& input) {
    require(input.rank() == 4, "upsample2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
    const int64_t planes = static_cast<int64_t>(n) * c;
    const int64_t in_plane = static_cast<int64_t>(h) * w;
    const int64_t out_plane = in_plane * 4;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
        const double* xp = input.data() + p * in_plane;
        double* yp = out.data() + p * out_plane;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = xp[static_cast<int64_t>(y) * w + x];
                double* row0 = yp + static_cast<int64_t>(2 * y) * 2 * w + 2 * x;
                double* row1 = row0 + 2 * w;
                row0[0] = v;
                row0[1] = v;
                row1[0] = v;
                row1[1] = v;
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, o = out;
        in.ensure_grad();
        tape->record([in, o, planes, in_plane, out_plane, h, w]() mutable {
            for (int64_t p = 0; p < planes; ++p) {
                const double* gp = o.grad() + p * out_plane;
                double* gx = in.grad() + p * in_plane;
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        const double* row0 = gp + static_cast<int64_t>(2 * y) * 2 * w + 2 * x;
                        const double* row1 = row0 + 2 * w;
                        gx[static_cast<int64_t>(y) * w + x] += row0[0] + row0[1] + row1[0] + row1[1];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat_channels
// ---------------------------------------------------------------------------

Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
    require(a.rank() == 4 && b.rank() == 4, "concat_channels: inputs must be [N,C,H,W], got " +
                                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "concat_channels: non-channel extents differ: " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const int64_t plane = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros({n, ca + cb, h, w});
    for (int ni = 0; ni < n; ++ni) {
        double* dst = out.data() + static_cast<int64_t>(ni) * (ca + cb) * plane;
        const double* pa = a.data() + static_cast<int64_t>(ni) * ca * plane;
        const double* pb = b.data() + static_cast<int64_t>(ni) * cb * plane;
        std::copy(pa, pa + ca * plane, dst);
        std::copy(pb, pb + cb * plane, dst + ca * plane);
    }

    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor ta = a, tb = b, o = out;
        if (ta.requires_grad()) ta.ensure_grad();
        if (tb.requires_grad()) tb.ensure_grad();
        tape->record([ta, tb, o, n, ca, cb, plane]() mutable {
            for (int ni = 0; ni < n; ++ni) {
                const double* g = o.grad() + static_cast<int64_t>(ni) * (ca + cb) * plane;
                if (ta.requires_grad()) {
                    double* gp = ta.grad() + static_cast<int64_t>(ni) * ca * plane;
                    for (int64_t i = 0; i < ca * plane; ++i) gp[i] += g[i];
                }
                if (tb.requires_grad()) {
                    double* gp = tb.grad() + static_cast<int64_t>(ni) * cb * plane;
                    const double* gb = g + ca * plane;
                    for (int64_t i = 0; i < cb * plane; ++i) gp[i] += gb[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// add / mul
// ---------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "add: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor ta = a, tb = b, o = out;
        if (ta.requires_grad()) ta.ensure_grad();
        if (tb.requires_grad()) tb.ensure_grad();
        tape->record([ta, tb, o]() mutable {
            const double* g = o.grad();
            const int64_t n = o.numel();
            if (ta.requires_grad()) {
                double* gp = ta.grad();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
            if (tb.requires_grad()) {
                double* gp = tb.grad();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mul: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];

    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor ta = a, tb = b, o = out;
        if (ta.requires_grad()) ta.ensure_grad();
        if (tb.requires_grad()) tb.ensure_grad();
        tape->record([ta, tb, o]() mutable {
            const double* g = o.grad();
            const int64_t n = o.numel();
            if (ta.requires_grad()) {
                double* gp = ta.grad();
                const double* pb = tb.data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * pb[i];
            }
            if (tb.requires_grad()) {
                double* gp = tb.grad();
                const double* pa = ta.data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * pa[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax_channels
// ---------------------------------------------------------------------------

Tensor softmax_channels(Tape* tape, const Tensor& input) {
    require(input.rank() == 4, "softmax_channels: input must be [N,K,H,W], got " + shape_str(input.shape()));
    const int n = input.dim(0), k = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(k >= 2, "softmax_channels: needs K >= 2 channels, got " + std::to_string(k));
    Tensor out = Tensor::zeros(input.shape());
    const int64_t plane = static_cast<int64_t>(h) * w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ni = 0; ni < n; ++ni) {
        for (int y = 0; y < h; ++y) {
            const int64_t base = static_cast<int64_t>(ni) * k * plane + static_cast<int64_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const double* xp = input.data() + base + x;
                double* yp = out.data() + base + x;
                double mx = xp[0];
                for (int c = 1; c < k; ++c) mx = std::max(mx, xp[c * plane]);
                double denom = 0.0;
                for (int c = 0; c < k; ++c) {
                    const double e = std::exp(xp[c * plane] - mx);
                    yp[c * plane] = e;
                    denom += e;
                }
                const double inv = 1.0 / denom;
                for (int c = 0; c < k; ++c) yp[c * plane] *= inv;
            }
        }
    }

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, o = out;
        in.ensure_grad();
        tape->record([in, o, n, k, plane, h, w]() mutable {
#pragma omp parallel for collapse(2) schedule(static)
            for (int ni = 0; ni < n; ++ni) {
                for (int y = 0; y < h; ++y) {
                    const int64_t base = static_cast<int64_t>(ni) * k * plane + static_cast<int64_t>(y) * w;
                    for (int x = 0; x < w; ++x) {
                        const double* yp = o.data() + base + x;
                        const double* gy = o.grad() + base + x;
                        double* gx = in.grad() + base + x;
                        double dot = 0.0;
                        for (int c = 0; c < k; ++c) dot += gy[c * plane] * yp[c * plane];
                        for (int c = 0; c < k; ++c)
                            gx[c * plane] += yp[c * plane] * (gy[c * plane] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// sum
// ---------------------------------------------------------------------------

Tensor sum(Tape* tape, const Tensor& input) {
    double s = 0.0;
    const double* x = input.data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) s += x[i];
    Tensor out = Tensor::scalar(s);

    if (want_grad(tape, {&input})) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor in = input, o = out;
        in.ensure_grad();
        tape->record([in, o]() mutable {
            const double g = o.grad()[0];
            double* gx = in.grad();
            const int64_t n = in.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

}  // namespace oarseg
