#include "oarseg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace oarseg {

namespace {

struct ClassSums {
    std::vector<double> inter;  // sum_n y * yhat per class
    std::vector<double> sum_y;
    std::vector<double> sum_p;
    int n = 0, k = 0;
    int64_t plane = 0;
};

void validate_inputs(const Tensor& pred, const Tensor& target, const LossConfig& config) {
    if (pred.rank() != 4 || target.rank() != 4)
        throw std::invalid_argument("loss: pred and target must be [N,K,H,W], got " +
                                    shape_str(pred.shape()) + " and " + shape_str(target.shape()));
    if (pred.shape() != target.shape())
        throw std::invalid_argument("loss: pred shape " + shape_str(pred.shape()) +
                                    " does not match target " + shape_str(target.shape()));
    if (!(config.alpha >= 0.0) || !(config.beta >= 0.0) || !(config.smooth > 0.0))
        throw std::invalid_argument("loss: require alpha >= 0, beta >= 0, smooth > 0");

    const int k = target.dim(1);
    const int64_t plane = static_cast<int64_t>(target.dim(2)) * target.dim(3);
    const double* t = target.data();
    for (int ni = 0; ni < target.dim(0); ++ni) {
        const int64_t base = static_cast<int64_t>(ni) * k * plane;
        for (int64_t i = 0; i < plane; ++i) {
            double s = 0.0;
            for (int c = 0; c < k; ++c) {
                const double v = t[base + c * plane + i];
                if (v != 0.0 && v != 1.0)
                    throw std::invalid_argument("loss: target is not one-hot (entry " +
                                                std::to_string(v) + ")");
                s += v;
            }
            if (s != 1.0)
                throw std::invalid_argument("loss: target is not one-hot (pixel channel sum " +
                                            std::to_string(s) + ")");
        }
    }
}

ClassSums class_sums(const Tensor& pred, const Tensor& target) {
    ClassSums cs;
    cs.n = pred.dim(0);
    cs.k = pred.dim(1);
    cs.plane = static_cast<int64_t>(pred.dim(2)) * pred.dim(3);
    cs.inter.assign(cs.k, 0.0);
    cs.sum_y.assign(cs.k, 0.0);
    cs.sum_p.assign(cs.k, 0.0);
    for (int ni = 0; ni < cs.n; ++ni) {
        for (int c = 0; c < cs.k; ++c) {
            const int64_t base = (static_cast<int64_t>(ni) * cs.k + c) * cs.plane;
            const double* y = target.data() + base;
            const double* p = pred.data() + base;
            double inter = 0.0, sy = 0.0, sp = 0.0;
            for (int64_t i = 0; i < cs.plane; ++i) {
                inter += y[i] * p[i];
                sy += y[i];
                sp += p[i];
            }
            cs.inter[c] += inter;
            cs.sum_y[c] += sy;
            cs.sum_p[c] += sp;
        }
    }
    return cs;
}

int first_class(const LossConfig& config) { return config.include_background ? 0 : 1; }

}  // namespace

Tensor soft_dice_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config) {
    validate_inputs(pred, target, config);
    const ClassSums cs = class_sums(pred, target);
    const double f = config.dice_factor_two ? 2.0 : 1.0;
    const double s = config.smooth;
    const int c0 = first_class(config);
    if (c0 >= cs.k) throw std::invalid_argument("loss: no classes left after excluding background");
    const double inv_classes = 1.0 / static_cast<double>(cs.k - c0);

    double mean_term = 0.0;
    std::vector<double> num(cs.k, 0.0), den(cs.k, 0.0);
    for (int c = c0; c < cs.k; ++c) {
        num[c] = f * cs.inter[c] + s;
        den[c] = cs.sum_y[c] + cs.sum_p[c] + s;
        mean_term += num[c] / den[c];
    }
    Tensor out = Tensor::scalar(1.0 - mean_term * inv_classes);

    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor p = pred, y = target, o = out;
        p.ensure_grad();
        tape->record([p, y, o, num, den, f, c0, inv_classes, cs]() mutable {
            const double g = o.grad()[0];
            for (int ni = 0; ni < cs.n; ++ni) {
                for (int c = c0; c < cs.k; ++c) {
                    const int64_t base = (static_cast<int64_t>(ni) * cs.k + c) * cs.plane;
                    const double* yv = y.data() + base;
                    double* gp = p.grad() + base;
                    const double inv_den = 1.0 / den[c];
                    const double a_over_b2 = num[c] * inv_den * inv_den;
                    for (int64_t i = 0; i < cs.plane; ++i) {
                        // d(term_c)/d(pred_i) = (f*y_i*B - A) / B^2
                        const double dterm = f * yv[i] * inv_den - a_over_b2;
                        gp[i] += -g * inv_classes * dterm;
                    }
                }
            }
        });
    }
    return out;
}

Tensor tversky_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config) {
    validate_inputs(pred, target, config);
    const ClassSums cs = class_sums(pred, target);
    const double s = config.smooth;
    const double alpha = config.alpha, beta = config.beta;
    const int c0 = first_class(config);
    if (c0 >= cs.k) throw std::invalid_argument("loss: no classes left after excluding background");
    const double inv_classes = 1.0 / static_cast<double>(cs.k - c0);

    double mean_index = 0.0;
    std::vector<double> num(cs.k, 0.0), den(cs.k, 0.0);
    for (int c = c0; c < cs.k; ++c) {
        const double tp = cs.inter[c];
        const double fp = cs.sum_p[c] - cs.inter[c];
        const double fn = cs.sum_y[c] - cs.inter[c];
        num[c] = tp + s;
        den[c] = tp + alpha * fp + beta * fn + s;
        mean_index += num[c] / den[c];
    }
    Tensor out = Tensor::scalar(1.0 - mean_index * inv_classes);

    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        out.ensure_grad();
        Tensor p = pred, y = target, o = out;
        p.ensure_grad();
        tape->record([p, y, o, num, den, alpha, beta, c0, inv_classes, cs]() mutable {
            const double g = o.grad()[0];
            for (int ni = 0; ni < cs.n; ++ni) {
                for (int c = c0; c < cs.k; ++c) {
                    const int64_t base = (static_cast<int64_t>(ni) * cs.k + c) * cs.plane;
                    const double* yv = y.data() + base;
                    double* gp = p.grad() + base;
                    const double inv_den = 1.0 / den[c];
                    const double a_over_b2 = num[c] * inv_den * inv_den;
                    for (int64_t i = 0; i < cs.plane; ++i) {
                        // dTP = y_i, dFP = 1 - y_i, dFN = -y_i
                        const double d_den = yv[i] + alpha * (1.0 - yv[i]) - beta * yv[i];
                        const double dindex = yv[i] * inv_den - a_over_b2 * d_den;
                        gp[i] += -g * inv_classes * dindex;
                    }
                }
            }
        });
    }
    return out;
}

Tensor segmentation_loss(Tape* tape, const Tensor& pred, const Tensor& target, const LossConfig& config) {
    return config.kind == LossKind::dice ? soft_dice_loss(tape, pred, target, config)
                                         : tversky_loss(tape, pred, target, config);
}

const char* loss_kind_name(LossKind kind) { return kind == LossKind::dice ? "dice" : "tversky"; }

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "dice") return LossKind::dice;
    if (name == "tversky") return LossKind::tversky;
    throw std::invalid_argument("unknown loss kind '" + name + "' (expected dice or tversky)");
}

}  // namespace oarseg
