// Shared test utilities: finite-difference gradient oracle, random tensor
// builders, and mixed relative-error comparison.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "oarseg/rng.hpp"
#include "oarseg/tensor.hpp"

namespace oarseg_test {

using oarseg::Rng;
using oarseg::Shape;
using oarseg::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
    return t;
}

// Independent oracle: central differences (f(x+h) - f(x-h)) / 2h applied to
// every element of `x`, where `f` recomputes the scalar forward pass from
// the perturbed data.
inline std::vector<double> central_differences(Tensor& x, const std::function<double()>& f,
                                               double h = 1e-5) {
    std::vector<double> fd(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + h;
        const double fp = f();
        x.data()[i] = orig - h;
        const double fm = f();
        x.data()[i] = orig;
        fd[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    return fd;
}

// |a-b| / max(|a|, |b|, floor): relative for O(1) gradients, absolute below
// the floor so finite-difference noise on near-zero entries cannot blow up
// the ratio.
inline double max_rel_error(const double* analytic, const std::vector<double>& fd,
                            double floor = 1e-2) {
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double a = analytic[i], b = fd[i];
        const double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
        worst = std::max(worst, rel);
    }
    return worst;
}

// Scalarizer: sum of w .* out, so one backward pass checks the whole
// Jacobian against the FD oracle with a random fixed weighting.
inline double weighted_sum(const Tensor& out, const std::vector<double>& w) {
    double s = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) s += w[static_cast<size_t>(i)] * out.data()[i];
    return s;
}

inline std::vector<double> random_weights(int64_t n, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(n));
    for (auto& v : w) v = rng.normal(0.0, 1.0);
    return w;
}

}  // namespace oarseg_test
