#include "oarseg/tensor.hpp"

#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace oarseg {

// Activation and gradient buffers are tens of MB and turn over every
// training step; keeping them on the heap instead of per-allocation mmap
// avoids refaulting the pages each step.
void tune_allocator() {
#ifdef __GLIBC__
    static std::once_flag once;
    std::call_once(once, []() {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
    });
#endif
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4)
        throw std::invalid_argument("tensor rank must be 1..4, got " + shape_str(shape));
    for (int d : shape)
        if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.impl_->data) x = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() {
    for (auto& g : impl_->grad) g = 0.0;
}

int64_t Tensor::flat_index(std::initializer_list<int> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw std::invalid_argument("index rank does not match tensor rank");
    int64_t flat = 0;
    size_t i = 0;
    for (int v : idx) {
        if (v < 0 || v >= s[i]) throw std::out_of_range("tensor index out of range");
        flat = flat * s[i] + v;
        ++i;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<int> idx) { return impl_->data[static_cast<size_t>(flat_index(idx))]; }
double Tensor::at(std::initializer_list<int> idx) const { return impl_->data[static_cast<size_t>(flat_index(idx))]; }

Tensor Tensor::clone() const {
    return from_data(impl_->shape, impl_->data, impl_->requires_grad);
}

bool Tensor::all_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tape::backward(Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace oarseg
