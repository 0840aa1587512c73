// Dense double-precision tensors with reverse-mode autodiff bookkeeping.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace oarseg {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Process-wide allocator tuning for the large, frequently recycled tensor
// buffers. Idempotent; called from model building and the CLI entry.
void tune_allocator();

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
};
}  // namespace detail

// Value-semantics handle to shared storage: copies alias the same buffer.
// Data is row-major; 4-D tensors follow the [batch, channel, height, width]
// convention. Storage is immutable after the forward pass except for
// gradient accumulation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[i]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& data_vec() { return impl_->data; }
    const std::vector<double>& data_vec() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }

    // Gradient buffer congruent with data; allocated zero-filled on demand.
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void ensure_grad();
    void zero_grad();
    double* grad() { return impl_->grad.data(); }
    const double* grad() const { return impl_->grad.data(); }
    std::vector<double>& grad_vec() { return impl_->grad; }

    // Slow convenience accessors for tests and small shapes.
    double& at(std::initializer_list<int> idx);
    double at(std::initializer_list<int> idx) const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    Tensor clone() const;  // deep copy of data (grad not copied)

    bool all_finite() const;

private:
    std::shared_ptr<detail::TensorImpl> impl_;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    int64_t flat_index(std::initializer_list<int> idx) const;
};

// Records the forward pass as an ordered list of backward rules. Nodes are
// appended in forward (topological) order; backward() replays them once in
// reverse, accumulating into Tensor gradients. A tape and its tensors are
// confined to one thread; independent tapes may run in parallel.
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor
    // reached by the recorded forward pass. `loss` must be scalar.
    void backward(Tensor& loss);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace oarseg
