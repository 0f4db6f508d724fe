#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bgcrack {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward;

    std::vector<double>& grad_buffer();
};

}  // namespace detail

// Reverse-mode autograd is recorded only while grad mode is enabled.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Dense row-major double tensor with an optional autograd history. Copies
// share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int dim(int axis) const;
    int rank() const;
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;

    // NCHW accessors for rank-4 tensors.
    double& at(int n, int c, int h, int w);
    double at(int n, int c, int h, int w) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    bool has_grad() const;
    std::span<double> grad();  // allocates zeros on first access
    std::span<const double> grad() const;
    void zero_grad();

    // Seeds d(this)/d(this) = 1 and propagates through the recorded graph.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

using BackwardFn = std::function<void(TensorImpl& out)>;

// Wraps a freshly computed value into a tensor and records `fn` as its
// backward step when any input requires grad and grad mode is on.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   BackwardFn fn);
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                   BackwardFn fn);

inline bool wants_grad(const Tensor& t) { return t.defined() && t.impl()->requires_grad; }

}  // namespace detail

}  // namespace bgcrack
