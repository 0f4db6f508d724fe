#include "bgcrack/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace bgcrack {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<double>& detail::TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->value.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::dim(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
std::size_t Tensor::numel() const { return impl_->value.size(); }

std::span<double> Tensor::data() { return impl_->value; }
std::span<const double> Tensor::data() const { return impl_->value; }

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->value[0];
}

double& Tensor::at(int n, int c, int h, int w) {
    const auto& s = impl_->shape;
    return impl_->value[((static_cast<std::size_t>(n) * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at(int n, int c, int h, int w) const {
    const auto& s = impl_->shape;
    return impl_->value[((static_cast<std::size_t>(n) * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<double> Tensor::grad() { return impl_->grad_buffer(); }
std::span<const double> Tensor::grad() const { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::backward() const {
    if (numel() != 1) throw std::logic_error("backward() requires a scalar, got " + shape_str(shape()));

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TensorImpl* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

Tensor Tensor::detach() const { return Tensor::from(shape(), impl_->value, false); }

Tensor Tensor::clone() const { return Tensor::from(shape(), impl_->value, impl_->requires_grad); }

namespace detail {

template <typename Inputs>
static Tensor make_result_impl(Shape shape, std::vector<double> value, const Inputs& inputs,
                               BackwardFn fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    if (impl->value.size() != shape_numel(impl->shape)) {
        throw std::logic_error("make_result: value size does not match shape " + shape_str(impl->shape));
    }
    if (g_grad_enabled) {
        for (const Tensor& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                impl->requires_grad = true;
                break;
            }
        }
    }
    if (impl->requires_grad) {
        for (const Tensor& in : inputs)
            if (in.defined()) impl->parents.push_back(in.impl_ptr());
        impl->backward = std::move(fn);
    }
    return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
    return make_result_impl(std::move(shape), std::move(value), inputs, std::move(fn));
}

Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                   BackwardFn fn) {
    return make_result_impl(std::move(shape), std::move(value), inputs, std::move(fn));
}

}  // namespace detail

}  // namespace bgcrack
