#include "bgcrack/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace bgcrack {

NamedTensors Module::named_parameters() const {
    NamedTensors out;
    collect("", out, false);
    return out;
}

NamedTensors Module::named_buffers() const {
    NamedTensors out;
    collect("", out, true);
    return out;
}

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void Module::collect(const std::string& prefix, NamedTensors& out, bool buffers) const {
    for (const auto& [name, t] : buffers ? buffers_ : params_) out.emplace_back(prefix + name, t);
    for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out, buffers);
}

void Module::set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->set_training(on);
}

void Module::zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
}

Tensor Module::register_parameter(std::string name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(std::move(name), t);
    return t;
}

Tensor Module::register_buffer(std::string name, Tensor t) {
    t.set_requires_grad(false);
    buffers_.emplace_back(std::move(name), t);
    return t;
}

void Module::register_module(std::string name, Module& child) { children_.emplace_back(std::move(name), &child); }

Tensor init_uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, int stride, int groups, bool bias,
               PadMode pad_mode)
    : in_(in_channels), out_(out_channels) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || groups <= 0 || in_channels % groups ||
        out_channels % groups) {
        throw std::invalid_argument("Conv2d: invalid geometry " + std::to_string(in_channels) + "->" +
                                    std::to_string(out_channels) + " k" + std::to_string(kernel) + " g" +
                                    std::to_string(groups));
    }
    spec_.stride = stride;
    spec_.padding = kernel / 2;
    spec_.groups = groups;
    spec_.pad_mode = pad_mode;
    const int fan_in = in_channels / groups * kernel * kernel;
    weight_ = register_parameter("weight", init_uniform_fan_in({out_channels, in_channels / groups, kernel, kernel},
                                                               fan_in, rng));
    if (bias) bias_ = register_parameter("bias", Tensor::zeros({out_channels}));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, spec_); }

ConvTranspose2x2::ConvTranspose2x2(int in_channels, int out_channels, Rng& rng) {
    weight_ = register_parameter("weight", init_uniform_fan_in({in_channels, out_channels, 2, 2}, in_channels, rng));
    bias_ = register_parameter("bias", Tensor::zeros({out_channels}));
}

Tensor ConvTranspose2x2::forward(const Tensor& x) const { return conv_transpose2x2(x, weight_, bias_); }

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps) : momentum_(momentum), eps_(eps) {
    gamma_ = register_parameter("weight", Tensor::full({channels}, 1.0));
    beta_ = register_parameter("bias", Tensor::zeros({channels}));
    running_mean_ = register_buffer("running_mean", Tensor::zeros({channels}));
    running_var_ = register_buffer("running_var", Tensor::full({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training(), momentum_, eps_);
}

ChannelLayerNorm::ChannelLayerNorm(int channels, double eps) : eps_(eps) {
    gamma_ = register_parameter("weight", Tensor::full({channels}, 1.0));
    beta_ = register_parameter("bias", Tensor::zeros({channels}));
}

Tensor ChannelLayerNorm::forward_nchw(const Tensor& x) const { return layer_norm_channels(x, gamma_, beta_, eps_); }
Tensor ChannelLayerNorm::forward_tokens(const Tensor& x) const { return layer_norm_last(x, gamma_, beta_, eps_); }

Linear::Linear(int in_features, int out_features, Rng& rng, bool bias) {
    weight_ = register_parameter("weight", init_uniform_fan_in({out_features, in_features}, in_features, rng));
    if (bias) bias_ = register_parameter("bias", Tensor::zeros({out_features}));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight_, bias_); }

}  // namespace bgcrack
