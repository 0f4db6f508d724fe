#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bgcrack/ops.hpp"
#include "bgcrack/tensor.hpp"

namespace bgcrack {

using Rng = std::mt19937_64;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Base class for anything holding learnable parameters or buffers. Children
// are registered by reference and must outlive the parent registration, so
// modules are neither copyable nor movable.
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    NamedTensors named_parameters() const;
    NamedTensors named_buffers() const;
    std::vector<Tensor> parameters() const;

    void set_training(bool on);
    bool training() const { return training_; }

    void zero_grad();

protected:
    Tensor register_parameter(std::string name, Tensor t);
    Tensor register_buffer(std::string name, Tensor t);
    void register_module(std::string name, Module& child);

private:
    void collect(const std::string& prefix, NamedTensors& out, bool buffers) const;

    bool training_ = true;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::pair<std::string, Tensor>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

// Uniform(-b, b) with b = 1 / sqrt(fan_in).
Tensor init_uniform_fan_in(Shape shape, int fan_in, Rng& rng);

class Conv2d : public Module {
public:
    Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, int stride = 1, int groups = 1,
           bool bias = true, PadMode pad_mode = PadMode::Zeros);

    Tensor forward(const Tensor& x) const;

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    int in_, out_;
    Conv2dSpec spec_;
    Tensor weight_;
    Tensor bias_;
};

// Depth-wise k x k convolution (groups == channels).
class DepthwiseConv2d : public Conv2d {
public:
    DepthwiseConv2d(int channels, int kernel, Rng& rng, PadMode pad_mode = PadMode::Zeros)
        : Conv2d(channels, channels, kernel, rng, 1, channels, true, pad_mode) {}
};

class ConvTranspose2x2 : public Module {
public:
    ConvTranspose2x2(int in_channels, int out_channels, Rng& rng);
    Tensor forward(const Tensor& x) const;
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    Tensor weight_;
    Tensor bias_;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x);

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

private:
    double momentum_, eps_;
    Tensor gamma_, beta_, running_mean_, running_var_;
};

// Layer norm across channels at each pixel (NCHW) or across the last axis
// (token layout), with one affine pair per channel.
class ChannelLayerNorm : public Module {
public:
    explicit ChannelLayerNorm(int channels, double eps = 1e-5);
    Tensor forward_nchw(const Tensor& x) const;
    Tensor forward_tokens(const Tensor& x) const;

private:
    double eps_;
    Tensor gamma_, beta_;
};

class Linear : public Module {
public:
    Linear(int in_features, int out_features, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const;
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    Tensor weight_;
    Tensor bias_;
};

}  // namespace bgcrack
