#pragma once

#include <array>
#include <memory>
#include <vector>

#include "bgcrack/nn.hpp"

namespace bgcrack {

struct BackboneConfig {
    int stem_channels = 16;
    std::array<int, 4> stage_channels{32, 64, 96, 128};
    int dw_kernel = 7;

    void validate() const;
};

// Stem output X_S (stride 4) and the four block outputs at strides 4, 8, 16, 32.
struct PyramidFeatures {
    Tensor x_s;
    std::array<Tensor, 4> levels;
};

// Throws GeometryError unless x is [N,3,H,W] with H, W multiples of 32 and
// every value finite in [0,1].
void validate_image(const Tensor& x);

// conv 3x3 stride 2 -> depth-wise 7x7 -> max-pool 2x2: total stride 4.
class Stem : public Module {
public:
    Stem(int out_channels, int dw_kernel, Rng& rng);
    Tensor forward(const Tensor& img) const;

    Conv2d& conv() { return conv_; }
    DepthwiseConv2d& dw() { return dw_; }

private:
    Conv2d conv_;
    DepthwiseConv2d dw_;
};

// conv 3x3 -> batch norm -> depth-wise 7x7 -> SiLU, spatial size preserved.
class ConvBlock : public Module {
public:
    ConvBlock(int in_channels, int out_channels, int dw_kernel, Rng& rng);
    Tensor forward(const Tensor& x);

    Conv2d& conv() { return conv_; }
    BatchNorm2d& bn() { return bn_; }
    DepthwiseConv2d& dw() { return dw_; }

private:
    Conv2d conv_;
    BatchNorm2d bn_;
    DepthwiseConv2d dw_;
};

class Backbone : public Module {
public:
    Backbone(const BackboneConfig& cfg, Rng& rng);

    PyramidFeatures forward(const Tensor& img);

    Stem& stem() { return stem_; }
    ConvBlock& block(int k) { return *blocks_.at(static_cast<std::size_t>(k)); }
    const BackboneConfig& config() const { return cfg_; }

private:
    BackboneConfig cfg_;
    Stem stem_;
    std::vector<std::unique_ptr<ConvBlock>> blocks_;
};

}  // namespace bgcrack
