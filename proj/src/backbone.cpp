#include "bgcrack/backbone.hpp"

#include <cmath>
#include <string>

#include "bgcrack/errors.hpp"

namespace bgcrack {

void BackboneConfig::validate() const {
    if (dw_kernel != 7) throw ConfigError("backbone: depth-wise kernel must be 7, got " + std::to_string(dw_kernel));
    if (stem_channels <= 0) throw ConfigError("backbone: stem width must be positive");
    for (std::size_t k = 0; k < stage_channels.size(); ++k) {
        if (stage_channels[k] <= 0) throw ConfigError("backbone: stage widths must be positive");
        if (k > 0 && stage_channels[k] <= stage_channels[k - 1])
            throw ConfigError("backbone: stage widths must strictly increase");
    }
}

void validate_image(const Tensor& x) {
    if (!x.defined() || x.rank() != 4 || x.dim(1) != 3)
        throw GeometryError("image must be [N,3,H,W], got " + (x.defined() ? shape_str(x.shape()) : "undefined"));
    if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0 || x.dim(2) == 0 || x.dim(3) == 0)
        throw GeometryError("image height and width must be positive multiples of 32, got " +
                            std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
    for (double v : x.data())
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw GeometryError("image values must be finite and within [0,1]");
}

Stem::Stem(int out_channels, int dw_kernel, Rng& rng)
    : conv_(3, out_channels, 3, rng, 2), dw_(out_channels, dw_kernel, rng) {
    register_module("conv", conv_);
    register_module("dw", dw_);
}

Tensor Stem::forward(const Tensor& img) const { return max_pool2x2(dw_.forward(conv_.forward(img))); }

ConvBlock::ConvBlock(int in_channels, int out_channels, int dw_kernel, Rng& rng)
    : conv_(in_channels, out_channels, 3, rng), bn_(out_channels), dw_(out_channels, dw_kernel, rng) {
    register_module("conv", conv_);
    register_module("bn", bn_);
    register_module("dw", dw_);
}

Tensor ConvBlock::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != conv_.in_channels())
        throw std::invalid_argument("conv block expects " + std::to_string(conv_.in_channels()) +
                                    " input channels, got " + shape_str(x.shape()));
    return silu(dw_.forward(bn_.forward(conv_.forward(x))));
}

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg), stem_((cfg.validate(), cfg.stem_channels), cfg.dw_kernel, rng) {
    register_module("stem", stem_);
    int in = cfg.stem_channels;
    for (int k = 0; k < 4; ++k) {
        blocks_.push_back(std::make_unique<ConvBlock>(in, cfg.stage_channels[k], cfg.dw_kernel, rng));
        register_module("block" + std::to_string(k + 1), *blocks_.back());
        in = cfg.stage_channels[k];
    }
}

PyramidFeatures Backbone::forward(const Tensor& img) {
    validate_image(img);
    PyramidFeatures out;
    out.x_s = stem_.forward(img);
    Tensor x = out.x_s;
    for (int k = 0; k < 4; ++k) {
        if (k > 0) x = max_pool2x2(x);
        x = blocks_[k]->forward(x);
        out.levels[k] = x;
    }
    return out;
}

}  // namespace bgcrack
