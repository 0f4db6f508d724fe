#include "bgcrack/decoder.hpp"

#include <stdexcept>
#include <string>

#include "bgcrack/errors.hpp"

namespace bgcrack {

namespace {

void require_same_geometry(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw GeometryError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor resize_like(const Tensor& x, const Tensor& ref) { return resize_bilinear(x, ref.dim(2), ref.dim(3)); }

}  // namespace

StreamEmbed::StreamEmbed(int in_channels, int embed_channels, Rng& rng, const GipConfig* gip)
    : pw_(in_channels, embed_channels, 1, rng), bn_(embed_channels), conv_(embed_channels, embed_channels, 3, rng) {
    register_module("pw", pw_);
    register_module("bn", bn_);
    register_module("conv", conv_);
    if (gip) {
        gip_ = std::make_unique<Gip>(embed_channels, *gip, rng);
        register_module("gip", *gip_);
    }
}

Tensor StreamEmbed::forward(const Tensor& x) {
    Tensor y = conv_.forward(silu(bn_.forward(pw_.forward(x))));
    return gip_ ? gip_->forward(y) : y;
}

Sfm::Sfm(int channels, Rng& rng) {
    for (int j = 1; j <= 3; ++j) {
        up_.push_back(std::make_unique<Conv2d>(channels, channels, 3, rng));
        up_bn_.push_back(std::make_unique<BatchNorm2d>(channels));
        register_module("up" + std::to_string(j), *up_.back());
        register_module("up" + std::to_string(j) + "_bn", *up_bn_.back());
    }
    for (int j = 2; j <= 4; ++j) {
        down_.push_back(std::make_unique<Conv2d>(channels, channels, 3, rng));
        down_bn_.push_back(std::make_unique<BatchNorm2d>(channels));
        register_module("down" + std::to_string(j), *down_.back());
        register_module("down" + std::to_string(j) + "_bn", *down_bn_.back());
    }
}

Levels Sfm::forward(const Levels& f) {
    for (int j = 1; j < 4; ++j) {
        if (f[j].dim(2) * 2 != f[j - 1].dim(2) || f[j].dim(3) * 2 != f[j - 1].dim(3) || f[j].dim(1) != f[0].dim(1))
            throw GeometryError("sfm: levels must halve in size and share a width, got " + shape_str(f[j - 1].shape()) +
                                " then " + shape_str(f[j].shape()));
    }
    Levels up, down;
    Tensor carry = f[3];
    for (int j = 3; j >= 1; --j) {  // j is the 1-based level being produced
        const Tensor& target = f[j - 1];
        up[j - 1] = up_bn_[j - 1]->forward(up_[j - 1]->forward(resize_bilinear(carry, target.dim(2), target.dim(3))));
        carry = add(up[j - 1], target);
    }
    carry = f[0];
    for (int j = 2; j <= 4; ++j) {
        down[j - 1] = down_bn_[j - 2]->forward(down_[j - 2]->forward(max_pool2x2(carry)));
        carry = add(down[j - 1], f[j - 1]);
    }
    return {add(up[0], f[0]), add(up[1], down[1]), add(up[2], down[2]), add(f[3], down[3])};
}

Com::Com() {
    for (int j = 1; j <= 4; ++j) {
        std::vector<double> init(static_cast<std::size_t>(6 - j), 0.1);
        init[0] = 1.0;
        we_[j - 1] = register_parameter("we" + std::to_string(j), Tensor::from({6 - j}, init));
        wb_[j - 1] = register_parameter("wb" + std::to_string(j), Tensor::from({6 - j}, init));
    }
}

StageState Com::forward(const StageState& s) const {
    StageState out;
    for (int j = 1; j <= 4; ++j) {
        const Tensor& e = s.e[j - 1];
        const Tensor& b = s.b[j - 1];
        require_same_geometry(e, b, "com");
        if (static_cast<int>(we_[j - 1].numel()) != 6 - j || static_cast<int>(wb_[j - 1].numel()) != 6 - j)
            throw std::invalid_argument("com: level " + std::to_string(j) + " weight vectors need " +
                                        std::to_string(6 - j) + " entries");
        std::vector<Tensor> e_terms{e}, b_terms{b};
        for (int k = j; k <= 4; ++k) {
            e_terms.push_back(mul(e, sigmoid(resize_like(s.b[k - 1], e))));
            b_terms.push_back(add(b, resize_like(s.e[k - 1], b)));
        }
        out.e[j - 1] = weighted_sum(e_terms, we_[j - 1]);
        out.b[j - 1] = weighted_sum(b_terms, wb_[j - 1]);
    }
    return out;
}

StageState dense_add(const StageState& current, const std::vector<StageState>& history) {
    StageState out = current;
    for (const StageState& h : history) {
        for (int j = 0; j < 4; ++j) {
            if (out.e[j].defined() != h.e[j].defined() || out.b[j].defined() != h.b[j].defined())
                throw GeometryError("dense_add: streams differ between phases");
            if (out.e[j].defined()) {
                require_same_geometry(out.e[j], h.e[j], "dense_add");
                out.e[j] = add(out.e[j], h.e[j]);
            }
            if (out.b[j].defined()) {
                require_same_geometry(out.b[j], h.b[j], "dense_add");
                out.b[j] = add(out.b[j], h.b[j]);
            }
        }
    }
    return out;
}

Ffm::Ffm(int embed_channels, int stem_channels, int head_channels, bool two_streams, Rng& rng)
    : two_streams_(two_streams),
      stem_fuse_(embed_channels + stem_channels, head_channels, 3, rng),
      up_half_(head_channels, head_channels, rng),
      refine_half_(head_channels, head_channels, 3, rng),
      up_full_(head_channels, head_channels / 2, rng),
      refine_full_(head_channels / 2, head_channels / 2, 3, rng),
      head_(head_channels / 2, 1, 1, rng) {
    const int streams = two_streams ? 2 : 1;
    for (int j = 1; j <= 4; ++j) {
        const int in = streams * embed_channels + (j < 4 ? embed_channels : 0);
        dw_.push_back(std::make_unique<DepthwiseConv2d>(in, 7, rng));
        conv_.push_back(std::make_unique<Conv2d>(in, embed_channels, 3, rng));
        register_module("dw" + std::to_string(j), *dw_.back());
        register_module("conv" + std::to_string(j), *conv_.back());
    }
    for (int j = 4; j >= 2; --j) {
        up_.push_back(std::make_unique<ConvTranspose2x2>(embed_channels, embed_channels, rng));
        register_module("up" + std::to_string(j), *up_.back());
    }
    register_module("stem_fuse", stem_fuse_);
    register_module("up_half", up_half_);
    register_module("refine_half", refine_half_);
    register_module("up_full", up_full_);
    register_module("refine_full", refine_full_);
    register_module("head", head_);
}

Tensor Ffm::forward(const Levels& own, const Levels& other, const Tensor& x_s, Tensor* features) {
    Tensor running;
    for (int j = 4; j >= 1; --j) {
        std::vector<Tensor> parts;
        if (running.defined()) {
            if (running.dim(2) != own[j - 1].dim(2) || running.dim(3) != own[j - 1].dim(3))
                throw GeometryError("ffm: level " + std::to_string(j) + " is " + shape_str(own[j - 1].shape()) +
                                    " but the upsampled map is " + shape_str(running.shape()));
            parts.push_back(running);
        }
        parts.push_back(own[j - 1]);
        if (two_streams_) parts.push_back(other[j - 1]);
        Tensor x = silu(conv_[j - 1]->forward(dw_[j - 1]->forward(concat_channels(parts))));
        running = j > 1 ? up_[4 - j]->forward(x) : x;
    }
    Tensor x = silu(stem_fuse_.forward(concat_channels({running, x_s})));
    x = silu(refine_half_.forward(up_half_.forward(x)));
    x = silu(refine_full_.forward(up_full_.forward(x)));
    if (features) *features = x;
    return head_.forward(x);
}

PredictionPair final_fuse(const Tensor& z_b_hat, const Tensor& z_e) {
    PredictionPair out;
    out.z_b_hat = z_b_hat;
    out.z_e = z_e;
    if (z_e.defined()) {
        require_same_geometry(z_b_hat, z_e, "final_fuse");
        out.z_b = add(z_b_hat, z_e);
        out.p_e = sigmoid(z_e);
    } else {
        out.z_b = z_b_hat;
    }
    out.p_b = sigmoid(out.z_b);
    return out;
}

}  // namespace bgcrack
