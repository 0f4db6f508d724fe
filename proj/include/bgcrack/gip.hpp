#pragma once

#include <memory>
#include <vector>

#include "bgcrack/nn.hpp"

namespace bgcrack {

// Global information perception: a frequency-domain branch (real 2D FFT with
// a learned spectral block) and a patch-transformer branch, fused with the
// input through three learnable weights.

struct GipConfig {
    int width = 0;         // expanded width d of the transformer branch; 0 means 2 * C
    int local_kernel = 3;  // n, the local depth-wise kernel; must cover a patch
    int patch_h = 2;
    int patch_w = 2;
    int depth = 2;
    int heads = 4;
    int mlp_ratio = 2;

    int resolved_width(int channels) const { return width > 0 ? width : 2 * channels; }
    void validate(int channels) const;
};

// Patches of an NCHW map regrouped so that attention runs across patches for
// each intra-patch position: tokens is [B * P, N, d], row (b * P + p, n)
// holding pixel p of patch n. Patches are numbered row-major over the patch
// grid, positions row-major inside a patch.
struct PatchGrid {
    Tensor tokens;
    int batch = 0;
    int channels = 0;
    int patch_h = 0, patch_w = 0;
    int grid_h = 0, grid_w = 0;

    int patch_area() const { return patch_h * patch_w; }
    int patch_count() const { return grid_h * grid_w; }
    double at(int b, int patch, int pos, int ch) const;
};

PatchGrid unfold_patches(const Tensor& x, int patch_h, int patch_w);
Tensor fold_patches(const PatchGrid& grid, int height, int width);

// BN -> depth-wise 7x7 -> BN -> point-wise (to a quarter) -> SiLU -> point-wise
// on the stacked real/imaginary spectrum, then inverse FFT and two 3x3 convs.
class DftBranch : public Module {
public:
    DftBranch(int channels, Rng& rng);
    Tensor forward(const Tensor& x);

private:
    int channels_;
    BatchNorm2d bn1_;
    DepthwiseConv2d dw_;
    BatchNorm2d bn2_;
    Conv2d pw1_, pw2_;
    Conv2d conv1_, conv2_;
};

// Pre-norm transformer layer over [S, T, d] token sequences.
class TransformerLayer : public Module {
public:
    TransformerLayer(int width, int heads, int mlp_ratio, Rng& rng);
    Tensor forward(const Tensor& x) const;

private:
    int heads_;
    ChannelLayerNorm ln1_, ln2_;
    Linear qkv_, proj_, fc1_, fc2_;
};

class Transformer : public Module {
public:
    Transformer(int width, int depth, int heads, int mlp_ratio, Rng& rng);
    PatchGrid forward(const PatchGrid& grid) const;

private:
    std::vector<std::unique_ptr<TransformerLayer>> layers_;
};

class TransformerBranch : public Module {
public:
    TransformerBranch(int channels, const GipConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x) const;

    Transformer& transformer() { return transformer_; }

private:
    GipConfig cfg_;
    Conv2d expand_;
    ChannelLayerNorm ln_a_;
    DepthwiseConv2d local_;
    ChannelLayerNorm ln_b_;
    Conv2d local_pw_;
    Transformer transformer_;
    Conv2d project_;
};

class Gip : public Module {
public:
    Gip(int channels, const GipConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x);

    DftBranch& dft() { return dft_; }
    TransformerBranch& transformer_branch() { return transformer_; }
    Tensor& mix() { return mix_; }  // [w1 (DFT), w2 (input), w3 (transformer)]
    Tensor fuse(const Tensor& fused);

private:
    DftBranch dft_;
    TransformerBranch transformer_;
    Tensor mix_;
    Conv2d fuse1_;
    BatchNorm2d fuse_bn_;
    Conv2d fuse2_;
};

}  // namespace bgcrack
