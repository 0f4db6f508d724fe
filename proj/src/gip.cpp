#include "bgcrack/gip.hpp"

#include <string>

#include "bgcrack/errors.hpp"

namespace bgcrack {

void GipConfig::validate(int channels) const {
    const int d = resolved_width(channels);
    if (d <= channels) throw ConfigError("gip: expanded width " + std::to_string(d) + " must exceed " + std::to_string(channels));
    if (patch_h <= 0 || patch_w <= 0 || patch_h > local_kernel || patch_w > local_kernel)
        throw ConfigError("gip: patch size must be positive and no larger than the local kernel");
    if (heads <= 0 || d % heads != 0)
        throw ConfigError("gip: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    if (depth < 0 || mlp_ratio <= 0) throw ConfigError("gip: invalid transformer depth or MLP ratio");
}

double PatchGrid::at(int b, int patch, int pos, int ch) const {
    const std::size_t row = (static_cast<std::size_t>(b) * patch_area() + pos) * patch_count() + patch;
    return tokens.data()[row * channels + ch];
}

namespace {

// Flat NCHW index feeding token element (b, p, n, ch).
std::shared_ptr<std::vector<std::size_t>> unfold_index(int batch, int channels, int height, int width, int ph, int pw) {
    const int gh = height / ph, gw = width / pw, area = ph * pw, count = gh * gw;
    auto idx = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(batch) * channels * height * width);
    std::size_t o = 0;
    for (int b = 0; b < batch; ++b)
        for (int p = 0; p < area; ++p)
            for (int n = 0; n < count; ++n)
                for (int ch = 0; ch < channels; ++ch, ++o) {
                    const int y = (n / gw) * ph + p / pw;
                    const int x = (n % gw) * pw + p % pw;
                    (*idx)[o] = ((static_cast<std::size_t>(b) * channels + ch) * height + y) * width + x;
                }
    return idx;
}

void check_patch_geometry(int height, int width, int ph, int pw) {
    if (ph <= 0 || pw <= 0 || height % ph != 0 || width % pw != 0)
        throw GeometryError("patch size " + std::to_string(ph) + "x" + std::to_string(pw) + " does not tile " +
                            std::to_string(height) + "x" + std::to_string(width));
}

}  // namespace

PatchGrid unfold_patches(const Tensor& x, int patch_h, int patch_w) {
    if (x.rank() != 4) throw std::invalid_argument("unfold_patches: expected NCHW tensor");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check_patch_geometry(h, w, patch_h, patch_w);
    PatchGrid grid;
    grid.batch = b;
    grid.channels = c;
    grid.patch_h = patch_h;
    grid.patch_w = patch_w;
    grid.grid_h = h / patch_h;
    grid.grid_w = w / patch_w;
    grid.tokens = gather(x, unfold_index(b, c, h, w, patch_h, patch_w),
                         {b * grid.patch_area(), grid.patch_count(), c});
    return grid;
}

Tensor fold_patches(const PatchGrid& grid, int height, int width) {
    check_patch_geometry(height, width, grid.patch_h, grid.patch_w);
    if (height / grid.patch_h != grid.grid_h || width / grid.patch_w != grid.grid_w)
        throw GeometryError("fold_patches: grid does not match " + std::to_string(height) + "x" + std::to_string(width));
    const auto fwd = unfold_index(grid.batch, grid.channels, height, width, grid.patch_h, grid.patch_w);
    auto inv = std::make_shared<std::vector<std::size_t>>(fwd->size());
    for (std::size_t i = 0; i < fwd->size(); ++i) (*inv)[(*fwd)[i]] = i;
    return gather(grid.tokens, inv, {grid.batch, grid.channels, height, width});
}

DftBranch::DftBranch(int channels, Rng& rng)
    : channels_(channels),
      bn1_(2 * channels),
      dw_(2 * channels, 7, rng),
      bn2_(2 * channels),
      pw1_(2 * channels, std::max(1, 2 * channels / 4), 1, rng),
      pw2_(std::max(1, 2 * channels / 4), 2 * channels, 1, rng),
      conv1_(channels, channels, 3, rng),
      conv2_(channels, channels, 3, rng) {
    register_module("bn1", bn1_);
    register_module("dw", dw_);
    register_module("bn2", bn2_);
    register_module("pw1", pw1_);
    register_module("pw2", pw2_);
    register_module("conv1", conv1_);
    register_module("conv2", conv2_);
}

Tensor DftBranch::forward(const Tensor& x) {
    const int h = x.dim(2), w = x.dim(3);
    auto [re, im] = rfft2(x);
    Tensor z = concat_channels({re, im});
    z = pw2_.forward(silu(pw1_.forward(bn2_.forward(dw_.forward(bn1_.forward(z))))));
    Tensor spatial = irfft2(slice_channels(z, 0, channels_), slice_channels(z, channels_, channels_), h, w);
    return conv2_.forward(silu(conv1_.forward(spatial)));
}

TransformerLayer::TransformerLayer(int width, int heads, int mlp_ratio, Rng& rng)
    : heads_(heads),
      ln1_(width),
      ln2_(width),
      qkv_(width, 3 * width, rng),
      proj_(width, width, rng),
      fc1_(width, mlp_ratio * width, rng),
      fc2_(mlp_ratio * width, width, rng) {
    register_module("ln1", ln1_);
    register_module("qkv", qkv_);
    register_module("proj", proj_);
    register_module("ln2", ln2_);
    register_module("fc1", fc1_);
    register_module("fc2", fc2_);
}

Tensor TransformerLayer::forward(const Tensor& x) const {
    Tensor h = add(x, proj_.forward(self_attention(qkv_.forward(ln1_.forward_tokens(x)), heads_)));
    return add(h, fc2_.forward(silu(fc1_.forward(ln2_.forward_tokens(h)))));
}

Transformer::Transformer(int width, int depth, int heads, int mlp_ratio, Rng& rng) {
    for (int i = 0; i < depth; ++i) {
        layers_.push_back(std::make_unique<TransformerLayer>(width, heads, mlp_ratio, rng));
        register_module("layer" + std::to_string(i), *layers_.back());
    }
}

PatchGrid Transformer::forward(const PatchGrid& grid) const {
    PatchGrid out = grid;
    for (const auto& layer : layers_) out.tokens = layer->forward(out.tokens);
    return out;
}

TransformerBranch::TransformerBranch(int channels, const GipConfig& cfg, Rng& rng)
    : cfg_((cfg.validate(channels), cfg)),
      expand_(channels, cfg.resolved_width(channels), 1, rng),
      ln_a_(cfg.resolved_width(channels)),
      local_(cfg.resolved_width(channels), cfg.local_kernel, rng, PadMode::Replicate),
      ln_b_(cfg.resolved_width(channels)),
      local_pw_(cfg.resolved_width(channels), cfg.resolved_width(channels), 1, rng),
      transformer_(cfg.resolved_width(channels), cfg.depth, cfg.heads, cfg.mlp_ratio, rng),
      project_(cfg.resolved_width(channels), channels, 1, rng) {
    register_module("expand", expand_);
    register_module("ln_a", ln_a_);
    register_module("local", local_);
    register_module("ln_b", ln_b_);
    register_module("local_pw", local_pw_);
    register_module("transformer", transformer_);
    register_module("project", project_);
}

Tensor TransformerBranch::forward(const Tensor& x) const {
    const int h = x.dim(2), w = x.dim(3);
    check_patch_geometry(h, w, cfg_.patch_h, cfg_.patch_w);
    Tensor m1 = expand_.forward(x);
    Tensor m2 = local_pw_.forward(ln_b_.forward_nchw(local_.forward(ln_a_.forward_nchw(m1))));
    PatchGrid grid = transformer_.forward(unfold_patches(m2, cfg_.patch_h, cfg_.patch_w));
    return project_.forward(fold_patches(grid, h, w));
}

Gip::Gip(int channels, const GipConfig& cfg, Rng& rng)
    : dft_(channels, rng),
      transformer_(channels, cfg, rng),
      fuse1_(channels, channels, 3, rng),
      fuse_bn_(channels),
      fuse2_(channels, channels, 3, rng) {
    register_module("dft", dft_);
    register_module("transformer", transformer_);
    mix_ = register_parameter("mix", Tensor::full({3}, 1.0));
    register_module("fuse1", fuse1_);
    register_module("fuse_bn", fuse_bn_);
    register_module("fuse2", fuse2_);
}

Tensor Gip::fuse(const Tensor& fused) { return silu(fuse2_.forward(fuse_bn_.forward(fuse1_.forward(fused)))); }

Tensor Gip::forward(const Tensor& x) {
    return fuse(weighted_sum({dft_.forward(x), x, transformer_.forward(x)}, mix_));
}

}  // namespace bgcrack
