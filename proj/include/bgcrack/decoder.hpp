#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "bgcrack/gip.hpp"
#include "bgcrack/nn.hpp"

namespace bgcrack {

using Levels = std::array<Tensor, 4>;

// Edge features E_j and body features B_j of one decoder phase, level j at
// stride 2^(j+1). The edge array is empty (undefined tensors) when the edge
// stream is ablated.
struct StageState {
    Levels e;
    Levels b;
};

// Point-wise conv to the embedding width -> BN -> SiLU -> 3x3 conv, optionally
// followed by a GIP module (BODY_3, BODY_4).
class StreamEmbed : public Module {
public:
    StreamEmbed(int in_channels, int embed_channels, Rng& rng, const GipConfig* gip = nullptr);
    Tensor forward(const Tensor& x);

    Gip* gip() { return gip_.get(); }

private:
    Conv2d pw_;
    BatchNorm2d bn_;
    Conv2d conv_;
    std::unique_ptr<Gip> gip_;
};

// Self-fusion within one stream. The upsampling branch walks 4 -> 1 with
// bilinear x2 + 3x3 conv per step, the downsampling branch walks 1 -> 4 with
// max-pool + 3x3 conv per step; each step adds the current level's input:
//   up:   U_j = bn(conv(up(T_{j+1}))),   T_4 = F_4, T_j = U_j + F_j
//   down: D_j = bn(conv(pool(S_{j-1}))), S_1 = F_1, S_j = D_j + F_j
//   out:  [U_1 + F_1, U_2 + D_2, U_3 + D_3, F_4 + D_4]
class Sfm : public Module {
public:
    Sfm(int channels, Rng& rng);
    Levels forward(const Levels& f);

private:
    std::vector<std::unique_ptr<Conv2d>> up_;    // index j-1 produces U_j, j = 1..3
    std::vector<std::unique_ptr<Conv2d>> down_;  // index j-2 produces D_j, j = 2..4
    std::vector<std::unique_ptr<BatchNorm2d>> up_bn_, down_bn_;
};

// Cross optimization between the two streams with per-level weight vectors
// of length 6 - j: the self term followed by one refinement per level k >= j.
//   E'_j = we_0 E_j + sum_k we_{k-j+1} (E_j * sigmoid(resize_j(B_k)))
//   B'_j = wb_0 B_j + sum_k wb_{k-j+1} (B_j + resize_j(E_k))
class Com : public Module {
public:
    Com();
    StageState forward(const StageState& s) const;

    Tensor& we(int level) { return we_.at(static_cast<std::size_t>(level - 1)); }
    Tensor& wb(int level) { return wb_.at(static_cast<std::size_t>(level - 1)); }

private:
    std::array<Tensor, 4> we_, wb_;
};

// current + every state in history, per stream and level.
StageState dense_add(const StageState& current, const std::vector<StageState>& history);

// Hierarchical decoder from level 4 up to full resolution. Each level
// concatenates the running map with its own-stream and other-stream features,
// then depth-wise 7x7 -> 3x3 conv -> SiLU, and a 2x transposed conv between
// levels. After level 1 the stem features are fused, two more 2x transposed
// conv stages reach stride 1 and a point-wise conv gives one logit channel.
class Ffm : public Module {
public:
    Ffm(int embed_channels, int stem_channels, int head_channels, bool two_streams, Rng& rng);

    // `other` may hold undefined tensors when only one stream exists. The
    // pre-head full-resolution feature map is written to `features` if given.
    Tensor forward(const Levels& own, const Levels& other, const Tensor& x_s, Tensor* features = nullptr);

private:
    bool two_streams_;
    std::vector<std::unique_ptr<DepthwiseConv2d>> dw_;  // index j-1 for level j
    std::vector<std::unique_ptr<Conv2d>> conv_;
    std::vector<std::unique_ptr<ConvTranspose2x2>> up_;  // after levels 4, 3, 2
    Conv2d stem_fuse_;
    ConvTranspose2x2 up_half_;
    Conv2d refine_half_;
    ConvTranspose2x2 up_full_;
    Conv2d refine_full_;
    Conv2d head_;
};

struct PredictionPair {
    Tensor z_b_hat;  // body FFM logits
    Tensor z_e;      // edge FFM logits (undefined without the edge stream)
    Tensor z_b;      // fused body logits, z_b_hat + z_e
    Tensor p_b;
    Tensor p_e;
};

// p_b = sigmoid(z_b_hat + z_e), p_e = sigmoid(z_e); z_e may be undefined.
PredictionPair final_fuse(const Tensor& z_b_hat, const Tensor& z_e);

}  // namespace bgcrack
