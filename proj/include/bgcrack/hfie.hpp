#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "bgcrack/nn.hpp"

namespace bgcrack {

// High-frequency information enhancement: a spatial-wise and a channel-wise
// frequency attention built on fixed DCT-II bases, mixed by two learnable
// scalars.

struct HfieConfig {
    int k1 = 8;  // 1D (channel-axis) frequencies for the spatial gate
    int k2 = 8;  // 2D (spatial) frequencies for the channel gate
    int reduction = 8;
    // Explicit frequency sets; empty means the evenly spaced defaults.
    std::vector<int> freqs_1d;
    std::vector<std::pair<int, int>> freqs_2d;
};

// values[c] = cos(pi * f * (2c + 1) / (2n)), unnormalized DCT-II.
std::vector<double> dct_basis_1d(int f, int n);
// Row-major [h, w] outer product of the two 1D bases.
std::vector<double> dct_basis_2d(int f_h, int f_w, int h, int w);

// [i * floor(n / k) for i in 0..k-1]
std::vector<int> default_freqs_1d(int n, int k);
std::vector<std::pair<int, int>> default_freqs_2d(int h, int w, int k);

class SpatialFreqEnhance : public Module {
public:
    SpatialFreqEnhance(int channels, const HfieConfig& cfg, Rng& rng);

    // O_SFA in (0,1), shape [N,1,H,W].
    Tensor gate(const Tensor& x) const;
    Tensor forward(const Tensor& x) const;

    Conv2d& conv() { return conv_; }

private:
    int channels_;
    std::vector<int> freqs_;
    Conv2d conv_;
};

// C -> C/r -> C on [N,C,1,1] vectors, SiLU in between.
class ChannelMlp : public Module {
public:
    ChannelMlp(int channels, int reduction, Rng& rng);
    Tensor forward(const Tensor& v) const { return fc2_.forward(silu(fc1_.forward(v))); }

private:
    Conv2d fc1_, fc2_;
};

class ChannelFreqEnhance : public Module {
public:
    ChannelFreqEnhance(int channels, const HfieConfig& cfg, Rng& rng);

    // O_CFA in (0,1), shape [N,C,1,1].
    Tensor gate(const Tensor& x) const;
    Tensor forward(const Tensor& x) const;

    Tensor& mix() { return mix_; }
    Conv2d& pointwise(int i) { return *pointwise_.at(static_cast<std::size_t>(i)); }

private:
    int channels_;
    int k2_;
    std::vector<std::pair<int, int>> freqs_;
    std::vector<std::unique_ptr<Conv2d>> pointwise_;
    ChannelMlp mlp_max_, mlp_sum_;
    Tensor mix_;  // [w1, w2] weighting MLP_1(max) and MLP_2(sum)
};

class Hfie : public Module {
public:
    Hfie(int channels, const HfieConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;

    SpatialFreqEnhance& spatial() { return spatial_; }
    ChannelFreqEnhance& channel() { return channel_; }
    Tensor& mix() { return mix_; }  // [w1, w2]

private:
    SpatialFreqEnhance spatial_;
    ChannelFreqEnhance channel_;
    Tensor mix_;
};

}  // namespace bgcrack
