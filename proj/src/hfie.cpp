#include "bgcrack/hfie.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bgcrack/errors.hpp"

namespace bgcrack {

std::vector<double> dct_basis_1d(int f, int n) {
    if (n <= 0 || f < 0 || f >= n)
        throw std::out_of_range("dct_basis_1d: frequency " + std::to_string(f) + " outside [0," + std::to_string(n) + ")");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) v[c] = std::cos(std::numbers::pi * f * (2.0 * c + 1.0) / (2.0 * n));
    return v;
}

std::vector<double> dct_basis_2d(int f_h, int f_w, int h, int w) {
    const auto bh = dct_basis_1d(f_h, h);
    const auto bw = dct_basis_1d(f_w, w);
    std::vector<double> plane(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) plane[i * w + j] = bh[i] * bw[j];
    return plane;
}

std::vector<int> default_freqs_1d(int n, int k) {
    std::vector<int> f;
    for (int i = 0; i < k; ++i) f.push_back(i * (n / k));
    return f;
}

std::vector<std::pair<int, int>> default_freqs_2d(int h, int w, int k) {
    std::vector<std::pair<int, int>> f;
    for (int i = 0; i < k; ++i) f.emplace_back(i * (h / k), i * (w / k));
    return f;
}

SpatialFreqEnhance::SpatialFreqEnhance(int channels, const HfieConfig& cfg, Rng& rng)
    : channels_(channels),
      freqs_(cfg.freqs_1d.empty() ? default_freqs_1d(channels, cfg.k1) : cfg.freqs_1d),
      conv_(2 * cfg.k1, 1, 3, rng) {
    if (channels < cfg.k1)
        throw ConfigError("hfie: " + std::to_string(channels) + " channels cannot hold " + std::to_string(cfg.k1) +
                          " frequencies");
    if (static_cast<int>(freqs_.size()) != cfg.k1) throw ConfigError("hfie: freqs_1d must list k1 frequencies");
    for (int f : freqs_) dct_basis_1d(f, channels);  // range check
    register_module("conv", conv_);
}

Tensor SpatialFreqEnhance::gate(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != channels_)
        throw std::invalid_argument("spatial frequency gate expects " + std::to_string(channels_) + " channels, got " +
                                    shape_str(x.shape()));
    std::vector<Tensor> maxes, sums;
    for (int f : freqs_) {
        Tensor basis = Tensor::from({1, channels_, 1, 1}, dct_basis_1d(f, channels_));
        Tensor xs = mul(x, basis);
        maxes.push_back(channel_max(xs));
        sums.push_back(channel_sum(xs));
    }
    std::vector<Tensor> planes = maxes;
    planes.insert(planes.end(), sums.begin(), sums.end());
    return sigmoid(conv_.forward(concat_channels(planes)));
}

Tensor SpatialFreqEnhance::forward(const Tensor& x) const { return mul(gate(x), x); }

namespace {

int checked_mlp_width(int channels, int reduction) {
    if (reduction <= 0 || channels / reduction < 1)
        throw ConfigError("hfie: reduction " + std::to_string(reduction) + " leaves no hidden units for " +
                          std::to_string(channels) + " channels");
    return channels;
}

}  // namespace

ChannelMlp::ChannelMlp(int channels, int reduction, Rng& rng)
    : fc1_(channels, channels / reduction, 1, rng), fc2_(channels / reduction, channels, 1, rng) {
    register_module("fc1", fc1_);
    register_module("fc2", fc2_);
}

ChannelFreqEnhance::ChannelFreqEnhance(int channels, const HfieConfig& cfg, Rng& rng)
    : channels_(channels),
      k2_(cfg.k2),
      freqs_(cfg.freqs_2d),
      mlp_max_(checked_mlp_width(channels, cfg.reduction), cfg.reduction, rng),
      mlp_sum_(channels, cfg.reduction, rng) {
    if (cfg.k2 <= 0 || channels % cfg.k2 != 0)
        throw ConfigError("hfie: k2=" + std::to_string(cfg.k2) + " must divide " + std::to_string(channels) + " channels");
    if (!freqs_.empty() && static_cast<int>(freqs_.size()) != cfg.k2)
        throw ConfigError("hfie: freqs_2d must list k2 frequency pairs");
    for (int i = 0; i < cfg.k2; ++i) {
        pointwise_.push_back(std::make_unique<Conv2d>(channels, channels / cfg.k2, 1, rng));
        register_module("pw" + std::to_string(i), *pointwise_.back());
    }
    register_module("mlp_max", mlp_max_);
    register_module("mlp_sum", mlp_sum_);
    mix_ = register_parameter("mix", Tensor::full({2}, 1.0));
}

Tensor ChannelFreqEnhance::gate(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != channels_)
        throw std::invalid_argument("channel frequency gate expects " + std::to_string(channels_) + " channels, got " +
                                    shape_str(x.shape()));
    const int h = x.dim(2), w = x.dim(3);
    const auto freqs = freqs_.empty() ? default_freqs_2d(h, w, k2_) : freqs_;
    std::vector<Tensor> parts;
    for (int i = 0; i < k2_; ++i) {
        Tensor basis = Tensor::from({1, 1, h, w}, dct_basis_2d(freqs[i].first, freqs[i].second, h, w));
        parts.push_back(pointwise_[i]->forward(mul(x, basis)));
    }
    Tensor xc = concat_channels(parts);
    Tensor logits = weighted_sum({mlp_max_.forward(spatial_max(xc)), mlp_sum_.forward(spatial_sum(xc))}, mix_);
    return sigmoid(logits);
}

Tensor ChannelFreqEnhance::forward(const Tensor& x) const { return mul(gate(x), x); }

Hfie::Hfie(int channels, const HfieConfig& cfg, Rng& rng) : spatial_(channels, cfg, rng), channel_(channels, cfg, rng) {
    register_module("spatial", spatial_);
    register_module("channel", channel_);
    mix_ = register_parameter("mix", Tensor::full({2}, 1.0));
}

Tensor Hfie::forward(const Tensor& x) const { return weighted_sum({spatial_.forward(x), channel_.forward(x)}, mix_); }

}  // namespace bgcrack
