#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "bgcrack/tensor.hpp"

namespace bgcrack {

// ---------------------------------------------------------------------------
// MAC accounting. Convolutions, linear layers and attention matmuls add their
// closed-form multiply-accumulate counts while a MacCounter is alive.
// Elementwise ops, normalizations, activations and FFTs are not counted.
// ---------------------------------------------------------------------------
class MacCounter {
public:
    MacCounter();
    ~MacCounter();
    MacCounter(const MacCounter&) = delete;
    MacCounter& operator=(const MacCounter&) = delete;

    std::int64_t total() const { return total_; }

    static void add(std::int64_t macs);

private:
    std::int64_t total_ = 0;
    MacCounter* previous_;
};

enum class PadMode { Zeros, Replicate };

struct Conv2dSpec {
    int stride = 1;
    int padding = 0;
    int groups = 1;
    PadMode pad_mode = PadMode::Zeros;
};

// Elementwise arithmetic. Binary ops broadcast size-1 axes of equal-rank shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// sum_i weights[i] * xs[i]; weights is a learnable vector with one entry per input.
Tensor weighted_sum(const std::vector<Tensor>& xs, const Tensor& weights);

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// NCHW layers. Weight layouts follow the usual conventions:
//   conv2d           w [Co, Ci/groups, k, k], bias [Co] (optional)
//   conv_transpose2x2 w [Ci, Co, 2, 2], bias [Co] (optional), stride 2
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dSpec& spec);
Tensor conv_transpose2x2(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor max_pool2x2(const Tensor& x);

// Batch normalization over (N,H,W) per channel. In training mode the running
// statistics are updated in place with the given momentum.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps);

// Layer normalization over the channel axis of an NCHW tensor (per pixel),
// with per-channel affine parameters.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// Layer normalization over the last axis.
Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// x [..., in] -> [..., out]; w [out, in]; bias [out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Multi-head self attention over the middle axis. qkv [S, T, 3d] packs
// query/key/value along the last axis; returns [S, T, d] with heads
// concatenated.
Tensor self_attention(const Tensor& qkv, int heads);

Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, int start, int count);

Tensor channel_max(const Tensor& x);   // [N,C,H,W] -> [N,1,H,W]
Tensor channel_sum(const Tensor& x);   // [N,C,H,W] -> [N,1,H,W]
Tensor spatial_max(const Tensor& x);   // [N,C,H,W] -> [N,C,1,1]
Tensor spatial_sum(const Tensor& x);   // [N,C,H,W] -> [N,C,1,1]

// Bilinear resampling with half-pixel centers (corners not aligned).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// out.flat[i] = x.flat[index[i]]; the index map must be a permutation or a
// selection, gradients scatter-add back.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape);

// Real 2D DFT over the trailing two axes of an NCHW tensor. Returns the real
// and imaginary half-spectra, each [N, C, H, W/2+1].
std::pair<Tensor, Tensor> rfft2(const Tensor& x);
// Inverse of rfft2. Interior half-spectrum columns stand for themselves and
// their conjugate mirror (weight 2); column 0 and, for even W, column W/2
// have weight 1. The output is the real part of that weighted inverse sum,
// so arbitrary (non-Hermitian) spectra still map to a real signal.
Tensor irfft2(const Tensor& re, const Tensor& im, int height, int width);

}  // namespace bgcrack
