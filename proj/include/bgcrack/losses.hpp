#pragma once

#include <map>
#include <string>

#include "bgcrack/decoder.hpp"
#include "bgcrack/tensor.hpp"

namespace bgcrack {

struct LossConfig {
    double alpha_bce_body = 1.0;
    double alpha_bce_edge = 1.0;
    double alpha_dice_body = 1.0;
    double alpha_dice_edge = 1.0;
    double alpha_grad = 1.0;
    double eps_dice = 1e-6;
    double eps_char = 1e-3;
    bool use_edge = true;
    bool use_grad = true;
};

struct LossReport {
    Tensor total;
    // bce_body, bce_edge, dice_body, dice_edge, grad; dropped terms are absent.
    std::map<std::string, double> components;
};

// Mean binary cross-entropy of probabilities P against binary G. P is
// clamped away from {0,1} so saturated perfect predictions give ~0.
Tensor bce_loss(const Tensor& p, const Tensor& g);
// Same objective evaluated from logits with a stable log-sum-exp.
Tensor bce_with_logits(const Tensor& logits, const Tensor& g);

// Mean over the batch of 1 - (2 sum(P G) + eps) / (sum P + sum G + eps).
Tensor dice_loss(const Tensor& p, const Tensor& g, double eps = 1e-6);

// Scharr gradient magnitude of a [N,1,H,W] map with zero-padded borders.
Tensor scharr_gradients(const Tensor& x);
Tensor scharr_x(const Tensor& x);
Tensor scharr_y(const Tensor& x);

// Mean of sqrt(d^2 + eps^2) over all elements of d = a - b.
Tensor charbonnier(const Tensor& a, const Tensor& b, double eps);

Tensor grad_loss(const Tensor& p_b, const Tensor& g_b, double eps_char = 1e-3);

LossReport total_loss(const PredictionPair& pair, const Tensor& g_b, const Tensor& g_e, const LossConfig& cfg);

}  // namespace bgcrack
