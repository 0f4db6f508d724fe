#include "bgcrack/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bgcrack/ops.hpp"

namespace bgcrack {

namespace {

using detail::TensorImpl;
using detail::make_result;

void check_pair(const Tensor& a, const Tensor& g, const char* who) {
    if (!a.defined() || !g.defined()) throw std::invalid_argument(std::string(who) + ": undefined input");
    if (a.shape() != g.shape())
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(g.shape()));
}

void check_binary(const Tensor& g, const char* who) {
    for (double v : g.data())
        if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(who) + ": ground truth must be binary");
}

constexpr double kProbClamp = 1e-12;

const Tensor& scharr_kernel_x() {
    static const Tensor k = Tensor::from({1, 1, 3, 3}, {-3, 0, 3, -10, 0, 10, -3, 0, 3});
    return k;
}

const Tensor& scharr_kernel_y() {
    static const Tensor k = Tensor::from({1, 1, 3, 3}, {-3, -10, -3, 0, 0, 0, 3, 10, 3});
    return k;
}

Tensor scharr_apply(const Tensor& x, const Tensor& kernel) {
    if (!x.defined() || x.rank() != 4 || x.dim(1) != 1)
        throw std::invalid_argument("scharr: expected a [N,1,H,W] map, got " + shape_str(x.shape()));
    Conv2dSpec spec;
    spec.padding = 1;
    return conv2d(x, kernel, Tensor(), spec);
}

// sqrt(a^2 + b^2); the subgradient at the origin is taken as zero.
Tensor magnitude(const Tensor& a, const Tensor& b) {
    std::vector<double> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(av[i], bv[i]);
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](TensorImpl& self) {
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const double m = self.value[i];
            if (m == 0.0) continue;
            const double g = self.grad[i] / m;
            if (pa->requires_grad) pa->grad_buffer()[i] += g * pa->value[i];
            if (pb->requires_grad) pb->grad_buffer()[i] += g * pb->value[i];
        }
    });
}

}  // namespace

Tensor bce_loss(const Tensor& p, const Tensor& g) {
    check_pair(p, g, "bce_loss");
    check_binary(g, "bce_loss");
    const auto pv = p.data();
    const auto gv = g.data();
    const double n = static_cast<double>(pv.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double q = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
        acc -= gv[i] * std::log(q) + (1.0 - gv[i]) * std::log(1.0 - q);
    }
    auto pp = p.impl_ptr();
    auto pg = g.impl_ptr();
    return make_result({}, {acc / n}, {p}, [pp, pg, n](TensorImpl& self) {
        auto& grad = pp->grad_buffer();
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double v = pp->value[i];
            if (v < kProbClamp || v > 1.0 - kProbClamp) continue;
            const double t = pg->value[i];
            grad[i] += up * (-t / v + (1.0 - t) / (1.0 - v));
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& g) {
    check_pair(logits, g, "bce_with_logits");
    check_binary(g, "bce_with_logits");
    const auto zv = logits.data();
    const auto gv = g.data();
    const double n = static_cast<double>(zv.size());
    double acc = 0.0;
    // -[g log s(z) + (1-g) log(1-s(z))] = max(z,0) - z g + log(1 + e^{-|z|})
    for (std::size_t i = 0; i < zv.size(); ++i)
        acc += std::max(zv[i], 0.0) - zv[i] * gv[i] + std::log1p(std::exp(-std::abs(zv[i])));
    auto pz = logits.impl_ptr();
    auto pg = g.impl_ptr();
    return make_result({}, {acc / n}, {logits}, [pz, pg, n](TensorImpl& self) {
        auto& grad = pz->grad_buffer();
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double z = pz->value[i];
            const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            grad[i] += up * (s - pg->value[i]);
        }
    });
}

Tensor dice_loss(const Tensor& p, const Tensor& g, double eps) {
    check_pair(p, g, "dice_loss");
    if (p.rank() < 1) throw std::invalid_argument("dice_loss: expected a batched map");
    const int batch = p.dim(0);
    const std::size_t per = p.numel() / static_cast<std::size_t>(batch);
    const auto pv = p.data();
    const auto gv = g.data();
    std::vector<double> inter(batch, 0.0), denom(batch, 0.0);
    double acc = 0.0;
    for (int b = 0; b < batch; ++b) {
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            inter[b] += pv[i] * gv[i];
            denom[b] += pv[i] + gv[i];
        }
        denom[b] += eps;
        acc += 1.0 - (2.0 * inter[b] + eps) / denom[b];
    }
    auto pp = p.impl_ptr();
    auto pg = g.impl_ptr();
    return make_result({}, {acc / batch}, {p}, [pp, pg, inter, denom, per, batch, eps](TensorImpl& self) {
        auto& grad = pp->grad_buffer();
        const double up = self.grad[0] / batch;
        for (int b = 0; b < batch; ++b) {
            const double num = 2.0 * inter[b] + eps;
            const double d2 = denom[b] * denom[b];
            for (std::size_t i = b * per; i < (b + 1) * per; ++i)
                grad[i] -= up * (2.0 * pg->value[i] * denom[b] - num) / d2;
        }
    });
}

Tensor scharr_x(const Tensor& x) { return scharr_apply(x, scharr_kernel_x()); }
Tensor scharr_y(const Tensor& x) { return scharr_apply(x, scharr_kernel_y()); }

Tensor scharr_gradients(const Tensor& x) { return magnitude(scharr_x(x), scharr_y(x)); }

Tensor charbonnier(const Tensor& a, const Tensor& b, double eps) {
    check_pair(a, b, "charbonnier");
    const auto av = a.data();
    const auto bv = b.data();
    const double n = static_cast<double>(av.size());
    std::vector<double> root(av.size());
    // Accumulate the excess over eps so identical inputs give exactly eps.
    double excess = 0.0;
    for (std::size_t i = 0; i < root.size(); ++i) {
        root[i] = std::hypot(av[i] - bv[i], eps);
        excess += root[i] - eps;
    }
    auto pa = a.impl_ptr();
    auto pb = b.impl_ptr();
    return make_result({}, {eps + excess / n}, {a, b}, [pa, pb, root = std::move(root), n](TensorImpl& self) {
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < root.size(); ++i) {
            const double g = up * (pa->value[i] - pb->value[i]) / root[i];
            if (pa->requires_grad) pa->grad_buffer()[i] += g;
            if (pb->requires_grad) pb->grad_buffer()[i] -= g;
        }
    });
}

Tensor grad_loss(const Tensor& p_b, const Tensor& g_b, double eps_char) {
    check_pair(p_b, g_b, "grad_loss");
    Tensor target;
    {
        NoGradGuard guard;
        target = scharr_gradients(g_b.detach());
    }
    return charbonnier(scharr_gradients(p_b), target, eps_char);
}

LossReport total_loss(const PredictionPair& pair, const Tensor& g_b, const Tensor& g_e, const LossConfig& cfg) {
    LossReport report;
    std::vector<Tensor> terms;
    std::vector<double> weights;
    auto add_term = [&](const std::string& name, double alpha, const Tensor& value) {
        report.components[name] = value.item();
        terms.push_back(value);
        weights.push_back(alpha);
    };

    add_term("bce_body", cfg.alpha_bce_body, bce_with_logits(pair.z_b, g_b));
    add_term("dice_body", cfg.alpha_dice_body, dice_loss(pair.p_b, g_b, cfg.eps_dice));
    const bool edge = cfg.use_edge && pair.z_e.defined();
    if (edge) {
        add_term("bce_edge", cfg.alpha_bce_edge, bce_with_logits(pair.z_e, g_e));
        add_term("dice_edge", cfg.alpha_dice_edge, dice_loss(pair.p_e, g_e, cfg.eps_dice));
    }
    if (cfg.use_grad) add_term("grad", cfg.alpha_grad, grad_loss(pair.p_b, g_b, cfg.eps_char));

    Tensor total = scale(terms[0], weights[0]);
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, scale(terms[i], weights[i]));
    report.total = total;
    return report;
}

}  // namespace bgcrack
