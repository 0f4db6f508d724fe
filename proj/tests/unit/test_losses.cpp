#include <gtest/gtest.h>

#include <cmath>

#include "bgcrack/losses.hpp"
#include "oracles.hpp"

using namespace bgcrack;
using oracle::Vec;

namespace {

Tensor logit_of(const Tensor& p) {
    Tensor z = Tensor::zeros(p.shape());
    for (std::size_t i = 0; i < p.numel(); ++i) z.data()[i] = std::log(p.data()[i] / (1 - p.data()[i]));
    return z;
}

PredictionPair random_pair(std::mt19937_64& rng, Shape shape) {
    Tensor zb = oracle::random_tensor(shape, rng, -3, 3), ze = oracle::random_tensor(shape, rng, -3, 3);
    return final_fuse(zb, ze);
}

}  // namespace

TEST(Bce, ClosedForms) {
    std::mt19937_64 r(70);
    const Tensor g = oracle::random_binary({2, 1, 4, 4}, r);
    EXPECT_NEAR(bce_loss(Tensor::full({2, 1, 4, 4}, 0.5), g).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_with_logits(Tensor::zeros({2, 1, 4, 4}), g).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_loss(Tensor::full({1, 1, 1, 1}, 0.25), Tensor::full({1, 1, 1, 1}, 1.0)).item(), 1.3862943611198906, 1e-12);
    EXPECT_LT(bce_loss(g, g).item(), 1e-10);
}

TEST(Bce, MatchesOracleAndLogitForm) {
    std::mt19937_64 r(71);
    const Tensor p = oracle::random_tensor({2, 1, 5, 5}, r, 0.02, 0.98);
    const Tensor g = oracle::random_binary({2, 1, 5, 5}, r);
    const double ref = oracle::bce_oracle(oracle::values(p), oracle::values(g));
    EXPECT_NEAR(bce_loss(p, g).item(), ref, 1e-12);
    EXPECT_NEAR(bce_with_logits(logit_of(p), g).item(), ref, 1e-12);
    // Saturated logits stay finite.
    EXPECT_TRUE(std::isfinite(bce_with_logits(Tensor::full({1, 1, 2, 2}, 800.0), Tensor::zeros({1, 1, 2, 2})).item()));
}

TEST(Bce, RejectsBadInputs) {
    EXPECT_THROW(bce_loss(Tensor::full({1, 1, 2, 2}, 0.5), Tensor::full({1, 1, 2, 2}, 0.5)), std::invalid_argument);
    EXPECT_THROW(bce_loss(Tensor::full({1, 1, 2, 2}, 0.5), Tensor::zeros({1, 1, 2, 3})), std::invalid_argument);
}

TEST(Dice, ClosedForms) {
    EXPECT_EQ(dice_loss(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 4})).item(), 0.0);
    const Tensor p = Tensor::from({1, 1, 2, 2}, {1, 0, 1, 0});
    const Tensor g = Tensor::from({1, 1, 2, 2}, {1, 1, 0, 0});
    EXPECT_NEAR(dice_loss(p, g).item(), 1 - (2 + 1e-6) / (4 + 1e-6), 1e-15);
    EXPECT_NEAR(dice_loss(g, g).item(), 0.0, 1e-6);
    EXPECT_THROW(dice_loss(p, Tensor::zeros({1, 1, 2, 3})), std::invalid_argument);
}

TEST(Dice, MatchesOracleAndStaysInRange) {
    std::mt19937_64 r(72);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor p = oracle::random_tensor({3, 1, 6, 6}, r, 0.0, 1.0);
        const Tensor g = oracle::random_binary({3, 1, 6, 6}, r, trial / 20.0);
        const double v = dice_loss(p, g).item();
        EXPECT_NEAR(v, oracle::dice_loss_oracle(oracle::values(p), oracle::values(g), 3), 1e-14);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Scharr, ConstantStepAndLinearity) {
    const Tensor c = Tensor::full({1, 1, 5, 5}, 0.7);
    const Tensor gc = scharr_gradients(c);
    for (int i = 1; i < 4; ++i)
        for (int j = 1; j < 4; ++j) EXPECT_NEAR(gc.at(0, 0, i, j), 0.0, 1e-14);

    // Step from 0 (columns 0-2) to 1 (columns 3-5).
    Tensor step = Tensor::zeros({1, 1, 6, 6});
    for (int i = 0; i < 6; ++i)
        for (int j = 3; j < 6; ++j) step.data()[i * 6 + j] = 1.0;
    const Tensor gs = scharr_gradients(step);
    const Tensor gx = scharr_x(step);
    for (int i = 1; i < 5; ++i) {
        EXPECT_EQ(gx.at(0, 0, i, 2), 16.0);
        EXPECT_EQ(gx.at(0, 0, i, 3), 16.0);
        EXPECT_EQ(gx.at(0, 0, i, 1), 0.0);
        EXPECT_EQ(gx.at(0, 0, i, 4), 0.0);
        EXPECT_EQ(gx.at(0, 0, i, 5), -16.0);  // zero padding past the right border
        EXPECT_EQ(scharr_y(step).at(0, 0, i, 2), 0.0);
        EXPECT_EQ(gs.at(0, 0, i, 2), 16.0);
    }

    std::mt19937_64 r(73);
    const Tensor x = oracle::random_tensor({2, 1, 7, 6}, r);
    const Tensor gx1 = scharr_x(x), gx2 = scharr_x(scale(x, 2.0));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(gx2.data()[i], 2 * gx1.data()[i], 1e-13);
    const Tensor mag = scharr_gradients(x);
    const Vec ref = oracle::scharr_oracle(Vec(x.data().begin(), x.data().begin() + 42), 7, 6);
    for (int i = 0; i < 42; ++i) EXPECT_NEAR(mag.data()[i], ref[i], 1e-13);
}

TEST(GradLoss, ClosedForms) {
    std::mt19937_64 r(74);
    const Tensor g = oracle::random_binary({2, 1, 8, 8}, r);
    EXPECT_EQ(grad_loss(g, g).item(), 1e-3);
    const Tensor p = oracle::random_tensor({2, 1, 8, 8}, r, 0.0, 1.0);
    const double v = grad_loss(p, g).item();
    EXPECT_GE(v, 1e-3);
    EXPECT_NEAR(v, oracle::grad_loss_oracle(oracle::values(p), oracle::values(g), 2, 8, 8), 1e-12);

    Tensor a = Tensor::zeros({1, 1, 4, 4}), b = Tensor::zeros({1, 1, 4, 4});
    a.data()[5] = 1.0;
    EXPECT_NEAR(charbonnier(a, b, 1e-3).item(), (15 * 1e-3 + std::sqrt(1 + 1e-6)) / 16, 1e-15);
}

TEST(TotalLoss, ComponentSumOracle) {
    std::mt19937_64 r(75);
    const PredictionPair pair = random_pair(r, {2, 1, 8, 8});
    const Tensor gb = oracle::random_binary({2, 1, 8, 8}, r), ge = oracle::random_binary({2, 1, 8, 8}, r);
    const Vec pb = oracle::values(pair.p_b), pe = oracle::values(pair.p_e), vb = oracle::values(gb), ve = oracle::values(ge);
    const double a = oracle::bce_oracle(pb, vb), b = oracle::bce_oracle(pe, ve);
    const double c = oracle::dice_loss_oracle(pb, vb, 2), d = oracle::dice_loss_oracle(pe, ve, 2);
    const double e = oracle::grad_loss_oracle(pb, vb, 2, 8, 8);

    const LossReport rep = total_loss(pair, gb, ge, LossConfig{});
    EXPECT_NEAR(rep.total.item(), a + b + c + d + e, 1e-11);
    EXPECT_NEAR(rep.components.at("bce_body"), a, 1e-12);
    EXPECT_NEAR(rep.components.at("bce_edge"), b, 1e-12);
    EXPECT_NEAR(rep.components.at("dice_body"), c, 1e-12);
    EXPECT_NEAR(rep.components.at("dice_edge"), d, 1e-12);
    EXPECT_NEAR(rep.components.at("grad"), e, 1e-12);

    LossConfig zero{0, 0, 0, 0, 0};
    EXPECT_EQ(total_loss(pair, gb, ge, zero).total.item(), 0.0);

    // Linear in the weight vector.
    LossConfig w{0.5, 2.0, 1.5, 0.25, 3.0};
    EXPECT_NEAR(total_loss(pair, gb, ge, w).total.item(), 0.5 * a + 2 * b + 1.5 * c + 0.25 * d + 3 * e, 1e-11);

    LossConfig no_edge;
    no_edge.use_edge = false;
    no_edge.use_grad = false;
    const LossReport dropped = total_loss(pair, gb, ge, no_edge);
    EXPECT_EQ(dropped.components.size(), 2u);
    EXPECT_NEAR(dropped.total.item(), a + c, 1e-12);
}

TEST(LossGradients, FiniteDifferences) {
    std::mt19937_64 r(76);
    Tensor p = oracle::random_tensor({2, 1, 6, 6}, r, 0.05, 0.95);
    p.set_requires_grad(true);
    const Tensor g = oracle::random_binary({2, 1, 6, 6}, r);
    EXPECT_LT(oracle::finite_difference([&] { return bce_loss(p, g); }, {p}, 1e-6).max_rel, 1e-6);
    EXPECT_LT(oracle::finite_difference([&] { return dice_loss(p, g); }, {p}, 1e-6).max_rel, 1e-6);
    EXPECT_LT(oracle::finite_difference([&] { return grad_loss(p, g); }, {p}, 1e-6).max_rel, 1e-4);

    Tensor z = oracle::random_tensor({2, 1, 6, 6}, r, -3, 3);
    z.set_requires_grad(true);
    EXPECT_LT(oracle::finite_difference([&] { return bce_with_logits(z, g); }, {z}, 1e-6).max_rel, 1e-6);
}
