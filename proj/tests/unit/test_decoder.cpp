#include <gtest/gtest.h>

#include "bgcrack/errors.hpp"
#include "bgcrack/metrics.hpp"
#include "bgcrack/model.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bgcrack;
using oracle::Array4;
using oracle::Vec;

namespace {

Levels random_levels(int channels, int base, std::mt19937_64& rng, int batch = 1) {
    Levels f;
    for (int j = 0; j < 4; ++j) f[j] = oracle::random_tensor({batch, channels, base >> j, base >> j}, rng);
    return f;
}

Levels zero_levels(int channels, int base) {
    Levels f;
    for (int j = 0; j < 4; ++j) f[j] = Tensor::zeros({1, channels, base >> j, base >> j});
    return f;
}

void zero_biases(Module& m) {
    for (auto& [name, t] : m.named_parameters())
        if (name.ends_with(".bias"))
            for (double& v : t.data()) v = 0.0;
}

using fixture::tiny_config;

std::vector<Array4> sfm_oracle(const Levels& f, const Sfm& sfm) {
    std::vector<Array4> F;
    for (const auto& t : f) F.emplace_back(t);
    std::vector<Array4> up(4), down(4);
    Array4 carry = F[3];
    for (int j = 3; j >= 1; --j) {
        const std::string name = "up" + std::to_string(j);
        up[j - 1] = oracle::bn_named_train(
            oracle::conv_named(oracle::resize_bilinear(carry, F[j - 1].h, F[j - 1].w), sfm, name), sfm, name + "_bn");
        carry = oracle::add(up[j - 1], F[j - 1]);
    }
    carry = F[0];
    for (int j = 2; j <= 4; ++j) {
        const std::string name = "down" + std::to_string(j);
        down[j - 1] = oracle::bn_named_train(oracle::conv_named(oracle::max_pool2(carry), sfm, name), sfm, name + "_bn");
        carry = oracle::add(down[j - 1], F[j - 1]);
    }
    return {oracle::add(up[0], F[0]), oracle::add(up[1], down[1]), oracle::add(up[2], down[2]), oracle::add(F[3], down[3])};
}

// Element-level COM with explicit index loops.
std::pair<std::vector<Array4>, std::vector<Array4>> com_oracle(const StageState& s, Com& com) {
    std::vector<Array4> E, B, Eo, Bo;
    for (int j = 0; j < 4; ++j) {
        E.emplace_back(s.e[j]);
        B.emplace_back(s.b[j]);
    }
    for (int j = 1; j <= 4; ++j) {
        const Vec we = oracle::values(com.we(j)), wb = oracle::values(com.wb(j));
        const Array4& e = E[j - 1];
        const Array4& b = B[j - 1];
        Array4 eo = oracle::scale(e, we[0]), bo = oracle::scale(b, wb[0]);
        for (int k = j; k <= 4; ++k) {
            const Array4 bk = oracle::resize_bilinear(B[k - 1], e.h, e.w);
            const Array4 ek = oracle::resize_bilinear(E[k - 1], b.h, b.w);
            for (std::size_t i = 0; i < eo.v.size(); ++i) {
                eo.v[i] += we[k - j + 1] * e.v[i] * oracle::sigmoid(bk.v[i]);
                bo.v[i] += wb[k - j + 1] * (b.v[i] + ek.v[i]);
            }
        }
        Eo.push_back(eo);
        Bo.push_back(bo);
    }
    return {Eo, Bo};
}

Array4 ffm_oracle(const Levels& own, const Levels& other, const Tensor& x_s, const Ffm& ffm) {
    auto tconv = [&](const Array4& x, const std::string& name) {
        return oracle::conv_transpose2x2(x, Array4(oracle::param(ffm, name + ".weight")),
                                         oracle::values(oracle::param(ffm, name + ".bias")));
    };
    auto concat = [](const std::vector<Array4>& parts) {
        int c = 0;
        for (const auto& p : parts) c += p.c;
        Array4 out(parts[0].n, c, parts[0].h, parts[0].w);
        int off = 0;
        for (const auto& p : parts) {
            for (int n = 0; n < p.n; ++n)
                for (int ch = 0; ch < p.c; ++ch)
                    for (int y = 0; y < p.h; ++y)
                        for (int x = 0; x < p.w; ++x) out(n, off + ch, y, x) = p(n, ch, y, x);
            off += p.c;
        }
        return out;
    };
    Array4 running;
    for (int j = 4; j >= 1; --j) {
        std::vector<Array4> parts;
        if (j < 4) parts.push_back(running);
        parts.emplace_back(own[j - 1]);
        parts.emplace_back(other[j - 1]);
        Array4 cat = concat(parts);
        Array4 x = oracle::conv_named(cat, ffm, "dw" + std::to_string(j), 1, cat.c);
        x = oracle::map(oracle::conv_named(x, ffm, "conv" + std::to_string(j)), oracle::silu);
        running = j > 1 ? tconv(x, "up" + std::to_string(j)) : x;
    }
    Array4 x = oracle::map(oracle::conv_named(concat({running, Array4(x_s)}), ffm, "stem_fuse"), oracle::silu);
    x = oracle::map(oracle::conv_named(tconv(x, "up_half"), ffm, "refine_half"), oracle::silu);
    x = oracle::map(oracle::conv_named(tconv(x, "up_full"), ffm, "refine_full"), oracle::silu);
    return oracle::conv_named(x, ffm, "head");
}

void expect_close(const Tensor& got, const Array4& ref, double tol) {
    ASSERT_EQ(got.numel(), ref.v.size());
    for (std::size_t i = 0; i < ref.v.size(); ++i) ASSERT_NEAR(got.data()[i], ref.v[i], tol) << "at " << i;
}

}  // namespace

TEST(Embed, ShapeZeroAndOracle) {
    Rng rng(50);
    StreamEmbed embed(16, 8, rng);
    std::mt19937_64 r(51);
    oracle::randomize_parameters(embed, r, 0.4);
    embed.set_training(false);
    Tensor x = oracle::random_tensor({1, 16, 8, 8}, r);
    const Tensor y = embed.forward(x);
    EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8}));

    Array4 ref = oracle::conv_named(Array4(x), embed, "pw");
    ref = oracle::map(oracle::bn_named_eval(ref, embed, "bn"), oracle::silu);
    expect_close(y, oracle::conv_named(ref, embed, "conv"), 1e-12);

    zero_biases(embed);
    for (double& v : oracle::param(embed, "bn.weight").data()) v = 1.0;
    for (double& v : oracle::param(embed, "bn.running_mean").data()) v = 0.0;
    const Tensor zero_out = embed.forward(Tensor::zeros({1, 16, 8, 8}));
    for (double v : zero_out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, BodyWithGipComposesOracles) {
    Rng rng(52);
    GipConfig gcfg;
    StreamEmbed embed(8, 4, rng, &gcfg);
    ASSERT_NE(embed.gip(), nullptr);
    std::mt19937_64 r(53);
    oracle::randomize_parameters(embed, r, 0.4);
    embed.set_training(false);
    Tensor x = oracle::random_tensor({1, 8, 4, 4}, r);
    Array4 ref = oracle::conv_named(Array4(x), embed, "pw");
    ref = oracle::conv_named(oracle::map(oracle::bn_named_eval(ref, embed, "bn"), oracle::silu), embed, "conv");
    const Tensor inner = ref.tensor();
    const Tensor expected = embed.gip()->forward(inner);
    expect_close(embed.forward(x), Array4(expected), 1e-12);
}

TEST(Sfm, ShapesZerosAndOracle) {
    Rng rng(54);
    Sfm sfm(4, rng);
    std::mt19937_64 r(55);
    oracle::randomize_parameters(sfm, r, 0.4);
    const Levels f = random_levels(4, 16, r);
    const Levels out = sfm.forward(f);
    const auto ref = sfm_oracle(f, sfm);
    for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(out[j].shape(), f[j].shape());
        expect_close(out[j], ref[j], 1e-12);
    }
    zero_biases(sfm);
    for (const auto& t : sfm.forward(zero_levels(4, 16)))
        for (double v : t.data()) EXPECT_EQ(v, 0.0);

    Levels bad = f;
    bad[2] = Tensor::zeros({1, 4, 3, 3});
    EXPECT_THROW(sfm.forward(bad), GeometryError);
}

TEST(Com, DegenerateWeightsGiveIdentity) {
    Com com;
    for (int j = 1; j <= 4; ++j) {
        for (double& v : com.we(j).data()) v = 0.0;
        for (double& v : com.wb(j).data()) v = 0.0;
        com.we(j).data()[0] = 1.0;
        com.wb(j).data()[0] = 1.0;
    }
    std::mt19937_64 r(56);
    StageState s{random_levels(3, 16, r), random_levels(3, 16, r)};
    const StageState out = com.forward(s);
    for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(oracle::values(out.e[j]), oracle::values(s.e[j]));
        EXPECT_EQ(oracle::values(out.b[j]), oracle::values(s.b[j]));
    }
}

TEST(Com, ZeroEdgeStreamAlgebra) {
    Com com;
    std::mt19937_64 r(57);
    for (int j = 1; j <= 4; ++j) {
        for (double& v : com.we(j).data()) v = r() % 7 * 0.3 - 1.0;
        for (double& v : com.wb(j).data()) v = r() % 7 * 0.3 - 1.0;
    }
    StageState s{zero_levels(3, 16), random_levels(3, 16, r)};
    const StageState out = com.forward(s);
    for (int j = 0; j < 4; ++j) {
        for (double v : out.e[j].data()) EXPECT_EQ(v, 0.0);
        double total = 0;
        for (double w : com.wb(j + 1).data()) total += w;
        for (std::size_t i = 0; i < out.b[j].numel(); ++i) EXPECT_NEAR(out.b[j].data()[i], total * s.b[j].data()[i], 1e-14);
    }
}

TEST(Com, MatchesLoopOracle) {
    Com com;
    std::mt19937_64 r(58);
    oracle::randomize_parameters(com, r, 1.0);
    StageState s{random_levels(3, 16, r, 2), random_levels(3, 16, r, 2)};
    const StageState out = com.forward(s);
    const auto [eo, bo] = com_oracle(s, com);
    for (int j = 0; j < 4; ++j) {
        expect_close(out.e[j], eo[j], 1e-13);
        expect_close(out.b[j], bo[j], 1e-13);
    }
    EXPECT_EQ(com.we(1).numel(), 5u);
    EXPECT_EQ(com.wb(4).numel(), 2u);
}

TEST(Com, WeightLengthMismatchThrows) {
    Com com;
    com.we(2) = Tensor::zeros({3});
    std::mt19937_64 r(59);
    StageState s{random_levels(2, 16, r), random_levels(2, 16, r)};
    EXPECT_THROW(com.forward(s), std::invalid_argument);
}

TEST(DenseAdd, IdentitiesAndSums) {
    std::mt19937_64 r(60);
    StageState a{random_levels(2, 8, r), random_levels(2, 8, r)};
    StageState b{random_levels(2, 8, r), random_levels(2, 8, r)};
    StageState c{random_levels(2, 8, r), random_levels(2, 8, r)};
    StageState zero{zero_levels(2, 8), zero_levels(2, 8)};
    const StageState id1 = dense_add(a, {});
    const StageState id2 = dense_add(a, {zero});
    const StageState sum = dense_add(a, {b, c});
    for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(oracle::values(id1.e[j]), oracle::values(a.e[j]));
        EXPECT_EQ(oracle::values(id2.b[j]), oracle::values(a.b[j]));
        for (std::size_t i = 0; i < a.e[j].numel(); ++i) {
            EXPECT_DOUBLE_EQ(sum.e[j].data()[i], a.e[j].data()[i] + b.e[j].data()[i] + c.e[j].data()[i]);
            EXPECT_DOUBLE_EQ(sum.b[j].data()[i], a.b[j].data()[i] + b.b[j].data()[i] + c.b[j].data()[i]);
        }
    }
    StageState bad = b;
    bad.e[1] = Tensor::zeros({1, 2, 3, 3});
    EXPECT_THROW(dense_add(a, {bad}), GeometryError);
}

TEST(Ffm, ShapeZeroAndOracle) {
    Rng rng(61);
    Ffm ffm(4, 3, 4, true, rng);
    std::mt19937_64 r(62);
    oracle::randomize_parameters(ffm, r, 0.4);
    const Levels own = random_levels(4, 8, r), other = random_levels(4, 8, r);
    const Tensor x_s = oracle::random_tensor({1, 3, 8, 8}, r);
    const Tensor z = ffm.forward(own, other, x_s);
    EXPECT_EQ(z.shape(), (Shape{1, 1, 32, 32}));
    expect_close(z, ffm_oracle(own, other, x_s, ffm), 1e-11);

    zero_biases(ffm);
    const Tensor z0 = ffm.forward(zero_levels(4, 8), zero_levels(4, 8), Tensor::zeros({1, 3, 8, 8}));
    const PredictionPair p = final_fuse(z0, z0);
    for (double v : p.p_b.data()) EXPECT_EQ(v, 0.5);
}

TEST(FinalFuse, ClosedForms) {
    const Tensor zb = Tensor::full({1, 1, 2, 2}, 2.0), ze = Tensor::full({1, 1, 2, 2}, -1.0);
    const PredictionPair p = final_fuse(zb, ze);
    for (double v : p.p_b.data()) EXPECT_NEAR(v, 0.7310585786300049, 1e-15);
    for (double v : p.p_e.data()) EXPECT_NEAR(v, 0.2689414213699951, 1e-15);
    const PredictionPair q = final_fuse(zb, Tensor::zeros({1, 1, 2, 2}));
    for (double v : q.p_b.data()) EXPECT_DOUBLE_EQ(v, oracle::sigmoid(2.0));
    const PredictionPair single = final_fuse(zb, Tensor());
    EXPECT_FALSE(single.p_e.defined());
    EXPECT_THROW(final_fuse(zb, Tensor::zeros({1, 1, 2, 3})), GeometryError);
}

TEST(Model, ShapesRangeAndDeterminism) {
    ModelConfig cfg;
    BgCrack model(cfg);
    std::mt19937_64 r(63);
    Tensor img = oracle::random_tensor({1, 3, 64, 64}, r, 0.0, 1.0);
    ActivationTap tap;
    const PredictionPair a = model.forward(img, &tap);
    const PredictionPair b = model.forward(img);
    EXPECT_EQ(a.p_b.shape(), (Shape{1, 1, 64, 64}));
    EXPECT_EQ(a.p_e.shape(), (Shape{1, 1, 64, 64}));
    for (double v : a.p_b.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    for (double v : a.p_e.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    EXPECT_EQ(oracle::values(a.p_b), oracle::values(b.p_b));
    for (const char* name : {"stem", "hfie1", "body4", "sfm_e.level2", "com_b.level3", "ffm_b", "ffm_e"}) EXPECT_TRUE(tap.count(name)) << name;

    BgCrack twin(cfg);
    EXPECT_EQ(oracle::values(twin.forward(img).p_b), oracle::values(a.p_b));
}

TEST(Model, EdgeAblationStillPredictsBody) {
    ModelConfig cfg;
    cfg.use_edge = false;
    BgCrack model(cfg);
    std::mt19937_64 r(64);
    const PredictionPair p = model.forward(oracle::random_tensor({1, 3, 64, 64}, r, 0.0, 1.0));
    EXPECT_EQ(p.p_b.shape(), (Shape{1, 1, 64, 64}));
    EXPECT_FALSE(p.p_e.defined());
    for (const auto& [name, t] : model.named_parameters()) {
        EXPECT_FALSE(name.starts_with("edge") || name.starts_with("hfie") || name.starts_with("com") ||
                     name.starts_with("ffm_e") || name.starts_with("sfm_e"))
            << name;
    }
    const BgCrack full{ModelConfig{}};
    EXPECT_LT(count_params(model), count_params(full));
}

TEST(Model, RejectsIllegalImages) {
    BgCrack model(tiny_config());
    EXPECT_THROW(model.forward(Tensor::zeros({1, 3, 48, 32})), GeometryError);
    EXPECT_THROW(model.forward(Tensor::zeros({1, 1, 32, 32})), GeometryError);
    EXPECT_THROW(BgCrack(ModelConfig{}).forward(Tensor::zeros({1, 3, 32, 32})), GeometryError);
}

TEST(Model, EveryParameterReceivesGradient) {
    BgCrack model(tiny_config());
    model.set_training(false);  // biases ahead of batch-statistics BN have exactly zero gradient otherwise
    std::mt19937_64 r(65);
    Tensor img = oracle::random_tensor({1, 3, 32, 32}, r, 0.0, 1.0);
    const PredictionPair p = model.forward(img);
    add(oracle::project(p.p_b, 1), oracle::project(p.p_e, 2)).backward();
    for (const auto& [name, t] : model.named_parameters()) {
        ASSERT_TRUE(t.has_grad()) << name;
        double norm = 0;
        for (double g : t.grad()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(Model, EndToEndFiniteDifference) {
    BgCrack model(tiny_config());
    std::mt19937_64 r(66);
    Tensor img = oracle::random_tensor({1, 3, 32, 32}, r, 0.0, 1.0);
    auto params = model.named_parameters();
    std::shuffle(params.begin(), params.end(), r);
    std::vector<Tensor> targets;
    for (int i = 0; i < 32; ++i) targets.push_back(params[i].second);
    auto loss = [&] {
        const PredictionPair p = model.forward(img);
        return add(oracle::project(p.p_b, 3), oracle::project(p.p_e, 4));
    };
    const auto res = oracle::finite_difference(loss, targets, 1e-4, 1, 67, 1e-6);
    EXPECT_EQ(res.checked, 32);
    EXPECT_LT(res.max_rel, 1e-3) << "max_abs " << res.max_abs;
}
