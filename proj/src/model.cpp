#include "bgcrack/model.hpp"

#include "bgcrack/errors.hpp"

namespace bgcrack {

void ModelConfig::validate() const {
    backbone.validate();
    if (embed_channels <= 0) throw ConfigError("model: embed_channels must be positive");
    if (head_channels < 2 || head_channels % 2 != 0) throw ConfigError("model: head_channels must be an even number >= 2");
    if (use_gip) gip.validate(embed_channels);
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    nlohmann::json freqs_2d = nlohmann::json::array();
    for (const auto& [fh, fw] : cfg.hfie.freqs_2d) freqs_2d.push_back({fh, fw});
    j = {
        {"backbone",
         {{"stem_channels", cfg.backbone.stem_channels},
          {"stage_channels", cfg.backbone.stage_channels},
          {"dw_kernel", cfg.backbone.dw_kernel}}},
        {"hfie",
         {{"k1", cfg.hfie.k1},
          {"k2", cfg.hfie.k2},
          {"reduction", cfg.hfie.reduction},
          {"freqs_1d", cfg.hfie.freqs_1d},
          {"freqs_2d", freqs_2d}}},
        {"gip",
         {{"width", cfg.gip.width},
          {"local_kernel", cfg.gip.local_kernel},
          {"patch_h", cfg.gip.patch_h},
          {"patch_w", cfg.gip.patch_w},
          {"depth", cfg.gip.depth},
          {"heads", cfg.gip.heads},
          {"mlp_ratio", cfg.gip.mlp_ratio}}},
        {"embed_channels", cfg.embed_channels},
        {"head_channels", cfg.head_channels},
        {"use_edge", cfg.use_edge},
        {"use_hfie", cfg.use_hfie},
        {"use_gip", cfg.use_gip},
        {"init_seed", cfg.init_seed},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    cfg = ModelConfig{};
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        cfg.backbone.stem_channels = b.value("stem_channels", cfg.backbone.stem_channels);
        if (b.contains("stage_channels")) cfg.backbone.stage_channels = b.at("stage_channels").get<std::array<int, 4>>();
        cfg.backbone.dw_kernel = b.value("dw_kernel", cfg.backbone.dw_kernel);
    }
    if (j.contains("hfie")) {
        const auto& h = j.at("hfie");
        cfg.hfie.k1 = h.value("k1", cfg.hfie.k1);
        cfg.hfie.k2 = h.value("k2", cfg.hfie.k2);
        cfg.hfie.reduction = h.value("reduction", cfg.hfie.reduction);
        if (h.contains("freqs_1d")) cfg.hfie.freqs_1d = h.at("freqs_1d").get<std::vector<int>>();
        if (h.contains("freqs_2d"))
            for (const auto& p : h.at("freqs_2d")) cfg.hfie.freqs_2d.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
    if (j.contains("gip")) {
        const auto& g = j.at("gip");
        cfg.gip.width = g.value("width", cfg.gip.width);
        cfg.gip.local_kernel = g.value("local_kernel", cfg.gip.local_kernel);
        cfg.gip.patch_h = g.value("patch_h", cfg.gip.patch_h);
        cfg.gip.patch_w = g.value("patch_w", cfg.gip.patch_w);
        cfg.gip.depth = g.value("depth", cfg.gip.depth);
        cfg.gip.heads = g.value("heads", cfg.gip.heads);
        cfg.gip.mlp_ratio = g.value("mlp_ratio", cfg.gip.mlp_ratio);
    }
    cfg.embed_channels = j.value("embed_channels", cfg.embed_channels);
    cfg.head_channels = j.value("head_channels", cfg.head_channels);
    cfg.use_edge = j.value("use_edge", cfg.use_edge);
    cfg.use_hfie = j.value("use_hfie", cfg.use_hfie);
    cfg.use_gip = j.value("use_gip", cfg.use_gip);
    cfg.init_seed = j.value("init_seed", cfg.init_seed);
}

BgCrack::BgCrack(const ModelConfig& cfg) : cfg_((cfg.validate(), cfg)), rng_(cfg.init_seed) {
    backbone_ = std::make_unique<Backbone>(cfg.backbone, rng_);
    register_module("backbone", *backbone_);
    const auto& widths = cfg.backbone.stage_channels;
    const int ce = cfg.embed_channels;

    if (cfg.use_edge) {
        if (cfg.use_hfie) {
            for (int k = 0; k < 2; ++k) {
                hfie_[k] = std::make_unique<Hfie>(widths[k], cfg.hfie, rng_);
                register_module("hfie" + std::to_string(k + 1), *hfie_[k]);
            }
        }
        for (int k = 0; k < 4; ++k) {
            edge_[k] = std::make_unique<StreamEmbed>(widths[k], ce, rng_);
            register_module("edge" + std::to_string(k + 1), *edge_[k]);
        }
    }
    for (int k = 0; k < 4; ++k) {
        const bool with_gip = cfg.use_gip && k >= 2;
        body_[k] = std::make_unique<StreamEmbed>(widths[k], ce, rng_, with_gip ? &cfg.gip : nullptr);
        register_module("body" + std::to_string(k + 1), *body_[k]);
    }
    if (cfg.use_edge) {
        sfm_e_ = std::make_unique<Sfm>(ce, rng_);
        register_module("sfm_e", *sfm_e_);
    }
    sfm_b_ = std::make_unique<Sfm>(ce, rng_);
    register_module("sfm_b", *sfm_b_);
    if (cfg.use_edge) {
        com_ = std::make_unique<Com>();
        register_module("com", *com_);
        ffm_e_ = std::make_unique<Ffm>(ce, cfg.backbone.stem_channels, cfg.head_channels, true, rng_);
        register_module("ffm_e", *ffm_e_);
    }
    ffm_b_ = std::make_unique<Ffm>(ce, cfg.backbone.stem_channels, cfg.head_channels, cfg.use_edge, rng_);
    register_module("ffm_b", *ffm_b_);
}

PredictionPair BgCrack::forward(const Tensor& img, ActivationTap* tap) {
    auto record = [tap](const std::string& name, const Tensor& t) {
        if (tap && t.defined()) (*tap)[name] = t;
    };

    PyramidFeatures pyr = backbone_->forward(img);
    record("stem", pyr.x_s);
    for (int k = 0; k < 4; ++k) record("backbone.level" + std::to_string(k + 1), pyr.levels[k]);

    StageState s0;
    for (int k = 0; k < 4; ++k) {
        if (cfg_.use_edge) {
            Tensor in = pyr.levels[k];
            if (k < 2 && hfie_[k]) {
                in = hfie_[k]->forward(in);
                record("hfie" + std::to_string(k + 1), in);
            }
            s0.e[k] = edge_[k]->forward(in);
            record("edge" + std::to_string(k + 1), s0.e[k]);
        }
        s0.b[k] = body_[k]->forward(pyr.levels[k]);
        record("body" + std::to_string(k + 1), s0.b[k]);
    }

    StageState s1;
    if (cfg_.use_edge) s1.e = sfm_e_->forward(s0.e);
    s1.b = sfm_b_->forward(s0.b);
    for (int k = 0; k < 4; ++k) {
        record("sfm_e.level" + std::to_string(k + 1), s1.e[k]);
        record("sfm_b.level" + std::to_string(k + 1), s1.b[k]);
    }
    const StageState com_in = dense_add(s1, {s0});

    StageState s2 = com_ ? com_->forward(com_in) : com_in;
    for (int k = 0; k < 4; ++k) {
        record("com_e.level" + std::to_string(k + 1), s2.e[k]);
        record("com_b.level" + std::to_string(k + 1), s2.b[k]);
    }
    const StageState ffm_in = com_ ? dense_add(s2, {s0, s1}) : com_in;

    Tensor feat_b, feat_e, z_e;
    Tensor z_b_hat = ffm_b_->forward(ffm_in.b, ffm_in.e, pyr.x_s, &feat_b);
    record("ffm_b", feat_b);
    if (ffm_e_) {
        z_e = ffm_e_->forward(ffm_in.e, ffm_in.b, pyr.x_s, &feat_e);
        record("ffm_e", feat_e);
    }
    return final_fuse(z_b_hat, z_e);
}

}  // namespace bgcrack
