#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "bgcrack/backbone.hpp"
#include "bgcrack/decoder.hpp"
#include "bgcrack/gip.hpp"
#include "bgcrack/hfie.hpp"

namespace bgcrack {

struct ModelConfig {
    BackboneConfig backbone;
    HfieConfig hfie;
    GipConfig gip;
    int embed_channels = 32;
    int head_channels = 16;
    bool use_edge = true;
    bool use_hfie = true;
    bool use_gip = true;
    std::uint64_t init_seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Named intermediate activations recorded during a forward pass.
using ActivationTap = std::map<std::string, Tensor>;

// Backbone -> HFIE on levels 1-2 -> EDGE / BODY embeddings (GIP on BODY_3,4)
// -> SFM per stream -> dense add -> COM -> dense add -> FFM_E, FFM_B -> fuse.
class BgCrack : public Module {
public:
    explicit BgCrack(const ModelConfig& cfg);

    PredictionPair forward(const Tensor& img, ActivationTap* tap = nullptr);

    const ModelConfig& config() const { return cfg_; }
    Backbone& backbone() { return *backbone_; }
    Hfie* hfie(int level) { return hfie_.at(static_cast<std::size_t>(level - 1)).get(); }
    Com* com() { return com_.get(); }

private:
    ModelConfig cfg_;
    Rng rng_;
    std::unique_ptr<Backbone> backbone_;
    std::array<std::unique_ptr<Hfie>, 2> hfie_;
    std::array<std::unique_ptr<StreamEmbed>, 4> edge_;
    std::array<std::unique_ptr<StreamEmbed>, 4> body_;
    std::unique_ptr<Sfm> sfm_e_, sfm_b_;
    std::unique_ptr<Com> com_;
    std::unique_ptr<Ffm> ffm_e_, ffm_b_;
};

}  // namespace bgcrack
