#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "bgcrack/model.hpp"

namespace fixture {

// Small model for fast tests. Level 4 of a 32x32 image is 1x1, so GIP
// patches are 1x1 unless the caller asks for larger ones.
inline bgcrack::ModelConfig tiny_config(int patch = 1) {
    bgcrack::ModelConfig cfg;
    cfg.backbone.stem_channels = 8;
    cfg.backbone.stage_channels = {8, 12, 16, 20};
    cfg.hfie.k1 = 4;
    cfg.hfie.k2 = 4;
    cfg.hfie.reduction = 4;
    cfg.embed_channels = 8;
    cfg.head_channels = 4;
    cfg.gip.heads = 2;
    cfg.gip.depth = 1;
    cfg.gip.patch_h = patch;
    cfg.gip.patch_w = patch;
    return cfg;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("bgcrack_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace fixture
