#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgcrack/tensor.hpp"

namespace bgcrack {

// One training/evaluation sample. image is [3,H,W] in [0,1]; g_b and g_e are
// binary [1,H,W] maps.
struct SampleRecord {
    std::string id;
    Tensor image;
    Tensor g_b;
    Tensor g_e;

    int height() const { return image.dim(1); }
    int width() const { return image.dim(2); }
};

struct DatasetManifest {
    std::string root;
    std::string split = "train";
    int expected_count = -1;  // negative: no expectation
    int size = -1;            // expected square side; negative: any
    int edge_width = 1;

    static DatasetManifest steelcrack(const std::string& root, const std::string& split);
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

// Reads root/<split>/{images,masks}/<id>.png in sorted id order. Images are
// scaled to [0,1], masks binarized at > 127 and edges derived from them.
// Count or size mismatches are reported through `warnings` (or stderr when
// no sink is given); a missing mask or unreadable file throws DataError.
std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest, std::vector<std::string>* warnings = nullptr);

// Writes records in the same layout load_dataset reads.
void dump_dataset(const std::vector<SampleRecord>& records, const std::string& root, const std::string& split);

// Morphological gradient: dilate(g, 3x3, width) XOR erode(g, 3x3, width).
// Pixels outside the map count as background.
Tensor derive_edge_label(const Tensor& g_b, int width = 1);

enum class AugmentOp { Identity, FlipH, FlipV, Rot90, Rot180, Rot270 };

// Applies op to image, g_b and g_e alike. Rot90 turns counter-clockwise.
SampleRecord apply_augment(const SampleRecord& s, AugmentOp op);
// Draws one of the six ops from a generator seeded with `seed`.
SampleRecord augment(const SampleRecord& s, std::uint64_t seed);
AugmentOp draw_augment_op(std::uint64_t seed);

struct SynthConfig {
    int n_images = 10;
    int size = 64;
    int crack_min = 1;
    int crack_max = 2;
    int width_min = 2;
    int width_max = 4;
    double noise_scale = 0.08;
    std::uint64_t seed = 0;
    int edge_width = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Low-frequency noise background with darker random-walk polyline cracks.
// Image values are quantized to 8 bits so a PNG round trip is lossless.
std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg);

// Stacks records[indices] into [N,3,H,W] images and [N,1,H,W] labels.
struct Batch {
    Tensor images;
    Tensor g_b;
    Tensor g_e;
};
Batch make_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& indices);

}  // namespace bgcrack
