#pragma once

#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "bgcrack/model.hpp"

namespace bgcrack {

// Checkpoints use the safetensors container: an 8-byte little-endian header
// length, a JSON header mapping tensor names to {dtype, shape, data_offsets}
// plus a "__metadata__" map of strings, then the raw little-endian F64 data.
// The model config is stored as a JSON string under metadata key "config".
struct CheckpointData {
    std::map<std::string, std::string> metadata;
    std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

// Parameters and buffers of `model` plus its config (and any extra metadata).
void save_model(const std::string& path, const BgCrack& model, const std::map<std::string, std::string>& extra = {});
std::unique_ptr<BgCrack> load_model(const std::string& path);

// Copies named tensors into the module; names and shapes must match exactly.
void load_state(Module& module, const std::map<std::string, Tensor>& tensors);

}  // namespace bgcrack
