#include "bgcrack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bgcrack/errors.hpp"

namespace bgcrack {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    nlohmann::json header = nlohmann::json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : data.tensors) {
        const std::size_t bytes = t.numel() * sizeof(double);
        header[name] = {{"dtype", "F64"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    if (!data.metadata.empty()) header["__metadata__"] = data.metadata;
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : data.tensors)
        out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw DataError("failed while writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1ull << 30)) throw DataError("corrupt checkpoint header: " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
    }
    CheckpointData data;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            data.metadata = entry.get<std::map<std::string, std::string>>();
            continue;
        }
        if (entry.at("dtype") != "F64") throw DataError("checkpoint tensor '" + name + "' is not F64");
        const Shape shape = entry.at("shape").get<Shape>();
        const auto offsets = entry.at("data_offsets").get<std::array<std::size_t, 2>>();
        if (offsets[1] < offsets[0] || offsets[1] > blob.size() ||
            offsets[1] - offsets[0] != shape_numel(shape) * sizeof(double))
            throw DataError("checkpoint tensor '" + name + "' has inconsistent offsets");
        std::vector<double> values(shape_numel(shape));
        std::memcpy(values.data(), blob.data() + offsets[0], offsets[1] - offsets[0]);
        data.tensors.emplace(name, Tensor::from(shape, std::move(values)));
    }
    return data;
}

void save_model(const std::string& path, const BgCrack& model, const std::map<std::string, std::string>& extra) {
    CheckpointData data;
    data.metadata = extra;
    data.metadata["format"] = "bgcrack";
    data.metadata["config"] = nlohmann::json(model.config()).dump();
    for (const auto& [name, t] : model.named_parameters()) data.tensors.emplace(name, t);
    for (const auto& [name, t] : model.named_buffers()) data.tensors.emplace(name, t);
    write_checkpoint(path, data);
}

void load_state(Module& module, const std::map<std::string, Tensor>& tensors) {
    NamedTensors targets = module.named_parameters();
    for (auto& b : module.named_buffers()) targets.push_back(b);
    if (targets.size() != tensors.size())
        throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(targets.size()));
    for (auto& [name, dst] : targets) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape() != dst.shape())
            throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                              ", model expects " + shape_str(dst.shape()));
        std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
    }
}

std::unique_ptr<BgCrack> load_model(const std::string& path) {
    const CheckpointData data = read_checkpoint(path);
    auto it = data.metadata.find("config");
    if (it == data.metadata.end()) throw ConfigError("checkpoint has no model config: " + path);
    const ModelConfig cfg = nlohmann::json::parse(it->second).get<ModelConfig>();
    auto model = std::make_unique<BgCrack>(cfg);
    load_state(*model, data.tensors);
    return model;
}

}  // namespace bgcrack
