#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgcrack/data.hpp"
#include "bgcrack/losses.hpp"
#include "bgcrack/metrics.hpp"
#include "bgcrack/model.hpp"
#include "bgcrack/optim.hpp"

namespace bgcrack {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Ablations {
    bool no_edge = false;
    bool no_hfie = false;
    bool no_gip = false;
    bool no_grad_loss = false;
};

struct TrainConfig {
    double lr = 6e-3;
    int batch_size = 9;
    int epochs = 70;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    bool augment = false;
    // Stop after this many optimizer steps (negative: run all epochs).
    long max_steps = -1;
    Ablations ablations;
    ModelConfig model;
    LossConfig loss;
    std::optional<DatasetManifest> train_set;
    std::optional<DatasetManifest> val_set;
    // Used when no train_set is given: a synthetic train split and a
    // synthetic validation split drawn with seed + 1.
    SynthConfig synth_train;
    SynthConfig synth_val = [] {
        SynthConfig s;
        s.n_images = 4;
        s.seed = 1;
        return s;
    }();
    std::string out_dir;  // checkpoint + run log destination; empty: keep in memory only

    // Folds the ablation switches and seed into the model and loss configs.
    ModelConfig resolved_model() const;
    LossConfig resolved_loss() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Append-only JSON-lines log. Each line is one event object with a "kind"
// field: config, step, epoch, done.
class RunLog {
public:
    RunLog() = default;
    explicit RunLog(const std::string& path);

    void append(const nlohmann::json& event);
    const std::vector<nlohmann::json>& events() const { return events_; }

    static std::vector<nlohmann::json> load(const std::string& path);

private:
    std::vector<nlohmann::json> events_;
    std::optional<std::ofstream> file_;
};

struct StepRecord {
    long step = 0;
    int epoch = 0;
    double total = 0.0;
    std::map<std::string, double> components;
};

struct EpochRecord {
    int epoch = 0;
    MetricsReport val;
};

struct TrainResult {
    std::unique_ptr<BgCrack> model;       // weights of the best validation epoch
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_mi_iou = -1.0;
    std::string checkpoint_path;
    std::string log_path;
};

TrainResult train(const TrainConfig& cfg);
// Same loop on records already in memory.
TrainResult train_on(const TrainConfig& cfg, const std::vector<SampleRecord>& train_set,
                     const std::vector<SampleRecord>& val_set);

// Maps a batch of images [N,3,H,W] to body probabilities [N,1,H,W].
using Predictor = std::function<Tensor(const Tensor& images)>;

MetricsReport evaluate_predictor(const Predictor& predict, const std::vector<SampleRecord>& records, int batch_size = 4);
// Inference-mode metrics of the model plus its parameter count and the MACs
// of one forward pass at the records' geometry.
MetricsReport evaluate(BgCrack& model, const std::vector<SampleRecord>& records, int batch_size = 4);

Predictor model_predictor(BgCrack& model);

}  // namespace bgcrack
