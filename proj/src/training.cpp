#include "bgcrack/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "bgcrack/checkpoint.hpp"
#include "bgcrack/errors.hpp"

namespace bgcrack {

namespace fs = std::filesystem;

ModelConfig TrainConfig::resolved_model() const {
    ModelConfig m = model;
    m.init_seed = seed;
    if (ablations.no_edge) m.use_edge = false;
    if (ablations.no_hfie) m.use_hfie = false;
    if (ablations.no_gip) m.use_gip = false;
    return m;
}

LossConfig TrainConfig::resolved_loss() const {
    LossConfig l = loss;
    if (ablations.no_edge || !model.use_edge) l.use_edge = false;
    if (ablations.no_grad_loss) l.use_grad = false;
    return l;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (batch_size <= 0) throw ConfigError("train: batch size must be positive");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("train: betas must lie in [0,1)");
    resolved_model().validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {
        {"lr", c.lr},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"adam_betas", {c.beta1, c.beta2}},
        {"adam_eps", c.adam_eps},
        {"weight_decay", c.weight_decay},
        {"seed", c.seed},
        {"augment", c.augment},
        {"max_steps", c.max_steps},
        {"ablations",
         {{"no_edge", c.ablations.no_edge},
          {"no_hfie", c.ablations.no_hfie},
          {"no_gip", c.ablations.no_gip},
          {"no_grad_loss", c.ablations.no_grad_loss}}},
        {"model", c.model},
        {"loss",
         {{"alpha", {c.loss.alpha_bce_body, c.loss.alpha_bce_edge, c.loss.alpha_dice_body, c.loss.alpha_dice_edge,
                     c.loss.alpha_grad}},
          {"eps_dice", c.loss.eps_dice},
          {"eps_char", c.loss.eps_char}}},
        {"synth_train", c.synth_train},
        {"synth_val", c.synth_val},
        {"out_dir", c.out_dir},
    };
    if (c.train_set) j["train_set"] = *c.train_set;
    if (c.val_set) j["val_set"] = *c.val_set;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("adam_betas")) {
        c.beta1 = j.at("adam_betas").at(0).get<double>();
        c.beta2 = j.at("adam_betas").at(1).get<double>();
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.max_steps = j.value("max_steps", c.max_steps);
    if (j.contains("ablations")) {
        const auto& a = j.at("ablations");
        c.ablations.no_edge = a.value("no_edge", false);
        c.ablations.no_hfie = a.value("no_hfie", false);
        c.ablations.no_gip = a.value("no_gip", false);
        c.ablations.no_grad_loss = a.value("no_grad_loss", false);
    }
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        if (l.contains("alpha")) {
            const auto a = l.at("alpha").get<std::vector<double>>();
            if (a.size() != 5) throw ConfigError("loss.alpha must list five weights");
            c.loss.alpha_bce_body = a[0];
            c.loss.alpha_bce_edge = a[1];
            c.loss.alpha_dice_body = a[2];
            c.loss.alpha_dice_edge = a[3];
            c.loss.alpha_grad = a[4];
        }
        c.loss.eps_dice = l.value("eps_dice", c.loss.eps_dice);
        c.loss.eps_char = l.value("eps_char", c.loss.eps_char);
    }
    if (j.contains("train_set")) c.train_set = j.at("train_set").get<DatasetManifest>();
    if (j.contains("val_set")) c.val_set = j.at("val_set").get<DatasetManifest>();
    if (j.contains("synth_train")) c.synth_train = j.at("synth_train").get<SynthConfig>();
    if (j.contains("synth_val")) c.synth_val = j.at("synth_val").get<SynthConfig>();
    c.out_dir = j.value("out_dir", c.out_dir);
}

RunLog::RunLog(const std::string& path) {
    file_.emplace(path, std::ios::app);
    if (!*file_) throw DataError("cannot open run log: " + path);
}

void RunLog::append(const nlohmann::json& event) {
    events_.push_back(event);
    if (file_) {
        *file_ << event.dump() << "\n";
        file_->flush();
    }
}

std::vector<nlohmann::json> RunLog::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open run log: " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

Predictor model_predictor(BgCrack& model) {
    return [&model](const Tensor& images) {
        NoGradGuard no_grad;
        return model.forward(images).p_b;
    };
}

MetricsReport evaluate_predictor(const Predictor& predict, const std::vector<SampleRecord>& records, int batch_size) {
    if (records.empty()) throw DataError("evaluate: no records");
    std::vector<std::vector<double>> preds, gts;
    for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(records.size(), start + batch_size); ++i) idx.push_back(i);
        const Batch b = make_batch(records, idx);
        const Tensor p = predict(b.images);
        const std::size_t per = p.numel() / idx.size();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            preds.emplace_back(p.data().begin() + k * per, p.data().begin() + (k + 1) * per);
            gts.emplace_back(b.g_b.data().begin() + k * per, b.g_b.data().begin() + (k + 1) * per);
        }
    }
    MetricsReport r;
    r.mi_iou = mi_iou(preds, gts);
    r.mi_dice = mi_dice(preds, gts);
    r.n_images = static_cast<std::int64_t>(preds.size());
    return r;
}

MetricsReport evaluate(BgCrack& model, const std::vector<SampleRecord>& records, int batch_size) {
    const bool was_training = model.training();
    model.set_training(false);
    MetricsReport r = evaluate_predictor(model_predictor(model), records, batch_size);
    r.params = count_params(model);
    const Tensor probe = Tensor::zeros({1, 3, records[0].height(), records[0].width()});
    r.macs = count_macs([&] { model.forward(probe); });
    model.set_training(was_training);
    return r;
}

namespace {

bool all_finite(const LossReport& r) {
    if (!std::isfinite(r.total.item())) return false;
    for (const auto& [name, v] : r.components)
        if (!std::isfinite(v)) return false;
    return true;
}

std::unique_ptr<BgCrack> snapshot(const BgCrack& model) {
    auto copy = std::make_unique<BgCrack>(model.config());
    std::map<std::string, Tensor> state;
    for (const auto& [n, t] : model.named_parameters()) state.emplace(n, t);
    for (const auto& [n, t] : model.named_buffers()) state.emplace(n, t);
    load_state(*copy, state);
    return copy;
}

}  // namespace

TrainResult train_on(const TrainConfig& cfg, const std::vector<SampleRecord>& train_set,
                     const std::vector<SampleRecord>& val_set) {
    cfg.validate();
    if (train_set.empty() && cfg.epochs > 0) throw DataError("train: training split is empty");
    const ModelConfig mcfg = cfg.resolved_model();
    const LossConfig lcfg = cfg.resolved_loss();

    TrainResult result;
    auto model = std::make_unique<BgCrack>(mcfg);
    Adam opt(model->parameters(), {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});

    RunLog log;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        result.log_path = (fs::path(cfg.out_dir) / "run.jsonl").string();
        result.checkpoint_path = (fs::path(cfg.out_dir) / "best.safetensors").string();
        fs::remove(result.log_path);
        log = RunLog(result.log_path);
    }
    log.append({{"kind", "config"}, {"config", cfg}, {"seed", cfg.seed}});

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train_set.size());
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    long step = 0;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        model->set_training(true);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(), start + cfg.batch_size));
            Batch b;
            if (cfg.augment) {
                std::vector<SampleRecord> aug;
                for (std::size_t k = 0; k < idx.size(); ++k)
                    aug.push_back(augment(train_set[idx[k]], shuffle_rng()));
                std::vector<std::size_t> local(aug.size());
                std::iota(local.begin(), local.end(), 0);
                b = make_batch(aug, local);
            } else {
                b = make_batch(train_set, idx);
            }

            opt.zero_grad();
            const PredictionPair pair = model->forward(b.images);
            const LossReport loss = total_loss(pair, b.g_b, b.g_e, lcfg);
            if (!all_finite(loss)) {
                nlohmann::json diag = {{"kind", "abort"}, {"step", step}, {"epoch", epoch}, {"components", loss.components}};
                log.append(diag);
                throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                    std::to_string(epoch) + "): " + nlohmann::json(loss.components).dump());
            }
            loss.total.backward();
            opt.step();
            ++step;

            StepRecord rec{step, epoch, loss.total.item(), loss.components};
            log.append({{"kind", "step"}, {"step", step}, {"epoch", epoch}, {"total", rec.total},
                        {"components", rec.components}, {"wall_s", elapsed()}});
            result.steps.push_back(std::move(rec));
            if (cfg.max_steps >= 0 && step >= cfg.max_steps) stop = true;
        }

        if (!val_set.empty()) {
            MetricsReport val = evaluate_predictor(
                [&](const Tensor& x) {
                    model->set_training(false);
                    NoGradGuard no_grad;
                    return model->forward(x).p_b;
                },
                val_set, cfg.batch_size);
            val.params = count_params(*model);
            result.epochs.push_back({epoch, val});
            log.append({{"kind", "epoch"}, {"epoch", epoch}, {"val", val}, {"wall_s", elapsed()}});
            if (val.mi_iou > result.best_val_mi_iou) {
                result.best_val_mi_iou = val.mi_iou;
                result.best_epoch = epoch;
                result.model = snapshot(*model);
            }
        }
    }
    if (!result.model) result.model = snapshot(*model);
    result.model->set_training(false);

    if (!result.checkpoint_path.empty())
        save_model(result.checkpoint_path, *result.model,
                   {{"best_epoch", std::to_string(result.best_epoch)}, {"seed", std::to_string(cfg.seed)}});
    log.append({{"kind", "done"}, {"steps", step}, {"best_epoch", result.best_epoch},
                {"best_val_mi_iou", result.best_val_mi_iou}, {"wall_s", elapsed()}});
    return result;
}

TrainResult train(const TrainConfig& cfg) {
    std::vector<SampleRecord> train_records, val_records;
    if (cfg.train_set) {
        train_records = load_dataset(*cfg.train_set);
        if (cfg.val_set) val_records = load_dataset(*cfg.val_set);
    } else {
        train_records = generate_synthetic(cfg.synth_train);
        val_records = generate_synthetic(cfg.synth_val);
    }
    return train_on(cfg, train_records, val_records);
}

}  // namespace bgcrack
