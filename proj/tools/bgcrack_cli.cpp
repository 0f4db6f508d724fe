// Command-line front end: train, eval, predict, gradcam, profile, synth.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bgcrack/checkpoint.hpp"
#include "bgcrack/data.hpp"
#include "bgcrack/errors.hpp"
#include "bgcrack/inference.hpp"
#include "bgcrack/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bgcrack;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
}

struct Overrides {
    Ablations ablations;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<int> batch;
    std::optional<int> epochs;

    void add_to(CLI::App* cmd, bool training) {
        cmd->add_flag("--no-edge", ablations.no_edge, "Remove the edge stream and its loss terms");
        cmd->add_flag("--no-hfie", ablations.no_hfie, "Remove the high-frequency enhancement modules");
        cmd->add_flag("--no-gip", ablations.no_gip, "Remove the global information perception modules");
        cmd->add_flag("--no-grad-loss", ablations.no_grad_loss, "Drop the gradient loss term");
        cmd->add_option("--seed", seed, "Random seed");
        if (training) {
            cmd->add_option("--lr", lr, "Learning rate");
            cmd->add_option("--batch", batch, "Batch size");
            cmd->add_option("--epochs", epochs, "Number of epochs");
        }
    }

    void apply(TrainConfig& cfg) const {
        cfg.ablations.no_edge |= ablations.no_edge;
        cfg.ablations.no_hfie |= ablations.no_hfie;
        cfg.ablations.no_gip |= ablations.no_gip;
        cfg.ablations.no_grad_loss |= ablations.no_grad_loss;
        if (seed) cfg.seed = *seed;
        if (lr) cfg.lr = *lr;
        if (batch) cfg.batch_size = *batch;
        if (epochs) cfg.epochs = *epochs;
    }
};

TrainConfig load_train_config(const std::string& path) {
    TrainConfig cfg;
    if (!path.empty()) cfg = read_json_file(path).get<TrainConfig>();
    return cfg;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

int run(int argc, char** argv) {
    CLI::App app{"BGCrack boundary-guided crack segmentation"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model and save the best-validation checkpoint");
    std::string train_config, train_out = "runs/latest", train_data;
    Overrides train_over;
    train_cmd->add_option("--config", train_config, "TrainConfig JSON");
    train_cmd->add_option("--out", train_out, "Output directory for checkpoint and run log");
    train_cmd->add_option("--data", train_data, "Dataset root with train/ and val/ splits (default: synthetic)");
    train_over.add_to(train_cmd, true);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_manifest;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset root");
    eval_cmd->add_option("--split", eval_split, "Split name");
    eval_cmd->add_option("--config", eval_manifest, "Dataset manifest JSON {root, split, expected_count, size}");

    // predict
    auto* pred_cmd = app.add_subcommand("predict", "Write mask, edge and overlay PNGs for images");
    std::string pred_ckpt, pred_out = "predictions";
    std::vector<std::string> pred_images;
    pred_cmd->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
    pred_cmd->add_option("--out", pred_out, "Output directory");
    pred_cmd->add_option("images", pred_images, "Input images")->required();

    // gradcam
    auto* cam_cmd = app.add_subcommand("gradcam", "Render a Grad-CAM heatmap for one activation");
    std::string cam_ckpt, cam_image, cam_target = "body", cam_layer = "ffm_b", cam_out = "gradcam.png";
    bool cam_list = false;
    cam_cmd->add_option("--checkpoint", cam_ckpt, "Checkpoint file")->required();
    cam_cmd->add_option("--image", cam_image, "Input image");
    cam_cmd->add_option("--target", cam_target, "body or edge")->check(CLI::IsMember({"body", "edge"}));
    cam_cmd->add_option("--layer", cam_layer, "Activation name");
    cam_cmd->add_option("--out", cam_out, "Output PNG");
    cam_cmd->add_flag("--list-layers", cam_list, "Print available activation names");

    // profile
    auto* prof_cmd = app.add_subcommand("profile", "Report parameter count and MACs");
    std::string prof_config;
    int prof_h = 512, prof_w = 512;
    Overrides prof_over;
    prof_cmd->add_option("--config", prof_config, "TrainConfig JSON (its model section is used)");
    prof_cmd->add_option("--height", prof_h, "Input height");
    prof_cmd->add_option("--width", prof_w, "Input width");
    prof_over.add_to(prof_cmd, false);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset split on disk");
    std::string synth_config, synth_out = "data/synth", synth_split = "train";
    std::optional<int> synth_n, synth_size;
    std::optional<std::uint64_t> synth_seed;
    synth_cmd->add_option("--config", synth_config, "SynthConfig JSON");
    synth_cmd->add_option("--out", synth_out, "Dataset root");
    synth_cmd->add_option("--split", synth_split, "Split name");
    synth_cmd->add_option("--n", synth_n, "Number of images");
    synth_cmd->add_option("--size", synth_size, "Image side (multiple of 32)");
    synth_cmd->add_option("--seed", synth_seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    }

    if (*train_cmd) {
        TrainConfig cfg = load_train_config(train_config);
        train_over.apply(cfg);
        cfg.out_dir = train_out;
        if (!train_data.empty()) {
            DatasetManifest tr, va;
            tr.root = va.root = train_data;
            tr.split = "train";
            va.split = "val";
            cfg.train_set = tr;
            cfg.val_set = va;
        }
        const TrainResult r = train(cfg);
        print({{"checkpoint", r.checkpoint_path},
               {"log", r.log_path},
               {"steps", r.steps.size()},
               {"best_epoch", r.best_epoch},
               {"best_val_mi_iou", r.best_val_mi_iou}});
    } else if (*eval_cmd) {
        DatasetManifest m;
        if (!eval_manifest.empty()) {
            m = read_json_file(eval_manifest).get<DatasetManifest>();
        } else {
            if (eval_data.empty()) throw ConfigError("eval: pass --data or --config");
            m.root = eval_data;
            m.split = eval_split;
        }
        auto model = load_model(eval_ckpt);
        const auto records = load_dataset(m);
        print(evaluate(*model, records));
    } else if (*pred_cmd) {
        auto model = load_model(pred_ckpt);
        json out = json::array();
        for (const auto& path : pred_images) {
            const PredictOutputs f = predict_to_files(*model, path, pred_out);
            out.push_back({{"image", path}, {"mask", f.mask}, {"edge", f.edge}, {"overlay", f.overlay}});
        }
        print(out);
    } else if (*cam_cmd) {
        auto model = load_model(cam_ckpt);
        if (cam_list) {
            print(gradcam_layers(*model));
            return 0;
        }
        if (cam_image.empty()) throw ConfigError("gradcam: --image is required");
        const Tensor image = read_image(cam_image);
        if (image.dim(1) % 32 || image.dim(2) % 32) throw GeometryError("gradcam: image sides must be multiples of 32");
        const Tensor heat = gradcam(*model, image, cam_target == "edge" ? CamTarget::Edge : CamTarget::Body, cam_layer);
        write_heatmap(cam_out, image, heat);
        print({{"heatmap", cam_out}, {"layer", cam_layer}, {"target", cam_target}});
    } else if (*prof_cmd) {
        TrainConfig cfg = load_train_config(prof_config);
        prof_over.apply(cfg);
        print(profile(cfg.resolved_model(), prof_h, prof_w));
    } else if (*synth_cmd) {
        SynthConfig cfg;
        if (!synth_config.empty()) cfg = read_json_file(synth_config).get<SynthConfig>();
        if (synth_n) cfg.n_images = *synth_n;
        if (synth_size) cfg.size = *synth_size;
        if (synth_seed) cfg.seed = *synth_seed;
        const auto records = generate_synthetic(cfg);
        dump_dataset(records, synth_out, synth_split);
        print({{"root", synth_out}, {"split", synth_split}, {"n_images", records.size()}});
    }
    return 0;
}

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const GeometryError*>(&e)) return "geometry";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const DataError*>(&e)) return "data";
    if (dynamic_cast<const TrainingError*>(&e)) return "training";
    return "internal";
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
}
