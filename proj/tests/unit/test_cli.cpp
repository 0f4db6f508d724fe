#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "bgcrack/checkpoint.hpp"
#include "bgcrack/training.hpp"
#include "fixtures.hpp"

using nlohmann::json;
using fixture::TempDir;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CliRun cli(const TempDir& dir, const std::string& args) {
    const std::string err = dir / "stderr.txt";
    const std::string cmd = std::string(BGCRACK_CLI) + " " + args + " 2>" + err;
    CliRun r;
    FILE* pipe = popen(cmd.c_str(), "r");
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
}

void write_json(const std::string& path, const json& j) { std::ofstream(path) << j.dump(2); }

}  // namespace

TEST(Cli, SynthTrainEvalPredictGradcamProfile) {
    TempDir dir;
    CliRun r = cli(dir, "synth --out " + (dir / "data") + " --split train --n 6 --size 64 --seed 1");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("n_images"), 6);
    ASSERT_EQ(cli(dir, "synth --out " + (dir / "data") + " --split val --n 2 --size 64 --seed 2").code, 0);

    bgcrack::TrainConfig cfg;
    cfg.model = fixture::tiny_config(2);
    cfg.batch_size = 3;
    write_json(dir / "train.json", cfg);
    r = cli(dir, "train --config " + (dir / "train.json") + " --data " + (dir / "data") + " --out " + (dir / "run") +
                     " --epochs 1 --seed 3 --lr 0.001");
    ASSERT_EQ(r.code, 0) << r.err;
    const json tr = json::parse(r.out);
    EXPECT_EQ(tr.at("steps"), 2);
    const std::string ckpt = tr.at("checkpoint");
    ASSERT_TRUE(std::filesystem::exists(ckpt));
    const auto events = bgcrack::RunLog::load(tr.at("log"));
    EXPECT_EQ(events.front().at("config").at("lr"), 0.001);
    EXPECT_EQ(events.front().at("seed"), 3);

    r = cli(dir, "eval --checkpoint " + ckpt + " --data " + (dir / "data") + " --split val");
    ASSERT_EQ(r.code, 0) << r.err;
    const json ev = json::parse(r.out);
    for (const char* key : {"mi_iou", "mi_dice", "params", "macs", "n_images"}) EXPECT_TRUE(ev.contains(key)) << key;
    EXPECT_EQ(ev.at("n_images"), 2);
    EXPECT_EQ(cli(dir, "eval --checkpoint " + ckpt + " --data " + (dir / "data") + " --split val").out, r.out);

    const std::string image = (dir / "data") + "/val/images/synth_00000.png";
    r = cli(dir, "predict --checkpoint " + ckpt + " --out " + (dir / "pred") + " " + image);
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* key : {"mask", "edge", "overlay"})
        EXPECT_TRUE(std::filesystem::exists(json::parse(r.out)[0].at(key).get<std::string>()));

    r = cli(dir, "gradcam --checkpoint " + ckpt + " --list-layers");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(json::parse(r.out).empty());
    r = cli(dir, "gradcam --checkpoint " + ckpt + " --image " + image + " --target edge --layer com_e.level1 --out " +
                     (dir / "cam.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "cam.png"));

    r = cli(dir, "profile --height 64 --width 64");
    ASSERT_EQ(r.code, 0) << r.err;
    const json full = json::parse(r.out);
    r = cli(dir, "profile --height 64 --width 64 --no-edge");
    EXPECT_LT(json::parse(r.out).at("params"), full.at("params"));
}

TEST(Cli, NoEdgeCheckpointLacksEdgeParameters) {
    TempDir dir;
    bgcrack::TrainConfig cfg;
    cfg.model = fixture::tiny_config(2);
    cfg.epochs = 0;
    write_json(dir / "train.json", cfg);
    const CliRun r = cli(dir, "train --config " + (dir / "train.json") + " --no-edge --out " + (dir / "run"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto data = bgcrack::read_checkpoint(json::parse(r.out).at("checkpoint"));
    for (const auto& [name, t] : data.tensors)
        EXPECT_FALSE(name.starts_with("edge") || name.starts_with("hfie") || name.starts_with("sfm_e.") ||
                     name.starts_with("com.") || name.starts_with("ffm_e."))
            << name;
}

TEST(Cli, ErrorsAreMachineReadable) {
    TempDir dir;
    CliRun r = cli(dir, "eval --checkpoint " + (dir / "none.safetensors") + " --data " + (dir / "none"));
    EXPECT_EQ(r.code, 1);
    json e = json::parse(r.err);
    EXPECT_TRUE(e.contains("error"));
    EXPECT_TRUE(e.contains("message"));

    r = cli(dir, "frobnicate");
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(json::parse(r.err).at("error"), "usage");

    write_json(dir / "bad.json", json{{"batch_size", 0}});
    r = cli(dir, "train --config " + (dir / "bad.json"));
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(json::parse(r.err).at("error"), "config");

    r = cli(dir, "synth --out " + (dir / "d") + " --size 50");
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(json::parse(r.err).at("error"), "config");
}
