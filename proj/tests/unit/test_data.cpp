#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <opencv2/imgcodecs.hpp>

#include "bgcrack/data.hpp"
#include "bgcrack/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bgcrack;
namespace fs = std::filesystem;

namespace {

using fixture::TempDir;

Tensor mask_from(int h, int w, const std::vector<std::pair<int, int>>& on) {
    Tensor m = Tensor::zeros({1, h, w});
    for (auto [y, x] : on) m.data()[y * w + x] = 1.0;
    return m;
}

// Element (c, y, x) of a [C,H,W] tensor.
double at3(const Tensor& t, int c, int y, int x) { return t.data()[(c * t.dim(1) + y) * t.dim(2) + x]; }

double count(const Tensor& t) {
    double s = 0;
    for (double v : t.data()) s += v;
    return s;
}

}  // namespace

TEST(EdgeLabel, HandMorphology) {
    EXPECT_EQ(count(derive_edge_label(Tensor::zeros({1, 16, 16}))), 0.0);

    const Tensor e = derive_edge_label(mask_from(16, 16, {{5, 5}}));
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) EXPECT_EQ(e.data()[y * 16 + x], (std::abs(y - 5) <= 1 && std::abs(x - 5) <= 1) ? 1.0 : 0.0);

    // Full-canvas mask: outside counts as background, so only the image frame is edge.
    const Tensor frame = derive_edge_label(Tensor::full({1, 16, 16}, 1.0));
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) EXPECT_EQ(frame.data()[y * 16 + x], (y == 0 || x == 0 || y == 15 || x == 15) ? 1.0 : 0.0);

    // Solid 6x6 square at [5,11): inner frame plus outer frame.
    std::vector<std::pair<int, int>> sq;
    for (int y = 5; y < 11; ++y)
        for (int x = 5; x < 11; ++x) sq.emplace_back(y, x);
    const Tensor band = derive_edge_label(mask_from(16, 16, sq));
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const bool outer = y >= 4 && y <= 11 && x >= 4 && x <= 11;
            const bool inner = y >= 6 && y <= 9 && x >= 6 && x <= 9;
            EXPECT_EQ(band.data()[y * 16 + x], outer && !inner ? 1.0 : 0.0) << y << "," << x;
        }
    EXPECT_EQ(count(derive_edge_label(mask_from(16, 16, sq), 2)), 10 * 10 - 2 * 2);
}

TEST(EdgeLabel, SubsetOfDilationDisjointFromErosion) {
    SynthConfig cfg;
    cfg.n_images = 4;
    cfg.size = 32;
    for (const SampleRecord& s : generate_synthetic(cfg)) {
        const Tensor e = s.g_e;
        const Tensor near = derive_edge_label(s.g_b, 1);
        EXPECT_EQ(oracle::values(e), oracle::values(near));
        const int w = s.width(), h = s.height();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (e.data()[y * w + x] == 0.0) continue;
                bool any = false, all = true;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        const double v = (yy < 0 || xx < 0 || yy >= h || xx >= w) ? 0.0 : s.g_b.data()[yy * w + xx];
                        any = any || v == 1.0;
                        all = all && v == 1.0;
                    }
                EXPECT_TRUE(any);
                EXPECT_FALSE(all);
            }
    }
}

TEST(Augment, OpsArePermutationsOfTheRecord) {
    SynthConfig cfg;
    cfg.n_images = 1;
    cfg.size = 32;
    SampleRecord s = generate_synthetic(cfg)[0];
    // Mark the top-left corner of each array.
    s.image.data()[0] = 0.123;
    s.g_b.data()[0] = 1.0;
    s.g_e.data()[0] = 1.0;
    const double nb = count(s.g_b), ne = count(s.g_e);

    const SampleRecord id = apply_augment(s, AugmentOp::Identity);
    EXPECT_EQ(oracle::values(id.image), oracle::values(s.image));
    const SampleRecord hh = apply_augment(apply_augment(s, AugmentOp::FlipH), AugmentOp::FlipH);
    EXPECT_EQ(oracle::values(hh.image), oracle::values(s.image));
    EXPECT_EQ(oracle::values(hh.g_b), oracle::values(s.g_b));

    // Counter-clockwise rotation moves (0,0) to (W-1, 0).
    const SampleRecord r = apply_augment(s, AugmentOp::Rot90);
    EXPECT_EQ(at3(r.image, 0, 31, 0), 0.123);
    EXPECT_EQ(at3(r.g_b, 0, 31, 0), 1.0);
    EXPECT_EQ(at3(r.g_e, 0, 31, 0), 1.0);
    const SampleRecord r4 = apply_augment(apply_augment(r, AugmentOp::Rot180), AugmentOp::Rot90);
    EXPECT_EQ(oracle::values(r4.image), oracle::values(s.image));

    for (AugmentOp op : {AugmentOp::FlipH, AugmentOp::FlipV, AugmentOp::Rot90, AugmentOp::Rot180, AugmentOp::Rot270}) {
        const SampleRecord a = apply_augment(s, op);
        EXPECT_EQ(count(a.g_b), nb);
        EXPECT_EQ(count(a.g_e), ne);
    }
    std::set<int> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) seen.insert(static_cast<int>(draw_augment_op(seed)));
    EXPECT_EQ(seen.size(), 6u);
    EXPECT_EQ(oracle::values(augment(s, 9).image), oracle::values(augment(s, 9).image));
}

TEST(Synthetic, DeterministicAndImbalanced) {
    SynthConfig cfg;
    cfg.n_images = 100;
    cfg.size = 64;
    cfg.seed = 5;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    ASSERT_EQ(a.size(), 100u);
    double frac = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(oracle::values(a[i].image), oracle::values(b[i].image));
        EXPECT_EQ(oracle::values(a[i].g_b), oracle::values(b[i].g_b));
        frac += count(a[i].g_b) / (64.0 * 64.0);
        for (double v : a[i].image.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    }
    frac /= 100;
    EXPECT_GT(frac, 0.0);
    EXPECT_LT(frac, 0.15);

    cfg.seed = 6;
    EXPECT_NE(oracle::values(generate_synthetic(cfg)[0].image), oracle::values(a[0].image));

    cfg.crack_min = cfg.crack_max = 0;
    cfg.n_images = 5;
    for (const auto& s : generate_synthetic(cfg)) EXPECT_EQ(count(s.g_b), 0.0);
}

TEST(Synthetic, ConfigValidation) {
    SynthConfig cfg;
    cfg.size = 48;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.width_min = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.crack_min = 3;
    cfg.crack_max = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    const nlohmann::json j = SynthConfig{};
    EXPECT_EQ(j.get<SynthConfig>().size, 64);
}

TEST(Dataset, RoundTripIsLossless) {
    TempDir dir;
    SynthConfig cfg;
    cfg.n_images = 12;
    cfg.size = 32;
    const auto records = generate_synthetic(cfg);
    dump_dataset(records, dir.path.string(), "val");
    DatasetManifest m{dir.path.string(), "val", 12, 32};
    std::vector<std::string> warnings;
    const auto back = load_dataset(m, &warnings);
    EXPECT_TRUE(warnings.empty());
    ASSERT_EQ(back.size(), 12u);
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].id, records[i].id);
        EXPECT_EQ(oracle::values(back[i].image), oracle::values(records[i].image));
        EXPECT_EQ(oracle::values(back[i].g_b), oracle::values(records[i].g_b));
        EXPECT_EQ(oracle::values(back[i].g_e), oracle::values(records[i].g_e));
    }

    m.expected_count = 13;
    load_dataset(m, &warnings);
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(Dataset, ErrorsAndWarnings) {
    TempDir dir;
    EXPECT_THROW(load_dataset(DatasetManifest{(dir.path / "missing").string()}), DataError);

    fs::create_directories(dir.path / "train" / "images");
    fs::create_directories(dir.path / "train" / "masks");
    std::vector<std::string> warnings;
    EXPECT_TRUE(load_dataset(DatasetManifest{dir.path.string()}, &warnings).empty());
    EXPECT_FALSE(warnings.empty());

    cv::imwrite((dir.path / "train" / "images" / "a.png").string(), cv::Mat(32, 32, CV_8UC3, cv::Scalar(10, 20, 30)));
    EXPECT_THROW(load_dataset(DatasetManifest{dir.path.string()}), DataError);

    // Masks binarize at > 127.
    cv::Mat mask(32, 32, CV_8UC1, cv::Scalar(127));
    mask.at<unsigned char>(3, 4) = 128;
    cv::imwrite((dir.path / "train" / "masks" / "a.png").string(), mask);
    const auto rec = load_dataset(DatasetManifest{dir.path.string()});
    ASSERT_EQ(rec.size(), 1u);
    EXPECT_EQ(count(rec[0].g_b), 1.0);
    EXPECT_EQ(at3(rec[0].g_b, 0, 3, 4), 1.0);
    EXPECT_NEAR(at3(rec[0].image, 0, 0, 0), 30 / 255.0, 1e-15);  // channel 0 is red

    fs::remove(dir.path / "train" / "images" / "a.png");
    std::ofstream(dir.path / "train" / "images" / "a.png") << "not a png";
    EXPECT_THROW(load_dataset(DatasetManifest{dir.path.string()}), DataError);
}

TEST(Dataset, SteelcrackManifest) {
    const DatasetManifest train = DatasetManifest::steelcrack("/data", "train");
    EXPECT_EQ(train.expected_count, 3300);
    EXPECT_EQ(train.size, 512);
    EXPECT_EQ(DatasetManifest::steelcrack("/data", "val").expected_count, 525);
    EXPECT_EQ(DatasetManifest::steelcrack("/data", "test").expected_count, 530);
    const nlohmann::json j = train;
    const DatasetManifest back = j.get<DatasetManifest>();
    EXPECT_EQ(back.root, "/data");
    EXPECT_EQ(back.expected_count, 3300);
}

TEST(Batching, StacksRecords) {
    SynthConfig cfg;
    cfg.n_images = 3;
    cfg.size = 32;
    const auto rec = generate_synthetic(cfg);
    const Batch b = make_batch(rec, {2, 0});
    EXPECT_EQ(b.images.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(b.g_e.shape(), (Shape{2, 1, 32, 32}));
    EXPECT_EQ(b.images.data()[0], rec[2].image.data()[0]);
    EXPECT_EQ(b.g_b.data()[32 * 32], rec[0].g_b.data()[0]);
}
