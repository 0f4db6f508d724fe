#include "bgcrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bgcrack/errors.hpp"

namespace bgcrack {

namespace fs = std::filesystem;

DatasetManifest DatasetManifest::steelcrack(const std::string& root, const std::string& split) {
    DatasetManifest m;
    m.root = root;
    m.split = split;
    m.size = 512;
    if (split == "train") m.expected_count = 3300;
    else if (split == "val") m.expected_count = 525;
    else if (split == "test") m.expected_count = 530;
    return m;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = {{"root", m.root}, {"split", m.split}, {"expected_count", m.expected_count}, {"size", m.size},
         {"edge_width", m.edge_width}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m = DatasetManifest{};
    m.root = j.at("root").get<std::string>();
    m.split = j.value("split", m.split);
    m.expected_count = j.value("expected_count", m.expected_count);
    m.size = j.value("size", m.size);
    m.edge_width = j.value("edge_width", m.edge_width);
}

namespace {

cv::Mat mask_to_mat(const Tensor& g) {
    cv::Mat m(g.dim(1), g.dim(2), CV_8U);
    const auto v = g.data();
    for (int i = 0; i < m.rows * m.cols; ++i) m.data[i] = v[i] > 0.5 ? 1 : 0;
    return m;
}

Tensor mat_to_mask(const cv::Mat& m) {
    Tensor g = Tensor::zeros({1, m.rows, m.cols});
    auto v = g.data();
    for (int i = 0; i < m.rows * m.cols; ++i) v[i] = m.data[i] ? 1.0 : 0.0;
    return g;
}

Tensor rgb_to_image(const cv::Mat& rgb8) {
    const int h = rgb8.rows, w = rgb8.cols;
    Tensor img = Tensor::zeros({3, h, w});
    auto v = img.data();
    for (int y = 0; y < h; ++y) {
        const auto* row = rgb8.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) v[(static_cast<std::size_t>(c) * h + y) * w + x] = row[x][c] / 255.0;
    }
    return img;
}

cv::Mat image_to_bgr(const Tensor& img) {
    const int h = img.dim(1), w = img.dim(2);
    cv::Mat out(h, w, CV_8UC3);
    const auto v = img.data();
    for (int y = 0; y < h; ++y) {
        auto* row = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double s = std::clamp(v[(static_cast<std::size_t>(c) * h + y) * w + x], 0.0, 1.0);
                row[x][2 - c] = static_cast<unsigned char>(std::lround(s * 255.0));
            }
    }
    return out;
}

void warn(std::vector<std::string>* sink, const std::string& msg) {
    if (sink) sink->push_back(msg);
    else std::cerr << "warning: " << msg << "\n";
}

// Generic CHW permutation: out[c, y', x'] = in[c, src(y', x')].
Tensor remap_chw(const Tensor& t, AugmentOp op) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    const bool swap = op == AugmentOp::Rot90 || op == AugmentOp::Rot270;
    const int oh = swap ? w : h, ow = swap ? h : w;
    Tensor out = Tensor::zeros({c, oh, ow});
    const auto in = t.data();
    auto o = out.data();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                int sy = y, sx = x;
                switch (op) {
                    case AugmentOp::Identity: break;
                    case AugmentOp::FlipH: sx = w - 1 - x; break;
                    case AugmentOp::FlipV: sy = h - 1 - y; break;
                    case AugmentOp::Rot90: sy = x; sx = w - 1 - y; break;
                    case AugmentOp::Rot180: sy = h - 1 - y; sx = w - 1 - x; break;
                    case AugmentOp::Rot270: sy = h - 1 - x; sx = y; break;
                }
                o[(static_cast<std::size_t>(ch) * oh + y) * ow + x] = in[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
            }
    return out;
}

}  // namespace

Tensor derive_edge_label(const Tensor& g_b, int width) {
    if (!g_b.defined() || g_b.rank() != 3 || g_b.dim(0) != 1)
        throw std::invalid_argument("derive_edge_label: expected a [1,H,W] mask");
    if (width < 1) throw std::invalid_argument("derive_edge_label: width must be >= 1");
    const cv::Mat m = mask_to_mat(g_b);
    const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_RECT, {3, 3});
    cv::Mat dil, ero, edge;
    cv::dilate(m, dil, kernel, {-1, -1}, width, cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::erode(m, ero, kernel, {-1, -1}, width, cv::BORDER_CONSTANT, cv::Scalar(0));
    cv::bitwise_xor(dil, ero, edge);
    return mat_to_mask(edge);
}

std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest, std::vector<std::string>* warnings) {
    const fs::path split_dir = fs::path(manifest.root) / manifest.split;
    const fs::path img_dir = split_dir / "images";
    const fs::path mask_dir = split_dir / "masks";
    if (!fs::is_directory(manifest.root)) throw DataError("dataset root not found: " + manifest.root);

    std::vector<std::string> ids;
    if (fs::is_directory(img_dir))
        for (const auto& entry : fs::directory_iterator(img_dir))
            if (entry.is_regular_file() && entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());

    std::vector<SampleRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const fs::path ip = img_dir / (id + ".png");
        const fs::path mp = mask_dir / (id + ".png");
        if (!fs::exists(mp)) throw DataError("missing mask for image id '" + id + "': " + mp.string());
        cv::Mat bgr = cv::imread(ip.string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw DataError("unreadable image: " + ip.string());
        cv::Mat mask = cv::imread(mp.string(), cv::IMREAD_GRAYSCALE);
        if (mask.empty()) throw DataError("unreadable mask: " + mp.string());
        if (mask.size() != bgr.size()) throw DataError("mask size differs from image size for id '" + id + "'");
        if (manifest.size > 0 && (bgr.rows != manifest.size || bgr.cols != manifest.size))
            warn(warnings, "image '" + id + "' is " + std::to_string(bgr.cols) + "x" + std::to_string(bgr.rows) +
                               ", manifest expects " + std::to_string(manifest.size));
        cv::Mat rgb;
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        cv::Mat bin = mask > 127;
        SampleRecord r;
        r.id = id;
        r.image = rgb_to_image(rgb);
        r.g_b = mat_to_mask(bin);
        r.g_e = derive_edge_label(r.g_b, manifest.edge_width);
        out.push_back(std::move(r));
    }
    if (out.empty()) warn(warnings, "no images found under " + img_dir.string());
    if (manifest.expected_count >= 0 && static_cast<int>(out.size()) != manifest.expected_count)
        warn(warnings, "split '" + manifest.split + "' has " + std::to_string(out.size()) + " records, manifest expects " +
                           std::to_string(manifest.expected_count));
    return out;
}

void dump_dataset(const std::vector<SampleRecord>& records, const std::string& root, const std::string& split) {
    const fs::path img_dir = fs::path(root) / split / "images";
    const fs::path mask_dir = fs::path(root) / split / "masks";
    fs::create_directories(img_dir);
    fs::create_directories(mask_dir);
    for (const auto& r : records) {
        cv::Mat mask = mask_to_mat(r.g_b) * 255;
        if (!cv::imwrite((img_dir / (r.id + ".png")).string(), image_to_bgr(r.image)) ||
            !cv::imwrite((mask_dir / (r.id + ".png")).string(), mask))
            throw DataError("failed to write sample '" + r.id + "' under " + root);
    }
}

SampleRecord apply_augment(const SampleRecord& s, AugmentOp op) {
    SampleRecord r;
    r.id = s.id;
    r.image = remap_chw(s.image, op);
    r.g_b = remap_chw(s.g_b, op);
    r.g_e = remap_chw(s.g_e, op);
    return r;
}

AugmentOp draw_augment_op(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return static_cast<AugmentOp>(rng() % 6);
}

SampleRecord augment(const SampleRecord& s, std::uint64_t seed) { return apply_augment(s, draw_augment_op(seed)); }

void SynthConfig::validate() const {
    if (n_images < 0) throw ConfigError("synth: n_images must be >= 0");
    if (size <= 0 || size % 32 != 0) throw ConfigError("synth: size must be a positive multiple of 32");
    if (crack_min < 0 || crack_max < crack_min) throw ConfigError("synth: invalid crack count range");
    if (width_min < 1 || width_max < width_min) throw ConfigError("synth: widths must satisfy 1 <= min <= max");
    if (noise_scale < 0) throw ConfigError("synth: noise_scale must be >= 0");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"n_images", c.n_images},   {"size", c.size},         {"crack_min", c.crack_min},
         {"crack_max", c.crack_max}, {"width_min", c.width_min}, {"width_max", c.width_max},
         {"noise_scale", c.noise_scale}, {"seed", c.seed},     {"edge_width", c.edge_width}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    c = SynthConfig{};
    c.n_images = j.value("n_images", c.n_images);
    c.size = j.value("size", c.size);
    c.crack_min = j.value("crack_min", c.crack_min);
    c.crack_max = j.value("crack_max", c.crack_max);
    c.width_min = j.value("width_min", c.width_min);
    c.width_max = j.value("width_max", c.width_max);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.seed = j.value("seed", c.seed);
    c.edge_width = j.value("edge_width", c.edge_width);
}

std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };

    const int n = cfg.size;
    const int coarse = 6;
    std::vector<SampleRecord> out;
    out.reserve(cfg.n_images);
    for (int idx = 0; idx < cfg.n_images; ++idx) {
        // Background: a coarse random grid upsampled bicubically, per-image tint.
        cv::Mat grid(coarse, coarse, CV_64F);
        for (int i = 0; i < coarse * coarse; ++i) grid.at<double>(i) = gauss(rng);
        cv::Mat field;
        cv::resize(grid, field, {n, n}, 0, 0, cv::INTER_CUBIC);
        const double base = 0.5 + 0.15 * unit(rng);
        std::array<double, 3> tint{};
        for (auto& t : tint) t = 0.04 * (unit(rng) - 0.5);

        cv::Mat mask = cv::Mat::zeros(n, n, CV_8U);
        const int cracks = uniform_int(cfg.crack_min, cfg.crack_max);
        for (int c = 0; c < cracks; ++c) {
            cv::Point2d p(unit(rng) * n, unit(rng) * n);
            double angle = unit(rng) * 2.0 * M_PI;
            const int steps = uniform_int(5, 9);
            const double step_len = n / 8.0;
            const int width = uniform_int(cfg.width_min, cfg.width_max);
            for (int s = 0; s < steps; ++s) {
                angle += 0.6 * gauss(rng);
                const cv::Point2d q = p + step_len * cv::Point2d(std::cos(angle), std::sin(angle));
                cv::line(mask, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))),
                         cv::Point(static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))), cv::Scalar(1),
                         width, cv::LINE_8);
                p = q;
            }
        }

        SampleRecord r;
        char name[32];
        std::snprintf(name, sizeof name, "synth_%05d", idx);
        r.id = name;
        r.image = Tensor::zeros({3, n, n});
        auto v = r.image.data();
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double bg = base + cfg.noise_scale * field.at<double>(y, x);
                const double crack = mask.at<unsigned char>(y, x) ? 0.35 : 1.0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double pixel = (bg + tint[ch]) * crack + 0.25 * cfg.noise_scale * gauss(rng);
                    v[(static_cast<std::size_t>(ch) * n + y) * n + x] = std::lround(std::clamp(pixel, 0.0, 1.0) * 255.0) / 255.0;
                }
            }
        r.g_b = mat_to_mask(mask);
        r.g_e = derive_edge_label(r.g_b, cfg.edge_width);
        out.push_back(std::move(r));
    }
    return out;
}

Batch make_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
    const auto& first = records.at(indices[0]);
    const int h = first.height(), w = first.width();
    const int nb = static_cast<int>(indices.size());
    Batch b{Tensor::zeros({nb, 3, h, w}), Tensor::zeros({nb, 1, h, w}), Tensor::zeros({nb, 1, h, w})};
    const std::size_t img_sz = static_cast<std::size_t>(3) * h * w;
    const std::size_t map_sz = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < nb; ++i) {
        const auto& r = records.at(indices[i]);
        if (r.height() != h || r.width() != w) throw GeometryError("make_batch: records differ in size");
        std::copy(r.image.data().begin(), r.image.data().end(), b.images.data().begin() + i * img_sz);
        std::copy(r.g_b.data().begin(), r.g_b.data().end(), b.g_b.data().begin() + i * map_sz);
        std::copy(r.g_e.data().begin(), r.g_e.data().end(), b.g_e.data().begin() + i * map_sz);
    }
    return b;
}

}  // namespace bgcrack
