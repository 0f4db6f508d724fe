#include "bgcrack/inference.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bgcrack/errors.hpp"
#include "bgcrack/metrics.hpp"

namespace bgcrack {

namespace fs = std::filesystem;

namespace {

cv::Mat chw_to_mat(const Tensor& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    std::vector<cv::Mat> planes;
    for (int ch = 0; ch < c; ++ch)
        planes.emplace_back(h, w, CV_64F, const_cast<double*>(t.data().data()) + static_cast<std::size_t>(ch) * h * w);
    cv::Mat out;
    cv::merge(planes, out);
    return out;
}

Tensor mat_to_chw(const cv::Mat& m) {
    std::vector<cv::Mat> planes;
    cv::split(m, planes);
    Tensor t = Tensor::zeros({static_cast<int>(planes.size()), m.rows, m.cols});
    auto v = t.data();
    std::size_t o = 0;
    for (const auto& p : planes)
        for (int y = 0; y < m.rows; ++y)
            for (int x = 0; x < m.cols; ++x) v[o++] = p.at<double>(y, x);
    return t;
}

Tensor crop_plane(const Tensor& x, int h, int w) {
    // x [1,1,Hp,Wp] -> [1,h,w]
    const int wp = x.dim(3);
    Tensor out = Tensor::zeros({1, h, w});
    auto o = out.data();
    const auto in = x.data();
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) o[y * w + xx] = in[static_cast<std::size_t>(y) * wp + xx];
    return out;
}

Tensor threshold_mask(const Tensor& p) {
    Tensor m = Tensor::zeros(p.shape());
    const auto bin = threshold_classify(p.data());
    std::copy(bin.begin(), bin.end(), m.data().begin());
    return m;
}

}  // namespace

Tensor read_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("unreadable image: " + path);
    cv::Mat rgb, f;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(f, CV_64FC3, 1.0 / 255.0);
    return mat_to_chw(f);
}

void write_image(const std::string& path, const Tensor& rgb) {
    cv::Mat f = chw_to_mat(rgb), u8, bgr;
    f.convertTo(u8, CV_8UC3, 255.0);
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw DataError("cannot write image: " + path);
}

void write_mask(const std::string& path, const Tensor& mask) {
    cv::Mat u8;
    chw_to_mat(mask).convertTo(u8, CV_8U, 255.0);
    if (!cv::imwrite(path, u8)) throw DataError("cannot write mask: " + path);
}

Prediction predict_image(BgCrack& model, const Tensor& image) {
    if (!image.defined() || image.rank() != 3 || image.dim(0) != 3)
        throw GeometryError("predict: expected a [3,H,W] image, got " + (image.defined() ? shape_str(image.shape()) : "nothing"));
    const int h = image.dim(1), w = image.dim(2);
    const int hp = (h + 31) / 32 * 32, wp = (w + 31) / 32 * 32;
    Tensor padded = image;
    if (hp != h || wp != w) {
        cv::Mat src = chw_to_mat(image), dst;
        cv::copyMakeBorder(src, dst, 0, hp - h, 0, wp - w, cv::BORDER_REFLECT_101);
        padded = mat_to_chw(dst);
    }
    model.set_training(false);
    NoGradGuard no_grad;
    const PredictionPair out = model.forward(reshape(padded, {1, 3, hp, wp}));
    Prediction p;
    p.p_b = crop_plane(out.p_b, h, w);
    p.p_e = out.p_e.defined() ? crop_plane(out.p_e, h, w) : Tensor::zeros({1, h, w});
    return p;
}

Tensor render_overlay(const Tensor& image, const Tensor& body_mask, const Tensor& edge_mask) {
    const int h = image.dim(1), w = image.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor out = image.clone();
    auto o = out.data();
    const auto b = body_mask.data();
    const auto e = edge_mask.data();
    constexpr double alpha = 0.5;
    auto blend = [&](std::size_t i, std::array<double, 3> color) {
        for (int c = 0; c < 3; ++c) o[c * hw + i] = (1.0 - alpha) * o[c * hw + i] + alpha * color[c];
    };
    for (std::size_t i = 0; i < hw; ++i) {
        if (b[i] > 0.5) blend(i, {1.0, 0.0, 0.0});
        if (e[i] > 0.5) blend(i, {0.0, 1.0, 0.0});
    }
    return out;
}

PredictOutputs predict_to_files(BgCrack& model, const std::string& image_path, const std::string& out_dir) {
    const Tensor image = read_image(image_path);
    const Prediction p = predict_image(model, image);
    const Tensor body = threshold_mask(p.p_b);
    const Tensor edge = threshold_mask(p.p_e);
    fs::create_directories(out_dir);
    const std::string stem = (fs::path(out_dir) / fs::path(image_path).stem()).string();
    PredictOutputs files{stem + "_mask.png", stem + "_edge.png", stem + "_overlay.png"};
    write_mask(files.mask, body);
    write_mask(files.edge, edge);
    write_image(files.overlay, render_overlay(image, body, edge));
    return files;
}

std::vector<std::string> gradcam_layers(BgCrack& model, int height, int width) {
    model.set_training(false);
    NoGradGuard no_grad;
    ActivationTap tap;
    model.forward(Tensor::zeros({1, 3, height, width}), &tap);
    std::vector<std::string> names;
    for (const auto& [name, t] : tap) names.push_back(name);
    return names;
}

Tensor gradcam_raw(BgCrack& model, const Tensor& image, CamTarget target, const std::string& layer) {
    if (image.rank() != 3 || image.dim(0) != 3) throw GeometryError("gradcam: expected a [3,H,W] image");
    model.set_training(false);
    model.zero_grad();
    ActivationTap tap;
    const PredictionPair out = model.forward(reshape(image.detach(), {1, 3, image.dim(1), image.dim(2)}), &tap);
    auto it = tap.find(layer);
    if (it == tap.end()) {
        std::string known;
        for (const auto& [name, t] : tap) known += (known.empty() ? "" : ", ") + name;
        throw ConfigError("gradcam: unknown layer '" + layer + "'; available: " + known);
    }
    const Tensor& logits = target == CamTarget::Body ? out.z_b : out.z_e;
    if (!logits.defined()) throw ConfigError("gradcam: the edge target needs the edge stream");
    Tensor act = it->second;
    const int c = act.dim(1), h = act.dim(2), w = act.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    sum(logits).backward();
    const auto a = act.data();
    std::vector<double> grad(act.numel(), 0.0);
    if (act.has_grad()) std::copy(act.grad().begin(), act.grad().end(), grad.begin());

    Tensor cam = Tensor::zeros({1, 1, h, w});
    auto m = cam.data();
    for (int ch = 0; ch < c; ++ch) {
        double weight = 0.0;
        for (std::size_t i = 0; i < hw; ++i) weight += grad[ch * hw + i];
        weight /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) m[i] += weight * a[ch * hw + i];
    }
    for (double& v : m) v = std::max(v, 0.0);
    model.zero_grad();
    return cam;
}

Tensor gradcam(BgCrack& model, const Tensor& image, CamTarget target, const std::string& layer) {
    Tensor cam = gradcam_raw(model, image, target, layer);
    auto m = cam.data();
    const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : m) v = range > 0.0 ? (v - min) / range : 0.0;
    Tensor up = resize_bilinear(cam, image.dim(1), image.dim(2));
    for (double& v : up.data()) v = std::clamp(v, 0.0, 1.0);
    return up;
}

void write_heatmap(const std::string& path, const Tensor& image, const Tensor& heat) {
    const int h = image.dim(1), w = image.dim(2);
    cv::Mat heat8(h, w, CV_8U);
    const auto hv = heat.data();
    for (int i = 0; i < h * w; ++i) heat8.data[i] = static_cast<unsigned char>(std::lround(hv[i] * 255.0));
    cv::Mat color, img8, bgr, out;
    cv::applyColorMap(heat8, color, cv::COLORMAP_JET);
    chw_to_mat(image).convertTo(img8, CV_8UC3, 255.0);
    cv::cvtColor(img8, bgr, cv::COLOR_RGB2BGR);
    cv::addWeighted(bgr, 0.5, color, 0.5, 0.0, out);
    if (!cv::imwrite(path, out)) throw DataError("cannot write heatmap: " + path);
}

nlohmann::json profile(const ModelConfig& cfg, int height, int width) {
    BgCrack model(cfg);
    model.set_training(false);
    const Tensor probe = Tensor::zeros({1, 3, height, width});
    const std::int64_t macs = count_macs([&] { model.forward(probe); });
    return {{"params", count_params(model)},
            {"macs", macs},
            {"height", height},
            {"width", width},
            {"mac_rules",
             "conv k*k*Cin*Cout*Hout*Wout/groups; transposed conv Cin*Cout*4*Hin*Win; linear in*out per row; "
             "attention 2*T*T*d per sequence; elementwise ops, norms, activations and FFTs excluded"}};
}

}  // namespace bgcrack
