#include "bgcrack/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace bgcrack {

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = {{"mi_iou", r.mi_iou}, {"mi_dice", r.mi_dice}, {"params", r.params}, {"macs", r.macs}, {"n_images", r.n_images}};
}

std::vector<double> threshold_classify(std::span<const double> p, double t) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= t ? 1.0 : 0.0;
    return out;
}

ConfusionCounts confusion_counts(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("confusion_counts: size mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i], g = gt[i];
        if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
            throw std::invalid_argument("confusion_counts: inputs must be binary");
        if (p == 1.0)
            (g == 1.0 ? c.tp : c.fp)++;
        else
            (g == 1.0 ? c.fn : c.tn)++;
    }
    return c;
}

double image_iou(std::span<const double> p, std::span<const double> g, double eps) {
    const auto pred = threshold_classify(p);
    const ConfusionCounts c = confusion_counts(pred, g);
    return (static_cast<double>(c.tp) + eps) / (static_cast<double>(c.fn + c.fp + c.tp) + eps);
}

double image_dice(std::span<const double> p, std::span<const double> g, double eps) {
    if (p.size() != g.size()) throw std::invalid_argument("mi_dice: size mismatch");
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += std::abs(p[i] * g[i]);
        sp += std::abs(p[i]);
        sg += std::abs(g[i]);
    }
    return (2.0 * inter + eps) / (sp + sg + eps);
}

namespace {

template <typename F>
double image_mean(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts,
                  const char* who, F&& score) {
    if (preds.empty()) throw std::invalid_argument(std::string(who) + ": empty image list");
    if (preds.size() != gts.size()) throw std::invalid_argument(std::string(who) + ": list length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += score(preds[i], gts[i]);
    return acc / static_cast<double>(preds.size());
}

}  // namespace

double mi_iou(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts, double eps) {
    return image_mean(preds, gts, "mi_iou", [eps](const auto& p, const auto& g) { return image_iou(p, g, eps); });
}

double mi_dice(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts, double eps) {
    return image_mean(preds, gts, "mi_dice", [eps](const auto& p, const auto& g) { return image_dice(p, g, eps); });
}

std::int64_t count_params(const Module& model) {
    std::int64_t n = 0;
    for (const auto& t : model.parameters()) n += static_cast<std::int64_t>(t.numel());
    return n;
}

std::int64_t count_macs(const std::function<void()>& forward) {
    NoGradGuard no_grad;
    MacCounter counter;
    forward();
    return counter.total();
}

}  // namespace bgcrack
