#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "bgcrack/nn.hpp"
#include "bgcrack/tensor.hpp"

namespace bgcrack {

struct ConfusionCounts {
    std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
};

struct MetricsReport {
    double mi_iou = 0.0;
    double mi_dice = 0.0;
    std::int64_t n_images = 0;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

constexpr double kMetricEps = 1e-6;

// 1 where p >= t, else 0.
std::vector<double> threshold_classify(std::span<const double> p, double t = 0.5);

ConfusionCounts confusion_counts(std::span<const double> pred, std::span<const double> gt);

// Image-wise means. Each entry of preds/gts is one image's probability map
// (or binary ground truth), flattened.
double mi_iou(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts,
              double eps = kMetricEps);
double mi_dice(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts,
               double eps = kMetricEps);

// Per-image scores used by the means above.
double image_iou(std::span<const double> p, std::span<const double> g, double eps = kMetricEps);
double image_dice(std::span<const double> p, std::span<const double> g, double eps = kMetricEps);

std::int64_t count_params(const Module& model);
// MACs of one call to `forward` (convolutions, linear layers, attention
// matmuls). Elementwise ops, normalizations, activations and FFTs are excluded.
std::int64_t count_macs(const std::function<void()>& forward);

}  // namespace bgcrack
