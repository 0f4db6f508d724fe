#pragma once

#include <string>

#include <json.hpp>

#include "bgcrack/model.hpp"

namespace bgcrack {

struct Prediction {
    Tensor p_b;  // [1,H,W]
    Tensor p_e;  // [1,H,W]; zeros when the edge stream is ablated
};

// Runs the model on one [3,H,W] image of any size: reflect-pads bottom/right
// to multiples of 32, then crops the probabilities back to H x W.
Prediction predict_image(BgCrack& model, const Tensor& image);

// Alpha-blends body pixels with red, then edge pixels with green, both at
// 50%. image is [3,H,W]; masks are binary [1,H,W]. Returns [3,H,W].
Tensor render_overlay(const Tensor& image, const Tensor& body_mask, const Tensor& edge_mask);

Tensor read_image(const std::string& path);                // RGB in [0,1], [3,H,W]
void write_image(const std::string& path, const Tensor& rgb);  // [3,H,W]
void write_mask(const std::string& path, const Tensor& mask);  // binary [1,H,W] -> 0/255

struct PredictOutputs {
    std::string mask, edge, overlay;
};
// Writes <stem>_mask.png, <stem>_edge.png and <stem>_overlay.png into out_dir.
PredictOutputs predict_to_files(BgCrack& model, const std::string& image_path, const std::string& out_dir);

enum class CamTarget { Body, Edge };

// Grad-CAM over a named activation recorded by BgCrack::forward. Channel
// weights are the spatial mean of d(sum of target logits)/d(activation); the
// map is the rectified weighted channel sum, min-max normalized and resized
// bilinearly to the input size. Returns [H,W] in [0,1] as a [1,1,H,W] tensor.
Tensor gradcam(BgCrack& model, const Tensor& image, CamTarget target, const std::string& layer);
// Same as gradcam before normalization and resizing.
Tensor gradcam_raw(BgCrack& model, const Tensor& image, CamTarget target, const std::string& layer);
std::vector<std::string> gradcam_layers(BgCrack& model, int height = 64, int width = 64);
// Colormapped heatmap blended over the image.
void write_heatmap(const std::string& path, const Tensor& image, const Tensor& heat);

// Parameter count and MACs of one forward pass at height x width.
nlohmann::json profile(const ModelConfig& cfg, int height = 512, int width = 512);

}  // namespace bgcrack
