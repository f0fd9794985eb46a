#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "brainseg/png_io.hpp"
#include "brainseg/segmodel.hpp"

namespace brainseg {

/// 2x3 figure layout: input / ground truth / prediction on top, background /
/// gray matter / white matter probability heatmaps below.
struct PanelSpec {
    std::array<Rgb, kNumClasses> class_colors{Rgb{0, 0, 0}, Rgb{255, 0, 0}, Rgb{0, 255, 0}};
    Rgb heat_hue{255, 255, 255};
    double overlay_alpha = 0.5;
    int margin = 8;
    int label_height = 11;
    Rgb frame_color{0, 0, 0};
    Rgb text_color{255, 255, 255};
};

RgbImage gray_to_rgb(const Image<float>& image);

/// Tissue pixels are blended with their class colour; background pixels keep
/// the grayscale value. Throws ShapeMismatch.
RgbImage render_overlay(const Image<float>& image, const LabelMask& label, const PanelSpec& spec = {});

/// Monotone single-hue ramp, 0 -> black, 1 -> the hue. Throws OutOfRange.
RgbImage render_heatmap(const Image<float>& prob_map, const PanelSpec& spec = {});

RgbImage compose_panel_image(const Image<float>& image, const LabelMask& gt, const LabelMask& pred,
                             const std::array<Image<float>, kNumClasses>& probs, const PanelSpec& spec = {});

/// Renders the panel and writes it as an 8-bit RGB PNG.
RgbImage compose_panel(const std::filesystem::path& out_png, const Image<float>& image, const LabelMask& gt,
                       const LabelMask& pred, const std::array<Image<float>, kNumClasses>& probs,
                       const PanelSpec& spec = {});

std::string panel_filename(const std::string& model, const std::string& plane, const std::string& subject,
                           std::size_t index);

} // namespace brainseg
