#include "brainseg/viz.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace brainseg {
namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

// 5x7 glyphs, one string per row, for the caption characters we need.
const std::map<char, std::array<const char*, 7>>& glyphs() {
    static const std::map<char, std::array<const char*, 7>> table{
        {'A', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
        {'B', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
        {'C', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
        {'D', {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}},
        {'E', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
        {'G', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
        {'H', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
        {'I', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
        {'K', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
        {'L', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
        {'M', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
        {'N', {"10001", "11001", "10101", "10011", "10001", "10001", "10001"}},
        {'O', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
        {'P', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
        {'R', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
        {'T', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
        {'U', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
        {'W', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
        {'Y', {"10001", "10001", "01010", "00100", "00100", "00100", "00100"}},
    };
    return table;
}

void draw_text(RgbImage& canvas, std::size_t x, std::size_t y, const std::string& text, Rgb color) {
    for (char ch : text) {
        const auto it = glyphs().find(ch);
        if (it != glyphs().end()) {
            for (std::size_t r = 0; r < 7; ++r) {
                for (std::size_t c = 0; c < 5; ++c) {
                    const std::size_t px = x + c, py = y + r;
                    if (it->second[r][c] == '1' && px < canvas.width() && py < canvas.height()) {
                        canvas.at(px, py) = color;
                    }
                }
            }
        }
        x += 6;
    }
}

void blit(RgbImage& canvas, const RgbImage& tile, std::size_t x0, std::size_t y0) {
    for (std::size_t y = 0; y < tile.height(); ++y)
        for (std::size_t x = 0; x < tile.width(); ++x) canvas.at(x0 + x, y0 + y) = tile.at(x, y);
}

} // namespace

RgbImage gray_to_rgb(const Image<float>& image) {
    RgbImage out(image.width(), image.height());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const std::uint8_t g = to_byte(static_cast<double>(std::clamp(image[i], 0.0f, 1.0f)) * 255.0);
        out[i] = {g, g, g};
    }
    return out;
}

RgbImage render_overlay(const Image<float>& image, const LabelMask& label, const PanelSpec& spec) {
    if (!image.same_shape(label)) throw Error(ErrorCode::ShapeMismatch, "overlay image and mask differ in shape");
    RgbImage out = gray_to_rgb(image);
    const double a = spec.overlay_alpha;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint8_t cls = label[i];
        if (cls == 0) continue;
        if (cls >= kNumClasses) throw Error(ErrorCode::OutOfRange, "label outside {0,1,2}");
        const Rgb tint = spec.class_colors[cls];
        const Rgb base = out[i];
        out[i] = {to_byte((1.0 - a) * base.r + a * tint.r), to_byte((1.0 - a) * base.g + a * tint.g),
                  to_byte((1.0 - a) * base.b + a * tint.b)};
    }
    return out;
}

RgbImage render_heatmap(const Image<float>& prob_map, const PanelSpec& spec) {
    RgbImage out(prob_map.width(), prob_map.height());
    for (std::size_t i = 0; i < prob_map.size(); ++i) {
        const double v = prob_map[i];
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::OutOfRange, "heatmap values must lie in [0,1]");
        out[i] = {to_byte(v * spec.heat_hue.r), to_byte(v * spec.heat_hue.g), to_byte(v * spec.heat_hue.b)};
    }
    return out;
}

RgbImage compose_panel_image(const Image<float>& image, const LabelMask& gt, const LabelMask& pred,
                             const std::array<Image<float>, kNumClasses>& probs, const PanelSpec& spec) {
    if (!image.same_shape(gt) || !image.same_shape(pred)) {
        throw Error(ErrorCode::ShapeMismatch, "panel masks must match the input image");
    }
    for (const auto& p : probs) {
        if (!image.same_shape(p)) throw Error(ErrorCode::ShapeMismatch, "probability maps must match the input image");
    }
    const std::size_t cw = image.width();
    const std::size_t ch = image.height();
    const auto m = static_cast<std::size_t>(spec.margin);
    const auto lh = static_cast<std::size_t>(spec.label_height);
    RgbImage canvas(3 * cw + 4 * m, 2 * (ch + lh) + 3 * m, spec.frame_color);

    const std::array<RgbImage, 6> tiles{gray_to_rgb(image),         render_overlay(image, gt, spec),
                                        render_overlay(image, pred, spec), render_heatmap(probs[0], spec),
                                        render_heatmap(probs[1], spec), render_heatmap(probs[2], spec)};
    const std::array<const char*, 6> captions{"INPUT",      "GROUND TRUTH", "PREDICTION",
                                              "BACKGROUND", "GRAY MATTER",  "WHITE MATTER"};
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const std::size_t col = t % 3, row = t / 3;
        const std::size_t x0 = m + col * (cw + m);
        const std::size_t y0 = m + row * (ch + lh + m);
        draw_text(canvas, x0, y0 + (lh > 7 ? (lh - 7) / 2 : 0), captions[t], spec.text_color);
        blit(canvas, tiles[t], x0, y0 + lh);
    }
    return canvas;
}

RgbImage compose_panel(const std::filesystem::path& out_png, const Image<float>& image, const LabelMask& gt,
                       const LabelMask& pred, const std::array<Image<float>, kNumClasses>& probs,
                       const PanelSpec& spec) {
    RgbImage panel = compose_panel_image(image, gt, pred, probs, spec);
    png::write_rgb8(out_png, panel);
    return panel;
}

std::string panel_filename(const std::string& model, const std::string& plane, const std::string& subject,
                           std::size_t index) {
    return model + "_" + plane + "_" + subject + "_" + std::to_string(index) + "_panel.png";
}

} // namespace brainseg
