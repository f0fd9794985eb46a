#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainseg/grid.hpp"

namespace brainseg {

inline constexpr int kNumClasses = 3;
inline constexpr int kSliceSize = 256;

/// Architecture hyper-parameters. The encoder is a patch-embedding stem
/// followed by residual MLP blocks; the decoder fuses the prompt, upsamples
/// with a stride-`patch_size` transposed convolution and ends in a 1x1 mask
/// head plus the added 3-class projection.
struct ModelConfig {
    std::string variant = "tiny";
    int native_resolution = 256;
    int patch_size = 4;
    int embed_dim = 32;
    int encoder_depth = 1;
    int decoder_dim = 16;

    static ModelConfig tiny();

    int grid_size() const noexcept { return native_resolution / patch_size; }
    int mask_resolution() const noexcept { return grid_size() * patch_size; }
    std::size_t encoder_parameter_count() const noexcept;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Box prompt in normalised [0,1] image coordinates.
struct PromptSpec {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    static PromptSpec full_image() { return {}; }
    /// Bounding box of pixels labelled 1 or 2; the full image when none are.
    static PromptSpec tissue_box(const LabelMask& label);
    void validate() const;
};

/// Encoder output: channels x (h*w), one column per grid cell.
struct EmbeddingGrid {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::MatrixXf features;
};

/// 3 x size x size class scores, channel-major then row-major.
struct LogitMap {
    int size = kSliceSize;
    std::vector<double> logits;

    LogitMap() = default;
    explicit LogitMap(int size_) : size(size_), logits(static_cast<std::size_t>(kNumClasses) * size_ * size_, 0.0) {}

    std::size_t pixels() const noexcept { return static_cast<std::size_t>(size) * size; }
    double& at(int c, std::size_t pixel) noexcept { return logits[c * pixels() + pixel]; }
    double at(int c, std::size_t pixel) const noexcept { return logits[c * pixels() + pixel]; }
};

struct Prediction {
    LabelMask label;
    std::array<Image<float>, kNumClasses> probabilities;
};

/// Softmax over the 3 channels at every pixel.
std::array<Image<float>, kNumClasses> softmax_probabilities(const LogitMap& logits);
/// Per-pixel argmax; ties go to the lowest class index.
LabelMask argmax_labels(const LogitMap& logits);

struct Parameter {
    std::string name;
    Eigen::MatrixXf value;
    bool trainable = true;
};

/// Per-parameter gradient buffers aligned with SegModel::parameters().
/// Frozen parameters get an empty matrix.
using Gradients = std::vector<Eigen::MatrixXf>;

/// Activations kept from decode() for the backward pass.
struct DecoderCache {
    Eigen::VectorXf box_features;
    Eigen::MatrixXf fused_in;   // C x G^2
    Eigen::MatrixXf fuse_pre;   // C x G^2
    Eigen::MatrixXf fuse_act;   // C x G^2
    Eigen::MatrixXf up_pre;     // D x M^2
    Eigen::MatrixXf up_act;     // D x M^2
    Eigen::MatrixXf head_pre;   // D x M^2
    Eigen::MatrixXf head_act;   // D x M^2
};

class SegModel;

/// Loads a checkpoint written by SegModel::save. The class head may be absent
/// (initialised with `head_seed`); every other tensor is required.
/// Errors: IncompatibleCheckpoint, MissingKeys, MissingFile.
SegModel load_pretrained(const std::filesystem::path& checkpoint, std::uint64_t head_seed = 0);

class SegModel {
  public:
    /// Fresh model with deterministic random weights. The class head gets
    /// small zero-mean weights and zero bias.
    static SegModel init(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    const Parameter& parameter(const std::string& name) const;
    Parameter& parameter(const std::string& name);

    /// Frozen-encoder pass: replicate to 3 channels, resize to the native
    /// resolution, patch-embed, run the residual blocks.
    EmbeddingGrid encode(const Image<float>& image) const;

    LogitMap decode(const EmbeddingGrid& embedding, const PromptSpec& prompt, DecoderCache* cache = nullptr) const;

    /// encode + decode. Throws NonFiniteActivation on NaN/Inf logits.
    LogitMap forward(const Image<float>& image, const PromptSpec& prompt) const;

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
    void backward(const DecoderCache& cache, const LogitMap& logit_grad, Gradients& grads) const;

    Gradients zero_gradients() const;

    std::size_t parameter_count(bool trainable) const;

    /// Binary weights plus `<path>.json` sidecar. `extra` is merged into the
    /// sidecar (training config, manifest hashes).
    void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;

  private:
    friend SegModel load_pretrained(const std::filesystem::path&, std::uint64_t);
    explicit SegModel(ModelConfig config);
    std::size_t index_of(const std::string& name) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
};

inline SegModel init_tiny(std::uint64_t seed) { return SegModel::init(ModelConfig::tiny(), seed); }

nlohmann::json read_checkpoint_sidecar(const std::filesystem::path& checkpoint);

Prediction predict(const SegModel& model, const Image<float>& image, const PromptSpec& prompt);

/// Same as predict but from precomputed logits.
Prediction predict_from_logits(const LogitMap& logits);

} // namespace brainseg
