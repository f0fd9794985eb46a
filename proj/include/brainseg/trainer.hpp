#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainseg/dataset.hpp"
#include "brainseg/segmodel.hpp"

namespace brainseg {

enum class PromptMode { FullImage, TissueBox };

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 2;
    int max_epochs = 10;
    std::array<double, 3> class_weights{0.2, 1.0, 1.0};
    double weight_decay = 0.01;
    int early_stop_patience = 3;
    std::uint64_t seed = 0;
    /// Optimizer-step cap across all epochs; 0 means unlimited.
    int max_steps = 0;
    PromptMode prompt_mode = PromptMode::FullImage;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Frozen-encoder embeddings are cached when they fit in this budget.
    std::size_t embedding_cache_mb = 1024;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingSample {
    Image<float> image;
    LabelMask label;
};

/// Random-access slice source.
class SliceDataset {
  public:
    virtual ~SliceDataset() = default;
    virtual std::size_t size() const = 0;
    virtual TrainingSample get(std::size_t i) const = 0;
};

class InMemoryDataset final : public SliceDataset {
  public:
    explicit InMemoryDataset(std::vector<TrainingSample> samples);
    std::size_t size() const override { return samples_.size(); }
    TrainingSample get(std::size_t i) const override { return samples_.at(i); }

  private:
    std::vector<TrainingSample> samples_;
};

/// Reads PNG pairs on demand from one or more manifests, in manifest order.
class ManifestDataset final : public SliceDataset {
  public:
    explicit ManifestDataset(std::vector<DatasetManifest> manifests, std::size_t max_slices = 0);
    std::size_t size() const override { return items_.size(); }
    TrainingSample get(std::size_t i) const override;
    const std::vector<std::pair<std::filesystem::path, ManifestEntry>>& items() const noexcept { return items_; }

  private:
    std::vector<std::pair<std::filesystem::path, ManifestEntry>> items_;
};

TrainingSample load_sample(const std::filesystem::path& image_png, const std::filesystem::path& label_png);

struct LossResult {
    double loss = 0.0;
    std::vector<LogitMap> grad; // d(loss)/d(logits), empty unless requested
};

/// sum_p w[y_p] * -log softmax(z_p)[y_p] / sum_p w[y_p] over every pixel of
/// the batch. Errors: ShapeMismatch, NonFiniteLoss, InvalidArgument.
LossResult weighted_cross_entropy(std::span<const LogitMap> logits, std::span<const LabelMask> labels,
                                  const std::array<double, 3>& weights, bool with_grad = true);

/// Decoupled weight decay Adam over the trainable parameters only.
class AdamW {
  public:
    AdamW(const SegModel& model, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double epsilon = 1e-8);
    void step(SegModel& model, const Gradients& grads);
    long steps() const noexcept { return steps_; }

  private:
    double lr_, weight_decay_, beta1_, beta2_, epsilon_;
    long steps_ = 0;
    std::vector<Eigen::MatrixXf> m_, v_;
};

/// Tracks the best validation loss; signals a stop after `patience`
/// consecutive epochs without strict improvement.
class EarlyStopping {
  public:
    explicit EarlyStopping(int patience) : patience_(patience) {}
    /// Returns true when training should stop after this epoch.
    bool update(int epoch, double val_loss);
    bool improved_last() const noexcept { return improved_last_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_loss_; }

  private:
    int patience_;
    int best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
    bool improved_last_ = false;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_time_s = 0.0;
    long steps = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    bool stopped_early = false;

    /// `epoch,train_loss,val_loss,wall_time_s`
    std::string to_csv(bool include_wall_time = true) const;
    nlohmann::json to_json(bool include_wall_time = true) const;
};

struct TrainResult {
    SegModel model; // parameters of the best-validation epoch
    TrainHistory history;
};

PromptSpec prompt_for(const TrainingSample& sample, PromptMode mode);

TrainResult train(const SegModel& initial, const SliceDataset& train_set, const SliceDataset& val_set,
                  const TrainConfig& cfg);

enum class ExperimentPlan { Axial, Coronal, Sagittal, Unified };

std::string_view to_string(ExperimentPlan plan) noexcept;
ExperimentPlan plan_from_string(std::string_view text);
std::vector<Plane> planes_of(ExperimentPlan plan);

/// Manifests of one split for every plane in the plan, concatenated in
/// axial, coronal, sagittal order. Throws MissingManifest.
std::vector<DatasetManifest> plan_manifests(const std::filesystem::path& dataset_root, ExperimentPlan plan,
                                            Split split);

TrainResult run_experiment(ExperimentPlan plan, const std::filesystem::path& dataset_root, const SegModel& initial,
                           const TrainConfig& cfg, std::size_t max_slices = 0);

} // namespace brainseg
