#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainseg/segmodel.hpp"
#include "brainseg/trainer.hpp"

namespace brainseg {

struct ClassCounts {
    std::size_t predicted = 0;
    std::size_t truth = 0;
    std::size_t intersection = 0;

    std::size_t union_size() const noexcept { return predicted + truth - intersection; }
    bool both_empty() const noexcept { return predicted == 0 && truth == 0; }
};

ClassCounts count_class(const LabelMask& pred, const LabelMask& gt, int class_id);

/// 2|A n B| / (|A| + |B|); 1.0 when both sets are empty.
double dice_from_counts(const ClassCounts& c) noexcept;
/// |A n B| / |A u B|; 1.0 when both sets are empty.
double iou_from_counts(const ClassCounts& c) noexcept;

/// Errors: ShapeMismatch, InvalidArgument (class_id outside {0,1,2}).
double dice(const LabelMask& pred, const LabelMask& gt, int class_id);
double iou(const LabelMask& pred, const LabelMask& gt, int class_id);

enum class Aggregation { MacroForeground, MacroAll, Micro };
enum class EmptyPolicy { ScoreOne, Exclude };

std::string_view to_string(Aggregation a) noexcept;
Aggregation aggregation_from_string(std::string_view text);
std::string_view to_string(EmptyPolicy p) noexcept;
EmptyPolicy empty_policy_from_string(std::string_view text);

struct ClassScore {
    double dice = 0.0;
    double iou = 0.0;
};

struct MetricsReport {
    std::array<ClassScore, kNumClasses> per_class{};
    double overall_dice = 0.0;
    double overall_iou = 0.0;
    std::size_t n_slices_evaluated = 0;
    std::uint64_t sampling_seed = 0;
    std::string model_id;
    Aggregation aggregation = Aggregation::MacroForeground;
    EmptyPolicy empty_policy = EmptyPolicy::ScoreOne;
    /// Slices on which the class was absent from both prediction and truth.
    std::array<std::size_t, kNumClasses> empty_slices{};
    std::vector<std::size_t> sample_indices;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Per-slice scores kept for the reduction step.
struct SliceScores {
    std::array<ClassCounts, kNumClasses> counts;
};

/// Deterministic reduction of per-slice counts into a report.
MetricsReport aggregate_scores(const std::vector<SliceScores>& slices, Aggregation aggregation, EmptyPolicy policy);

/// Seeded sample of `sample_n` distinct indices from [0, total), ascending.
/// Returns all indices when sample_n is 0 or >= total.
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t sample_n, std::uint64_t seed);

using Predictor = std::function<LabelMask(const TrainingSample&)>;

struct EvalOptions {
    std::size_t sample_n = 1000;
    std::uint64_t seed = 0;
    Aggregation aggregation = Aggregation::MacroForeground;
    EmptyPolicy empty_policy = EmptyPolicy::ScoreOne;
};

/// Errors: EmptyManifest.
MetricsReport evaluate(const Predictor& predictor, const SliceDataset& test_set, const EvalOptions& opts,
                       const std::string& model_id);

/// Uses the full-image box prompt.
MetricsReport evaluate_model(const SegModel& model, const SliceDataset& test_set, const EvalOptions& opts,
                             const std::string& model_id);

struct ComparisonTable {
    std::vector<MetricsReport> rows; // descending overall Dice

    /// `model,overall_dice,overall_iou`
    std::string to_csv() const;
    std::string to_text() const;
};

ComparisonTable compare_models(std::vector<MetricsReport> reports);

} // namespace brainseg
