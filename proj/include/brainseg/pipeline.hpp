#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "brainseg/dataset.hpp"
#include "brainseg/evaluator.hpp"
#include "brainseg/external_tools.hpp"
#include "brainseg/segmodel.hpp"
#include "brainseg/trainer.hpp"

namespace brainseg {

/// Exit codes of the `brainseg` subcommands.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitPreprocess = 2,
    kExitBuild = 3,
    kExitTrain = 4,
    kExitEval = 5,
    kExitViz = 6,
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path raw_dir;
    std::filesystem::path work_dir;
    std::filesystem::path output_dir;

    ToolConfig bet{"", {}, 600.0};
    ToolConfig fast{"", {"-t", "1", "-n", "3"}, 1800.0};
    FastOutputSpec fast_output;
    int workers = 1;

    BuildConfig build;
    std::array<double, 3> split_fractions{0.70, 0.15, 0.15};

    TrainConfig train;
    std::filesystem::path checkpoint; // pretrained weights for non-tiny runs
    ModelConfig model = ModelConfig::tiny();
    std::size_t tiny_max_slices = 64;

    EvalOptions eval;

    /// Parses and validates; relative paths resolve against `base_dir`.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    std::filesystem::path brain_dir() const { return work_dir / "brain"; }
    std::filesystem::path maps_dir() const { return work_dir / "maps"; }
    std::filesystem::path dataset_root() const { return work_dir / "dataset"; }
    std::filesystem::path provenance_path() const { return work_dir / "provenance.jsonl"; }
    std::filesystem::path plan_dir(ExperimentPlan plan) const { return output_dir / std::string(to_string(plan)); }
};

struct PreprocessOptions {
    bool allow_fallback = false;
};

struct TrainOptions {
    ExperimentPlan plan = ExperimentPlan::Axial;
    bool tiny = false;
};

struct EvalCommandOptions {
    ExperimentPlan plan = ExperimentPlan::Axial;
    std::optional<std::filesystem::path> checkpoint;
    int panels = 0;
    bool tiny = false;
};

/// Each returns one of the ExitCode values and reports problems on stderr.
int cmd_preprocess(const PipelineConfig& cfg, const PreprocessOptions& opts);
int cmd_build(const PipelineConfig& cfg);
int cmd_train(const PipelineConfig& cfg, const TrainOptions& opts);
int cmd_eval(const PipelineConfig& cfg, const EvalCommandOptions& opts);
int cmd_viz(const PipelineConfig& cfg, const EvalCommandOptions& opts);

} // namespace brainseg
