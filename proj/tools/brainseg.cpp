// brainseg: preprocess -> build -> train -> eval -> viz for gray/white matter
// slice segmentation.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "brainseg/pipeline.hpp"

using namespace brainseg;

int main(int argc, char** argv) {
    CLI::App app{"Brain MRI gray/white matter slice segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string plan_name = "axial";
    bool tiny = false;
    bool allow_fallback = false;
    int panels = 0;
    std::string checkpoint;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Override the config seed");
    };
    auto add_plan = [&](CLI::App* sub) {
        sub->add_option("--plan", plan_name, "Training plan")
            ->check(CLI::IsMember({"axial", "coronal", "sagittal", "unified"}));
        sub->add_flag("--tiny", tiny, "Use the small built-in model and cap dataset size");
    };

    auto* preprocess = app.add_subcommand("preprocess", "Brain extraction and tissue probability maps");
    add_common(preprocess);
    preprocess->add_flag("--allow-fallback", allow_fallback,
                         "Proceed without bet/fast using identity extraction and k-means priors");

    auto* build = app.add_subcommand("build", "Slice volumes into labelled PNG datasets and manifests");
    add_common(build);

    auto* train = app.add_subcommand("train", "Fine-tune prompt encoder and mask decoder");
    add_common(train);
    add_plan(train);

    auto* eval = app.add_subcommand("eval", "Dice/IoU on a seeded sample of the test split");
    add_common(eval);
    add_plan(eval);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <output>/<plan>/model.ckpt)");
    eval->add_option("--panels", panels, "Also write N visualization panels")->check(CLI::NonNegativeNumber);

    auto* viz = app.add_subcommand("viz", "Render input / truth / prediction / probability panels");
    add_common(viz);
    add_plan(viz);
    viz->add_option("--checkpoint", checkpoint, "Checkpoint (default <output>/<plan>/model.ckpt)");
    viz->add_option("--panels", panels, "Number of panels (default 4)")->check(CLI::NonNegativeNumber);

    CLI11_PARSE(app, argc, argv);

    PipelineConfig cfg;
    try {
        cfg = PipelineConfig::load(config_path);
    } catch (const std::exception& ex) {
        std::cerr << "[brainseg] error: " << ex.what() << '\n';
        return kExitUsage;
    }
    if (seed) {
        cfg.seed = *seed;
        cfg.train.seed = *seed;
        cfg.eval.seed = *seed;
    }

    const ExperimentPlan plan = plan_from_string(plan_name);
    EvalCommandOptions eval_opts{plan, std::nullopt, panels, tiny};
    if (!checkpoint.empty()) eval_opts.checkpoint = checkpoint;

    if (preprocess->parsed()) return cmd_preprocess(cfg, {allow_fallback});
    if (build->parsed()) return cmd_build(cfg);
    if (train->parsed()) return cmd_train(cfg, {plan, tiny});
    if (eval->parsed()) return cmd_eval(cfg, eval_opts);
    if (viz->parsed()) return cmd_viz(cfg, eval_opts);
    return kExitUsage;
}
