#include "brainseg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "brainseg/fsutil.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/tissue_prior.hpp"
#include "brainseg/viz.hpp"

namespace brainseg {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items()) {
        if (!ok.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
    }
}

std::filesystem::path resolve_path(const std::string& text, const std::filesystem::path& base) {
    const std::filesystem::path p(text);
    return p.is_absolute() ? p : (base / p).lexically_normal();
}

ToolConfig tool_from_json(const json& j, ToolConfig defaults, const std::string& where) {
    check_keys(j, {"executable_path", "extra_args", "timeout_s"}, where);
    defaults.executable_path = j.value("executable_path", defaults.executable_path);
    if (j.contains("extra_args")) defaults.extra_args = j.at("extra_args").get<std::vector<std::string>>();
    defaults.timeout_s = j.value("timeout_s", defaults.timeout_s);
    defaults.validate();
    return defaults;
}

json tool_to_json(const ToolConfig& t) {
    return {{"executable_path", t.executable_path}, {"extra_args", t.extra_args}, {"timeout_s", t.timeout_s}};
}

std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && nifti::has_nifti_extension(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void log(const std::string& msg) { std::cerr << "[brainseg] " << msg << '\n'; }

/// Runs fn(i) for i in [0, n) on up to `workers` threads; returns the first error.
std::optional<std::string> parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::optional<std::string> first_error;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (const std::exception& ex) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = ex.what();
            }
        }
    };
    const auto count = static_cast<std::size_t>(std::max(1, workers));
    if (count == 1 || n <= 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(count, n); ++t) pool.emplace_back(run);
    }
    return first_error;
}

SegModel model_for_training(const PipelineConfig& cfg, bool tiny) {
    if (tiny) return SegModel::init(cfg.model, cfg.seed);
    if (cfg.checkpoint.empty()) {
        throw Error(ErrorCode::InvalidConfig, "model.checkpoint is required unless --tiny is given");
    }
    return load_pretrained(cfg.checkpoint, cfg.seed);
}

std::string manifest_hashes_key(Plane p, Split s) {
    return std::string(to_string(p)) + "_" + std::string(to_string(s));
}

void refresh_comparison(const std::filesystem::path& output_dir) {
    std::vector<MetricsReport> reports;
    std::vector<std::filesystem::path> files;
    for (const auto& plan_dir : std::filesystem::directory_iterator(output_dir)) {
        if (!plan_dir.is_directory()) continue;
        for (const auto& f : std::filesystem::directory_iterator(plan_dir.path())) {
            const auto name = f.path().filename().string();
            if (name.rfind("report_", 0) == 0 && f.path().extension() == ".json") files.push_back(f.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) reports.push_back(MetricsReport::from_json(json::parse(read_text_file(f))));
    if (reports.empty()) return;
    const auto table = compare_models(std::move(reports));
    write_text_file(output_dir / "comparison.csv", table.to_csv());
    write_text_file(output_dir / "comparison.txt", table.to_text());
}

std::filesystem::path default_checkpoint(const PipelineConfig& cfg, ExperimentPlan plan) {
    return cfg.plan_dir(plan) / "model.ckpt";
}

std::string model_id_for(ExperimentPlan plan, Plane test_plane) {
    if (plan == ExperimentPlan::Unified) return "unified_" + std::string(to_string(test_plane));
    return std::string(to_string(plan));
}

void write_panels(const SegModel& model, const ManifestDataset& test, const std::vector<std::size_t>& indices,
                  int count, const std::string& model_id, const std::filesystem::path& dir) {
    for (int k = 0; k < count && static_cast<std::size_t>(k) < indices.size(); ++k) {
        const auto& [root, entry] = test.items()[indices[static_cast<std::size_t>(k)]];
        const TrainingSample s = test.get(indices[static_cast<std::size_t>(k)]);
        const Prediction p = predict(model, s.image, PromptSpec::full_image());
        compose_panel(dir / panel_filename(model_id, std::string(to_string(entry.plane)), entry.subject_id, entry.index),
                      s.image, s.label, p.label, p.probabilities);
    }
}

} // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    try {
        check_keys(j, {"seed", "paths", "tools", "build", "train", "model", "eval", "tiny"}, "config");
        PipelineConfig c;
        c.seed = j.value("seed", c.seed);

        const json& paths = j.at("paths");
        check_keys(paths, {"raw_dir", "work_dir", "output_dir"}, "paths");
        c.raw_dir = resolve_path(paths.at("raw_dir").get<std::string>(), base_dir);
        c.work_dir = resolve_path(paths.at("work_dir").get<std::string>(), base_dir);
        c.output_dir = resolve_path(paths.at("output_dir").get<std::string>(), base_dir);

        if (j.contains("tools")) {
            const json& t = j.at("tools");
            check_keys(t, {"bet", "fast", "fast_output", "workers"}, "tools");
            if (t.contains("bet")) c.bet = tool_from_json(t.at("bet"), c.bet, "tools.bet");
            if (t.contains("fast")) c.fast = tool_from_json(t.at("fast"), c.fast, "tools.fast");
            for (ToolConfig* tool : {&c.bet, &c.fast}) {
                // Bare names are looked up on PATH; anything with a slash is a path.
                if (tool->executable_path.find('/') != std::string::npos) {
                    tool->executable_path = resolve_path(tool->executable_path, base_dir).string();
                }
            }
            if (t.contains("fast_output")) {
                const json& fo = t.at("fast_output");
                check_keys(fo, {"pattern", "gm_class", "wm_class"}, "tools.fast_output");
                c.fast_output.pattern = fo.value("pattern", c.fast_output.pattern);
                c.fast_output.gm_class = fo.value("gm_class", c.fast_output.gm_class);
                c.fast_output.wm_class = fo.value("wm_class", c.fast_output.wm_class);
            }
            c.workers = t.value("workers", c.workers);
            if (c.workers < 1) throw Error(ErrorCode::InvalidConfig, "tools.workers must be >= 1");
        }

        if (j.contains("build")) {
            const json& b = j.at("build");
            check_keys(b, {"target_resolution", "threshold", "min_tissue_fraction", "planes", "split_fractions"},
                       "build");
            c.build.target_resolution = b.value("target_resolution", c.build.target_resolution);
            c.build.threshold = b.value("threshold", c.build.threshold);
            c.build.min_tissue_fraction = b.value("min_tissue_fraction", c.build.min_tissue_fraction);
            if (b.contains("planes")) {
                c.build.planes.clear();
                for (const auto& p : b.at("planes")) c.build.planes.push_back(plane_from_string(p.get<std::string>()));
            }
            if (b.contains("split_fractions")) {
                c.split_fractions = b.at("split_fractions").get<std::array<double, 3>>();
            }
        }
        c.build.validate();

        if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
        c.train.seed = c.seed;

        if (j.contains("model")) {
            const json& m = j.at("model");
            check_keys(m, {"checkpoint", "config"}, "model");
            const std::string ckpt = m.value("checkpoint", std::string());
            if (!ckpt.empty()) c.checkpoint = resolve_path(ckpt, base_dir);
            if (m.contains("config")) c.model = ModelConfig::from_json(m.at("config"));
        }

        if (j.contains("eval")) {
            const json& e = j.at("eval");
            check_keys(e, {"sample_n", "aggregation", "empty_policy"}, "eval");
            c.eval.sample_n = e.value("sample_n", c.eval.sample_n);
            c.eval.aggregation = aggregation_from_string(e.value("aggregation", std::string("macro_foreground")));
            c.eval.empty_policy = empty_policy_from_string(e.value("empty_policy", std::string("score_one")));
        }
        c.eval.seed = c.seed;

        if (j.contains("tiny")) {
            check_keys(j.at("tiny"), {"max_slices"}, "tiny");
            c.tiny_max_slices = j.at("tiny").value("max_slices", c.tiny_max_slices);
        }
        return c;
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::InvalidConfig, ex.what());
    } catch (const Error& ex) {
        if (ex.code() == ErrorCode::InvalidConfig) throw;
        throw Error(ErrorCode::InvalidConfig, ex.what());
    }
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + ex.what());
    }
    return from_json(j, std::filesystem::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
    json planes = json::array();
    for (Plane p : build.planes) planes.push_back(to_string(p));
    return {{"seed", seed},
            {"paths", {{"raw_dir", raw_dir.string()}, {"work_dir", work_dir.string()}, {"output_dir", output_dir.string()}}},
            {"tools",
             {{"bet", tool_to_json(bet)},
              {"fast", tool_to_json(fast)},
              {"fast_output",
               {{"pattern", fast_output.pattern}, {"gm_class", fast_output.gm_class}, {"wm_class", fast_output.wm_class}}},
              {"workers", workers}}},
            {"build",
             {{"target_resolution", build.target_resolution},
              {"threshold", build.threshold},
              {"min_tissue_fraction", build.min_tissue_fraction},
              {"planes", planes},
              {"split_fractions", split_fractions}}},
            {"train", train.to_json()},
            {"model", {{"checkpoint", checkpoint.string()}, {"config", model.to_json()}}},
            {"eval",
             {{"sample_n", eval.sample_n},
              {"aggregation", to_string(eval.aggregation)},
              {"empty_policy", to_string(eval.empty_policy)}}},
            {"tiny", {{"max_slices", tiny_max_slices}}}};
}

int cmd_preprocess(const PipelineConfig& cfg, const PreprocessOptions& opts) {
    try {
        if (!std::filesystem::is_directory(cfg.raw_dir)) {
            log("error: raw volume directory " + cfg.raw_dir.string() + " does not exist");
            return kExitPreprocess;
        }
        const auto bet_exe = resolve_tool("bet", cfg.bet);
        const auto fast_exe = resolve_tool("fast", cfg.fast);
        for (const auto& [name, exe, tool] : {std::tuple{"bet", bet_exe, &cfg.bet}, std::tuple{"fast", fast_exe, &cfg.fast}}) {
            if (exe) continue;
            const std::string shown = tool->executable_path.empty() ? name : tool->executable_path;
            if (!opts.allow_fallback) {
                log(std::string("error: required tool '") + shown +
                    "' not found (set tools." + name + ".executable_path or BRAINSEG_FSL_DIR, or pass --allow-fallback)");
                return kExitPreprocess;
            }
            log(std::string("warning: tool '") + shown + "' not found; using the built-in fallback");
        }

        const auto volumes = list_volumes(cfg.raw_dir);
        if (volumes.empty()) {
            log("error: no .nii/.nii.gz volumes in " + cfg.raw_dir.string());
            return kExitPreprocess;
        }
        std::filesystem::create_directories(cfg.brain_dir());
        std::filesystem::create_directories(cfg.maps_dir());

        std::vector<json> provenance(volumes.size());
        const auto error = parallel_for(volumes.size(), cfg.workers, [&](std::size_t i) {
            Volume3D raw = nifti::load_volume(volumes[i]);
            raw.validate();
            json rec{{"subject_id", raw.subject_id}, {"input", volumes[i].filename().string()}, {"seed", cfg.seed}};

            Volume3D brain = raw;
            if (bet_exe) {
                brain = run_brain_extraction(raw, cfg.bet);
                rec["brain_extraction"] = "bet";
                rec["bet_executable"] = bet_exe->string();
            } else {
                rec["brain_extraction"] = "identity_fallback";
            }

            std::optional<ProbabilityMaps> maps;
            if (fast_exe) {
                maps = run_tissue_segmentation(brain, cfg.fast, cfg.fast_output);
                rec["fast_executable"] = fast_exe->string();
            } else {
                maps = kmeans_tissue_prior(brain, cfg.seed);
            }
            rec["source"] = to_string(maps->source());

            nifti::write_volume(cfg.brain_dir() / (raw.subject_id + ".nii.gz"), brain);
            nifti::write_grid(cfg.maps_dir() / (raw.subject_id + "_gm.nii.gz"), maps->gm(), brain.spacing);
            nifti::write_grid(cfg.maps_dir() / (raw.subject_id + "_wm.nii.gz"), maps->wm(), brain.spacing);
            provenance[i] = std::move(rec);
        });
        if (error) {
            log("error: preprocessing failed: " + *error);
            return kExitPreprocess;
        }

        std::ostringstream lines;
        for (const auto& rec : provenance) lines << rec.dump() << '\n';
        write_text_file(cfg.provenance_path(), lines.str());
        log("preprocessed " + std::to_string(volumes.size()) + " subject(s)");
        return kExitOk;
    } catch (const std::exception& ex) {
        log(std::string("error: ") + ex.what());
        return kExitPreprocess;
    }
}

int cmd_build(const PipelineConfig& cfg) {
    try {
        const auto brains = list_volumes(cfg.brain_dir());
        std::vector<std::string> ids;
        for (const auto& b : brains) ids.push_back(nifti::subject_id_from_path(b));
        const SubjectSplit splits = split_subjects(ids, cfg.split_fractions, cfg.seed);

        // Rebuild from scratch so stale slices never leak into a new build.
        std::filesystem::remove_all(cfg.dataset_root());
        DatasetBuilder builder(cfg.dataset_root(), cfg.build, splits, cfg.seed);
        for (const auto& path : brains) {
            const Volume3D brain = nifti::load_volume(path);
            const auto gm = nifti::load_volume(cfg.maps_dir() / (brain.subject_id + "_gm.nii.gz"));
            const auto wm = nifti::load_volume(cfg.maps_dir() / (brain.subject_id + "_wm.nii.gz"));
            const ProbabilityMaps maps(gm.data, wm.data, MapSource::ExternalFast);
            const std::size_t n = builder.add_subject(brain, maps);
            log(brain.subject_id + ": " + std::to_string(n) + " informative slice(s)");
        }
        const auto manifests = builder.finish();
        for (const auto& [key, m] : manifests) {
            log(std::string(to_string(key.first)) + "/" + std::string(to_string(key.second)) + ": " +
                std::to_string(m.entries.size()) + " slice(s)");
        }
        return kExitOk;
    } catch (const std::exception& ex) {
        log(std::string("error: build failed: ") + ex.what());
        return kExitBuild;
    }
}

int cmd_train(const PipelineConfig& cfg, const TrainOptions& opts) {
    try {
        const SegModel initial = model_for_training(cfg, opts.tiny);
        const std::size_t cap = opts.tiny ? cfg.tiny_max_slices : 0;
        TrainResult result = run_experiment(opts.plan, cfg.dataset_root(), initial, cfg.train, cap);

        const auto dir = cfg.plan_dir(opts.plan);
        std::filesystem::create_directories(dir);
        json hashes = json::object();
        for (Plane p : planes_of(opts.plan)) {
            for (Split s : {Split::Train, Split::Val}) {
                hashes[manifest_hashes_key(p, s)] = sha256_file(manifest_path(cfg.dataset_root(), p, s));
            }
        }
        const json extra{{"train_config", cfg.train.to_json()},
                         {"manifest_sha256", hashes},
                         {"plan", to_string(opts.plan)},
                         {"seed", cfg.seed},
                         {"tiny", opts.tiny},
                         {"best_epoch", result.history.best_epoch}};
        result.model.save(dir / "model.ckpt", extra);
        write_text_file(dir / "history.csv", result.history.to_csv(true));
        json summary = result.history.to_json(true);
        summary["plan"] = to_string(opts.plan);
        summary["seed"] = cfg.seed;
        write_text_file(dir / "history.json", summary.dump(2) + "\n");
        log("trained plan " + std::string(to_string(opts.plan)) + ": best epoch " +
            std::to_string(result.history.best_epoch));
        return kExitOk;
    } catch (const std::exception& ex) {
        log(std::string("error: training failed: ") + ex.what());
        return kExitTrain;
    }
}

int cmd_eval(const PipelineConfig& cfg, const EvalCommandOptions& opts) {
    try {
        const auto ckpt = opts.checkpoint.value_or(default_checkpoint(cfg, opts.plan));
        const SegModel model = load_pretrained(ckpt, cfg.seed);
        const auto dir = cfg.plan_dir(opts.plan);
        std::filesystem::create_directories(dir);
        const std::size_t cap = opts.tiny ? cfg.tiny_max_slices : 0;

        std::vector<MetricsReport> reports;
        for (Plane plane : planes_of(opts.plan)) {
            const auto path = manifest_path(cfg.dataset_root(), plane, Split::Test);
            const ManifestDataset test({read_manifest(path, cfg.dataset_root())}, cap);
            const std::string model_id = model_id_for(opts.plan, plane);
            MetricsReport report = evaluate_model(model, test, cfg.eval, model_id);
            write_text_file(dir / ("report_" + model_id + ".json"), report.to_json().dump(2) + "\n");
            if (opts.panels > 0) write_panels(model, test, report.sample_indices, opts.panels, model_id, dir / "panels");
            log(model_id + ": dice " + std::to_string(report.overall_dice) + ", iou " + std::to_string(report.overall_iou));
            reports.push_back(std::move(report));
        }
        write_text_file(dir / "report.csv", compare_models(reports).to_csv());
        refresh_comparison(cfg.output_dir);
        return kExitOk;
    } catch (const std::exception& ex) {
        log(std::string("error: evaluation failed: ") + ex.what());
        return kExitEval;
    }
}

int cmd_viz(const PipelineConfig& cfg, const EvalCommandOptions& opts) {
    try {
        const auto ckpt = opts.checkpoint.value_or(default_checkpoint(cfg, opts.plan));
        const SegModel model = load_pretrained(ckpt, cfg.seed);
        const int count = opts.panels > 0 ? opts.panels : 4;
        const std::size_t cap = opts.tiny ? cfg.tiny_max_slices : 0;
        for (Plane plane : planes_of(opts.plan)) {
            const auto path = manifest_path(cfg.dataset_root(), plane, Split::Test);
            const ManifestDataset test({read_manifest(path, cfg.dataset_root())}, cap);
            if (test.size() == 0) continue;
            const auto indices = sample_indices(test.size(), static_cast<std::size_t>(count), cfg.seed);
            write_panels(model, test, indices, count, model_id_for(opts.plan, plane), cfg.plan_dir(opts.plan) / "panels");
        }
        return kExitOk;
    } catch (const std::exception& ex) {
        log(std::string("error: rendering failed: ") + ex.what());
        return kExitViz;
    }
}

} // namespace brainseg
