#include <nlohmann/json.hpp>

#include "brainseg/external_tools.hpp"
#include "brainseg/fsutil.hpp"
#include "brainseg/pipeline.hpp"
#include "phantoms.hpp"
#include "test_util.hpp"

using namespace brainseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ProcessResult cli(const std::vector<std::string>& args) {
    std::vector<std::string> argv{BRAINSEG_CLI_PATH};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_process(argv, 600.0);
}

std::size_t count_lines(const fs::path& p) {
    const std::string text = read_text_file(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

} // namespace

TEST_CASE("config parsing is strict and resolves relative paths") {
    TempDir dir;
    const json good{{"seed", 3}, {"paths", {{"raw_dir", "r"}, {"work_dir", "w"}, {"output_dir", "/abs/o"}}}};
    const PipelineConfig c = PipelineConfig::from_json(good, dir.path());
    CHECK(c.raw_dir == dir.path() / "r");
    CHECK(c.output_dir == "/abs/o");
    CHECK(c.train.seed == 3);
    CHECK(c.eval.seed == 3);
    CHECK(c.dataset_root() == dir.path() / "w" / "dataset");

    json unknown = good;
    unknown["trian"] = json::object();
    CHECK_ERROR_CODE(PipelineConfig::from_json(unknown, dir.path()), ErrorCode::InvalidConfig);
    json bad_eval = good;
    bad_eval["eval"] = {{"aggregation", "median"}};
    CHECK_ERROR_CODE(PipelineConfig::from_json(bad_eval, dir.path()), ErrorCode::InvalidConfig);
    CHECK_ERROR_CODE(PipelineConfig::from_json(json{{"seed", 1}}, dir.path()), ErrorCode::InvalidConfig);

    const PipelineConfig again = PipelineConfig::from_json(c.to_json(), dir.path());
    CHECK(again.to_json() == c.to_json());
}

TEST_CASE("missing tool without fallback exits 2 and names the tool") {
    TempDir dir;
    const fs::path cfg_path = testing::write_pipeline_fixture(dir.path(), 1, FAKE_FSL_PATH);
    json cfg = json::parse(read_text_file(cfg_path));
    cfg["tools"]["bet"]["executable_path"] = "fsl/bin/no_such_bet";
    write_text_file(cfg_path, cfg.dump());
    const ProcessResult r = cli({"preprocess", "--config", cfg_path.string()});
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("no_such_bet") != std::string::npos);

    const ProcessResult fb = cli({"preprocess", "--config", cfg_path.string(), "--allow-fallback"});
    CHECK(fb.exit_code == 0);
    const json prov = json::parse(read_text_file(dir.path() / "work" / "provenance.jsonl"));
    CHECK(prov.at("brain_extraction") == "identity_fallback");
    CHECK(prov.at("source") == "external_fast");
}

TEST_CASE("usage errors exit 1") {
    CHECK(cli({}).exit_code != 0);
    CHECK(cli({"train", "--config", "/nonexistent.json"}).exit_code != 0);
}

TEST_CASE("end-to-end tiny pipeline") {
    TempDir dir;
    const fs::path cfg_path = testing::write_pipeline_fixture(dir.path(), 4, FAKE_FSL_PATH);
    const std::string c = cfg_path.string();

    REQUIRE(cli({"preprocess", "--config", c}).exit_code == 0);
    CHECK(fs::exists(dir.path() / "work" / "brain" / "IXI100-Guys-1000-T1.nii.gz"));
    CHECK(fs::exists(dir.path() / "work" / "maps" / "IXI100-Guys-1000-T1_gm.nii.gz"));
    CHECK(fs::exists(dir.path() / "work" / "maps" / "IXI100-Guys-1000-T1_wm.nii.gz"));
    CHECK(count_lines(dir.path() / "work" / "provenance.jsonl") == 4);

    REQUIRE(cli({"build", "--config", c}).exit_code == 0);
    const fs::path ds = dir.path() / "work" / "dataset";
    for (const char* plane : {"axial", "coronal", "sagittal"})
        for (const char* split : {"train", "val", "test"}) CHECK(fs::exists(ds / "manifests" / (std::string(plane) + "_" + split + ".jsonl")));
    CHECK(count_lines(ds / "manifests" / "axial_train.jsonl") > 0);

    REQUIRE(cli({"train", "--config", c, "--tiny"}).exit_code == 0);
    const fs::path out = dir.path() / "out" / "axial";
    CHECK(fs::exists(out / "model.ckpt"));
    CHECK(fs::exists(out / "history.csv"));
    const json side = read_checkpoint_sidecar(out / "model.ckpt");
    CHECK(side.at("tiny") == true);
    CHECK(side.contains("manifest_sha256"));

    REQUIRE(cli({"eval", "--config", c, "--tiny", "--panels", "1"}).exit_code == 0);
    const json rep = json::parse(read_text_file(out / "report_axial.json"));
    CHECK(rep.at("model_id") == "axial");
    CHECK(rep.at("sampling_seed") == 7);
    CHECK(fs::exists(dir.path() / "out" / "comparison.csv"));

    REQUIRE(cli({"viz", "--config", c, "--tiny", "--panels", "2"}).exit_code == 0);

    CHECK(cli({"eval", "--config", c, "--plan", "coronal"}).exit_code == 5);
    CHECK(cli({"train", "--config", c}).exit_code == 4); // no checkpoint configured without --tiny
}
