#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <zlib.h>

#include "brainseg/external_tools.hpp"
#include "brainseg/fsutil.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/tissue_prior.hpp"
#include "phantoms.hpp"
#include "test_util.hpp"

using namespace brainseg;
namespace fs = std::filesystem;

namespace {

// Independent header reader: raw bytes at the documented NIfTI-1 offsets.
std::array<std::int16_t, 8> raw_dims(const fs::path& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    unsigned char buf[348];
    REQUIRE(gzread(f, buf, sizeof buf) == 348);
    gzclose(f);
    std::array<std::int16_t, 8> dims{};
    std::memcpy(dims.data(), buf + 40, sizeof dims);
    return dims;
}

Volume3D random_volume(const Shape3& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Grid3<float> g(shape);
    for (float& v : g.values()) v = static_cast<float>(rng() % 1000) / 7.0f;
    return {std::move(g), {1.0, 1.5, 2.0}, "rand"};
}

} // namespace

TEST_CASE("nifti round trip of an 8x8x8 volume is exact") {
    TempDir dir;
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        const Volume3D vol = random_volume({8, 8, 8}, 3);
        const fs::path p = dir.path() / name;
        nifti::write_volume(p, vol);
        const Volume3D back = nifti::load_volume(p);
        CHECK(back.data == vol.data);
        CHECK(back.spacing == vol.spacing);
        CHECK(back.subject_id == "v");
    }
}

TEST_CASE("nifti shape matches an independent header parse") {
    TempDir dir;
    const fs::path p = dir.path() / "IXI002-Guys-0828-T1.nii.gz";
    nifti::write_volume(p, random_volume({5, 7, 3}, 1));
    const auto dims = raw_dims(p);
    const Volume3D vol = nifti::load_volume(p);
    CHECK(dims[0] == 3);
    CHECK(vol.shape() == Shape3{static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2]),
                                static_cast<std::size_t>(dims[3])});
    CHECK(vol.subject_id == "IXI002-Guys-0828-T1");
}

TEST_CASE("nifti errors") {
    TempDir dir;
    CHECK_ERROR_CODE(nifti::load_volume(dir.path() / "absent.nii"), ErrorCode::MissingFile);

    Volume3D vol = random_volume({4, 4, 4}, 2);
    vol.data.at(1, 2, 3) = std::numeric_limits<float>::quiet_NaN();
    const fs::path nan_path = dir.path() / "nan.nii";
    nifti::write_grid(nan_path, vol.data, vol.spacing);
    CHECK_ERROR_CODE(nifti::load_volume(nan_path), ErrorCode::NonFiniteData);

    const fs::path junk = dir.path() / "junk.nii";
    write_text_file(junk, std::string(400, 'x'));
    CHECK_ERROR_CODE(nifti::load_volume(junk), ErrorCode::CorruptHeader);

    const fs::path short_file = dir.path() / "short.nii";
    write_text_file(short_file, "abc");
    CHECK_ERROR_CODE(nifti::load_volume(short_file), ErrorCode::CorruptHeader);
}

TEST_CASE("nifti reads int16 with scaling") {
    TempDir dir;
    const fs::path p = dir.path() / "i16.nii";
    unsigned char hdr[352] = {};
    const std::int32_t sizeof_hdr = 348;
    std::memcpy(hdr, &sizeof_hdr, 4);
    const std::int16_t dims[8] = {3, 2, 2, 1, 1, 1, 1, 1};
    std::memcpy(hdr + 40, dims, sizeof dims);
    const std::int16_t dt = 4, bitpix = 16;
    std::memcpy(hdr + 70, &dt, 2);
    std::memcpy(hdr + 72, &bitpix, 2);
    const float pixdim[8] = {1, 1, 1, 1, 1, 1, 1, 1};
    std::memcpy(hdr + 76, pixdim, sizeof pixdim);
    const float vox_offset = 352, slope = 2, inter = 1;
    std::memcpy(hdr + 108, &vox_offset, 4);
    std::memcpy(hdr + 112, &slope, 4);
    std::memcpy(hdr + 116, &inter, 4);
    std::memcpy(hdr + 344, "n+1\0", 4);
    const std::int16_t data[4] = {0, 1, -2, 300};
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    out.write(reinterpret_cast<const char*>(data), sizeof data);
    out.close();
    const Volume3D vol = nifti::load_volume(p);
    CHECK(vol.data.at(0, 0, 0) == 1.0f);
    CHECK(vol.data.at(1, 0, 0) == 3.0f);
    CHECK(vol.data.at(0, 1, 0) == -3.0f);
    CHECK(vol.data.at(1, 1, 0) == 601.0f);
}

TEST_CASE("probability maps validation") {
    Grid3<float> gm({2, 2, 2}, 0.6f), wm({2, 2, 2}, 0.3f);
    CHECK_NOTHROW(ProbabilityMaps(gm, wm, MapSource::ExternalFast));
    Grid3<float> wm_bad({2, 2, 2}, 0.5f);
    CHECK_ERROR_CODE(ProbabilityMaps(gm, wm_bad, MapSource::ExternalFast), ErrorCode::MapShapeMismatch);
    CHECK_ERROR_CODE(ProbabilityMaps(gm, Grid3<float>({2, 2, 3}), MapSource::ExternalFast),
                     ErrorCode::MapShapeMismatch);
}

TEST_CASE("kmeans separates three plateaus") {
    Grid3<float> g({6, 6, 6}, 0.0f);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float levels[4] = {0.0f, 10.0f, 50.0f, 90.0f};
        g.values()[i] = levels[i % 4];
    }
    const Volume3D vol{g, {1, 1, 1}, "p"};
    const ProbabilityMaps maps = kmeans_tissue_prior(vol, 5);
    CHECK(maps.source() == MapSource::KmeansFallback);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float v = g.values()[i];
        CHECK(maps.gm().values()[i] == (v == 50.0f ? 1.0f : 0.0f));
        CHECK(maps.wm().values()[i] == (v == 90.0f ? 1.0f : 0.0f));
    }
    const KmeansFit fit = fit_kmeans3(g, 5);
    CHECK(fit.centroids[0] == doctest::Approx(10.0));
    CHECK(fit.centroids[1] == doctest::Approx(50.0));
    CHECK(fit.centroids[2] == doctest::Approx(90.0));
}

TEST_CASE("kmeans determinism and degenerate input") {
    const SubjectData s = testing::phantom_subject({20, 22, 18}, "s", 4);
    const ProbabilityMaps a = kmeans_tissue_prior(s.brain, 9);
    const ProbabilityMaps b = kmeans_tissue_prior(s.brain, 9);
    CHECK(a.gm() == b.gm());
    CHECK(a.wm() == b.wm());

    const Volume3D constant{Grid3<float>({4, 4, 4}, 7.0f), {1, 1, 1}, "c"};
    CHECK_ERROR_CODE(kmeans_tissue_prior(constant, 0), ErrorCode::DegenerateInput);

    const Volume3D empty{Grid3<float>({4, 4, 4}, 0.0f), {1, 1, 1}, "e"};
    const ProbabilityMaps z = kmeans_tissue_prior(empty, 0);
    for (float v : z.gm().values()) CHECK(v == 0.0f);
    for (float v : z.wm().values()) CHECK(v == 0.0f);
}

TEST_CASE("kmeans recovers phantom tissue classes") {
    const SubjectData s = testing::phantom_subject({24, 24, 24}, "s", 11);
    const ProbabilityMaps m = kmeans_tissue_prior(s.brain, 0);
    CHECK(m.gm() == s.maps.gm());
    CHECK(m.wm() == s.maps.wm());
}

TEST_CASE("intensity threshold mask matches per-voxel oracle") {
    const Volume3D vol = random_volume({7, 6, 5}, 8);
    for (auto [lo, hi] : {std::pair{10.0, 60.0}, std::pair{0.0, 1e9}, std::pair{30.0, 30.0}}) {
        const Grid3<std::uint8_t> m = intensity_threshold_mask(vol, lo, hi);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double v = vol.data.values()[i];
            CHECK(m.values()[i] == ((v >= lo && v < hi) ? 1 : 0));
        }
    }
    Volume3D positive{Grid3<float>({3, 3, 3}, 2.0f), {1, 1, 1}, "p"};
    const auto all = intensity_threshold_mask(positive, 0.0, std::numeric_limits<double>::infinity());
    const auto none = intensity_threshold_mask(positive, 2.0, 2.0);
    for (auto v : all.values()) CHECK(v == 1);
    for (auto v : none.values()) CHECK(v == 0);
    CHECK_ERROR_CODE(intensity_threshold_mask(positive, 3.0, 2.0), ErrorCode::InvalidRange);
}

TEST_CASE("external tools through a stand-in executable") {
    TempDir dir;
    const fs::path bin = dir.path() / "bin";
    fs::create_directories(bin);
    fs::create_symlink(FAKE_FSL_PATH, bin / "bet");
    fs::create_symlink(FAKE_FSL_PATH, bin / "fast");

    const Volume3D vol = testing::phantom_volume({20, 20, 20}, "sub", 3);
    const Volume3D brain = run_brain_extraction(vol, {(bin / "bet").string(), {}, 30.0});
    CHECK(brain.shape() == vol.shape());
    std::size_t nz_in = 0, nz_out = 0;
    for (float v : vol.data.values()) nz_in += v != 0.0f;
    for (float v : brain.data.values()) nz_out += v != 0.0f;
    CHECK(nz_out < nz_in);

    const ProbabilityMaps maps = run_tissue_segmentation(brain, {(bin / "fast").string(), {"-t", "1", "-n", "3"}, 30.0});
    CHECK(maps.source() == MapSource::ExternalFast);
    CHECK(maps.shape() == vol.shape());
    for (std::size_t i = 0; i < maps.gm().size(); ++i)
        CHECK(maps.gm().values()[i] + maps.wm().values()[i] <= 1.0f + 1e-6f);

    CHECK_ERROR_CODE(run_brain_extraction(vol, {(dir.path() / "nope" / "bet").string(), {}, 5.0}),
                     ErrorCode::ToolNotFound);

    setenv("FAKE_FSL_FAIL", "1", 1);
    CHECK_ERROR_CODE(run_brain_extraction(vol, {(bin / "bet").string(), {}, 30.0}), ErrorCode::ToolFailure);
    unsetenv("FAKE_FSL_FAIL");

    setenv("FAKE_FSL_SLEEP", "5", 1);
    CHECK_ERROR_CODE(run_brain_extraction(vol, {(bin / "bet").string(), {}, 0.5}), ErrorCode::Timeout);
    unsetenv("FAKE_FSL_SLEEP");
}

TEST_CASE("tool resolution honours the FSL directory variable") {
    TempDir dir;
    fs::create_directories(dir.path() / "bin");
    fs::create_symlink(FAKE_FSL_PATH, dir.path() / "bin" / "bet");
    setenv("BRAINSEG_FSL_DIR", dir.path().c_str(), 1);
    const auto found = resolve_tool("bet", {});
    unsetenv("BRAINSEG_FSL_DIR");
    REQUIRE(found.has_value());
    CHECK(*found == dir.path() / "bin" / "bet");
}
