#include "phantoms.hpp"

#include <cmath>
#include <random>

#include "brainseg/fsutil.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/random.hpp"

namespace brainseg::testing {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct Ellipsoid {
    double cx, cy, cz, rx, ry, rz;
    // <= 1 inside
    double radius(double x, double y, double z) const {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (z - cz) / rz;
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
};

Ellipsoid head_of(const Shape3& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double nx = static_cast<double>(s.nx), ny = static_cast<double>(s.ny), nz = static_cast<double>(s.nz);
    return {nx / 2.0 + uniform(rng, -0.03, 0.03) * nx, ny / 2.0 + uniform(rng, -0.03, 0.03) * ny,
            nz / 2.0 + uniform(rng, -0.03, 0.03) * nz, nx * uniform(rng, 0.40, 0.46),
            ny * uniform(rng, 0.40, 0.46), nz * uniform(rng, 0.40, 0.46)};
}

// Tissue class by normalised radius: 0 outside, 1 skull, 2 CSF, 3 GM, 4 WM.
int zone(double r) {
    if (r > 1.0) return 0;
    if (r > 0.88) return 1;
    if (r > 0.80) return 2;
    if (r > 0.55) return 3;
    return 4;
}

} // namespace

TrainingSample geometric_slice(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
    const double cx = uniform(rng, 100, 156), cy = uniform(rng, 100, 156);
    const double rx = uniform(rng, 60, 95), ry = uniform(rng, 60, 95);
    const double core = uniform(rng, 0.45, 0.65);
    TrainingSample s{Image<float>(256, 256, 0.05f), LabelMask(256, 256, 0)};
    for (std::size_t y = 0; y < 256; ++y) {
        for (std::size_t x = 0; x < 256; ++x) {
            const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
            const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r <= core) {
                s.image.at(x, y) = 0.85f;
                s.label.at(x, y) = 2;
            } else if (r <= 1.0) {
                s.image.at(x, y) = 0.45f;
                s.label.at(x, y) = 1;
            }
        }
    }
    return s;
}

std::vector<TrainingSample> geometric_slices(std::size_t count, std::uint64_t seed) {
    std::vector<TrainingSample> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(geometric_slice(seed + i));
    return out;
}

Volume3D phantom_volume(const Shape3& shape, const std::string& subject_id, std::uint64_t seed) {
    const Ellipsoid head = head_of(shape, seed);
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
    static constexpr float kLevels[5] = {0.0f, 900.0f, 150.0f, 450.0f, 700.0f};
    Grid3<float> data(shape, 0.0f);
    for (std::size_t z = 0; z < shape.nz; ++z)
        for (std::size_t y = 0; y < shape.ny; ++y)
            for (std::size_t x = 0; x < shape.nx; ++x) {
                const int k = zone(head.radius(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5,
                                               static_cast<double>(z) + 0.5));
                const float noise = k == 0 ? 0.0f : static_cast<float>(10.0 * standard_normal(rng));
                data.at(x, y, z) = kLevels[k] + noise;
            }
    return {std::move(data), {1.0, 1.0, 1.2}, subject_id};
}

ProbabilityMaps phantom_maps(const Shape3& shape, std::uint64_t seed) {
    const Ellipsoid head = head_of(shape, seed);
    Grid3<float> gm(shape, 0.0f), wm(shape, 0.0f);
    for (std::size_t z = 0; z < shape.nz; ++z)
        for (std::size_t y = 0; y < shape.ny; ++y)
            for (std::size_t x = 0; x < shape.nx; ++x) {
                const int k = zone(head.radius(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5,
                                               static_cast<double>(z) + 0.5));
                if (k == 3) gm.at(x, y, z) = 1.0f;
                if (k == 4) wm.at(x, y, z) = 1.0f;
            }
    return {std::move(gm), std::move(wm), MapSource::ExternalFast};
}

SubjectData phantom_subject(const Shape3& shape, const std::string& subject_id, std::uint64_t seed) {
    Volume3D vol = phantom_volume(shape, subject_id, seed);
    const Ellipsoid head = head_of(shape, seed);
    for (std::size_t z = 0; z < shape.nz; ++z)
        for (std::size_t y = 0; y < shape.ny; ++y)
            for (std::size_t x = 0; x < shape.nx; ++x) {
                const int k = zone(head.radius(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5,
                                               static_cast<double>(z) + 0.5));
                if (k <= 1) vol.data.at(x, y, z) = 0.0f;
            }
    return {std::move(vol), phantom_maps(shape, seed)};
}


std::filesystem::path write_pipeline_fixture(const std::filesystem::path& root, std::size_t n_subjects,
                                             const std::filesystem::path& fake_fsl, const Shape3& shape) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "raw");
    fs::create_directories(root / "fsl" / "bin");
    for (const char* tool : {"bet", "fast"}) {
        const fs::path link = root / "fsl" / "bin" / tool;
        if (!fs::exists(link)) fs::create_symlink(fake_fsl, link);
    }
    for (std::size_t i = 0; i < n_subjects; ++i) {
        const std::string id = "IXI" + std::to_string(100 + i) + "-Guys-" + std::to_string(1000 + i) + "-T1";
        nifti::write_volume(root / "raw" / (id + ".nii.gz"), phantom_volume(shape, id, 50 + i));
    }
    const nlohmann::json cfg{
        {"seed", 7},
        {"paths", {{"raw_dir", "raw"}, {"work_dir", "work"}, {"output_dir", "out"}}},
        {"tools",
         {{"bet", {{"executable_path", "fsl/bin/bet"}, {"timeout_s", 60}}},
          {"fast", {{"executable_path", "fsl/bin/fast"}, {"timeout_s", 60}}},
          {"workers", 1}}},
        {"build", {{"planes", {"axial", "coronal", "sagittal"}}, {"split_fractions", {0.5, 0.25, 0.25}}}},
        {"train", {{"learning_rate", 5e-3}, {"batch_size", 4}, {"max_epochs", 2}, {"early_stop_patience", 3}}},
        {"eval", {{"sample_n", 12}}},
        {"tiny", {{"max_slices", 8}}}};
    const fs::path path = root / "config.json";
    write_text_file(path, cfg.dump(2));
    return path;
}

} // namespace brainseg::testing
