// Stand-in for FSL bet/fast used by tests. Dispatches on argv[0]:
//   bet <in> <out_base> [args]     zero voxels above the skull threshold
//   fast [args] -o <base> <in>     k-means GM/WM/CSF partial-volume maps
// FAKE_FSL_FAIL=1 exits with status 1; FAKE_FSL_SLEEP=<s> sleeps first.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "brainseg/nifti.hpp"
#include "brainseg/tissue_prior.hpp"

using namespace brainseg;
namespace fs = std::filesystem;

namespace {

constexpr float kSkullThreshold = 800.0f;

int run_bet(const std::vector<std::string>& args) {
    if (args.size() < 2) {
        std::cerr << "usage: bet <in> <out>\n";
        return 2;
    }
    Volume3D vol = nifti::load_volume(args[0]);
    for (float& v : vol.data.values())
        if (v > kSkullThreshold) v = 0.0f;
    nifti::write_volume(args[1] + ".nii.gz", vol);
    return 0;
}

int run_fast(const std::vector<std::string>& args) {
    std::string base;
    std::string input;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "-o" && i + 1 < args.size()) {
            base = args[++i];
        } else if (args[i] == "-t" || args[i] == "-n") {
            ++i;
        } else {
            input = args[i];
        }
    }
    if (base.empty() || input.empty()) {
        std::cerr << "usage: fast [-t n] [-n n] -o <base> <in>\n";
        return 2;
    }
    const Volume3D vol = nifti::load_volume(input);
    const ProbabilityMaps maps = kmeans_tissue_prior(vol, 0);
    Grid3<float> csf(vol.data.shape(), 0.0f);
    for (std::size_t i = 0; i < csf.size(); ++i)
        if (vol.data.values()[i] != 0.0f) csf.values()[i] = 1.0f - maps.gm().values()[i] - maps.wm().values()[i];
    nifti::write_grid(base + "_pve_0.nii.gz", csf, vol.spacing);
    nifti::write_grid(base + "_pve_1.nii.gz", maps.gm(), vol.spacing);
    nifti::write_grid(base + "_pve_2.nii.gz", maps.wm(), vol.spacing);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (const char* s = std::getenv("FAKE_FSL_SLEEP")) std::this_thread::sleep_for(std::chrono::duration<double>(std::atof(s)));
    if (const char* f = std::getenv("FAKE_FSL_FAIL"); f && std::string(f) == "1") {
        std::cerr << "fake failure\n";
        return 1;
    }
    const std::string tool = fs::path(argv[0]).filename().string();
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (tool == "bet") return run_bet(args);
        if (tool == "fast") return run_fast(args);
    } catch (const std::exception& ex) {
        std::cerr << tool << ": " << ex.what() << '\n';
        return 1;
    }
    std::cerr << "unknown tool " << tool << '\n';
    return 2;
}
