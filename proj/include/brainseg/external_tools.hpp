#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/volume.hpp"

namespace brainseg {

struct ToolConfig {
    /// Absolute/relative path, or a bare name resolved against
    /// $BRAINSEG_FSL_DIR/bin and then $PATH.
    std::string executable_path;
    std::vector<std::string> extra_args;
    double timeout_s = 600.0;

    void validate() const;
};

/// Where the tissue classifier writes its per-class probability volumes.
/// `{base}` is the output basename passed via `-o`, `{class}` the class index.
struct FastOutputSpec {
    std::string pattern = "{base}_pve_{class}.nii.gz";
    int gm_class = 1;
    int wm_class = 2;

    std::filesystem::path path_for(const std::filesystem::path& base, int class_index) const;
};

struct ProcessResult {
    int exit_code = 0;
    std::string output; // combined stdout + stderr
};

/// Returns the resolved executable, or nullopt when nothing executable is found.
std::optional<std::filesystem::path> resolve_tool(const std::string& default_name, const ToolConfig& cfg);

/// Runs `argv` with a wall-clock limit. Throws Timeout (child killed) or
/// ToolFailure when the process cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv, double timeout_s);

/// `bet <in> <out> [args]`; returns the brain-extracted volume.
/// Errors: ToolNotFound, ToolFailure, Timeout.
Volume3D run_brain_extraction(const Volume3D& vol, const ToolConfig& cfg);

/// `fast [args] -o <base> <in>`; returns validated GM/WM maps.
/// Errors: ToolNotFound, ToolFailure, Timeout, MapShapeMismatch.
ProbabilityMaps run_tissue_segmentation(const Volume3D& vol, const ToolConfig& cfg,
                                        const FastOutputSpec& outputs = {});

} // namespace brainseg
