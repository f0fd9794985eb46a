#include "brainseg/external_tools.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "brainseg/fsutil.hpp"
#include "brainseg/nifti.hpp"

extern char** environ;

namespace brainseg {
namespace {

bool is_executable(const std::filesystem::path& p) {
    std::error_code ec;
    return std::filesystem::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

std::string replace_all(std::string text, std::string_view what, std::string_view with) {
    for (std::size_t pos = text.find(what); pos != std::string::npos; pos = text.find(what, pos + with.size())) {
        text.replace(pos, what.size(), with);
    }
    return text;
}

std::size_t count_nonzero(const Grid3<float>& g) {
    std::size_t n = 0;
    for (float v : g.values()) n += (v != 0.0f);
    return n;
}

std::filesystem::path require_tool(const std::string& name, const ToolConfig& cfg) {
    cfg.validate();
    auto exe = resolve_tool(name, cfg);
    if (!exe) {
        const std::string shown = cfg.executable_path.empty() ? name : cfg.executable_path;
        throw Error(ErrorCode::ToolNotFound, "'" + shown + "' is not an executable on this system");
    }
    return *exe;
}

void check_exit(const std::string& name, const ProcessResult& r) {
    if (r.exit_code != 0) {
        throw Error(ErrorCode::ToolFailure,
                    name + " exited with status " + std::to_string(r.exit_code) + ": " + r.output);
    }
}

} // namespace

void ToolConfig::validate() const {
    if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) {
        throw Error(ErrorCode::InvalidConfig, "tool timeout_s must be positive");
    }
}

std::filesystem::path FastOutputSpec::path_for(const std::filesystem::path& base, int class_index) const {
    return replace_all(replace_all(pattern, "{base}", base.string()), "{class}", std::to_string(class_index));
}

std::optional<std::filesystem::path> resolve_tool(const std::string& default_name, const ToolConfig& cfg) {
    const std::string name = cfg.executable_path.empty() ? default_name : cfg.executable_path;
    if (name.find('/') != std::string::npos) {
        if (is_executable(name)) return std::filesystem::path(name);
        return std::nullopt;
    }
    if (const char* root = std::getenv("BRAINSEG_FSL_DIR"); root && *root) {
        for (const auto& candidate : {std::filesystem::path(root) / "bin" / name, std::filesystem::path(root) / name}) {
            if (is_executable(candidate)) return candidate;
        }
    }
    if (const char* path = std::getenv("PATH"); path) {
        std::string_view rest(path);
        while (!rest.empty()) {
            const auto colon = rest.find(':');
            const auto dir = rest.substr(0, colon);
            if (!dir.empty()) {
                const auto candidate = std::filesystem::path(std::string(dir)) / name;
                if (is_executable(candidate)) return candidate;
            }
            if (colon == std::string_view::npos) break;
            rest.remove_prefix(colon + 1);
        }
    }
    return std::nullopt;
}

ProcessResult run_process(const std::vector<std::string>& argv, double timeout_s) {
    if (argv.empty()) throw Error(ErrorCode::InvalidArgument, "empty command line");
    TempDir scratch("brainseg-proc");
    const auto log_path = scratch.path() / "output.log";

    std::vector<char*> cargs;
    cargs.reserve(argv.size() + 1);
    for (const auto& a : argv) cargs.push_back(const_cast<char*>(a.c_str()));
    cargs.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorCode::ToolFailure, "fork failed for " + argv[0]);
    if (pid == 0) {
        const int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
        if (fd >= 0) {
            ::dup2(fd, STDOUT_FILENO);
            ::dup2(fd, STDERR_FILENO);
            ::close(fd);
        }
        ::setenv("FSLOUTPUTTYPE", "NIFTI_GZ", 1);
        ::execv(cargs[0], cargs.data());
        ::_exit(127);
    }

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    int status = 0;
    for (;;) {
        const pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (done < 0) throw Error(ErrorCode::ToolFailure, "waitpid failed for " + argv[0]);
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw Error(ErrorCode::Timeout, argv[0] + " exceeded " + std::to_string(timeout_s) + " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }

    ProcessResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    std::error_code ec;
    if (std::filesystem::exists(log_path, ec)) result.output = read_text_file(log_path);
    return result;
}

Volume3D run_brain_extraction(const Volume3D& vol, const ToolConfig& cfg) {
    const auto exe = require_tool("bet", cfg);
    TempDir scratch("brainseg-bet");
    const auto in_path = scratch.path() / "input.nii.gz";
    const auto out_base = scratch.path() / "brain";
    nifti::write_volume(in_path, vol);

    std::vector<std::string> argv{exe.string(), in_path.string(), out_base.string()};
    argv.insert(argv.end(), cfg.extra_args.begin(), cfg.extra_args.end());
    check_exit("bet", run_process(argv, cfg.timeout_s));

    std::filesystem::path out_path;
    for (const char* ext : {".nii.gz", ".nii"}) {
        auto candidate = out_base;
        candidate += ext;
        if (std::filesystem::exists(candidate)) {
            out_path = candidate;
            break;
        }
    }
    if (out_path.empty()) throw Error(ErrorCode::ToolFailure, "bet produced no output volume");

    Volume3D brain = nifti::load_volume(out_path);
    if (!(brain.shape() == vol.shape())) {
        throw Error(ErrorCode::ToolFailure, "bet output shape differs from its input");
    }
    if (count_nonzero(brain.data) > count_nonzero(vol.data)) {
        throw Error(ErrorCode::ToolFailure, "bet output has more nonzero voxels than its input");
    }
    brain.subject_id = vol.subject_id;
    brain.spacing = vol.spacing;
    return brain;
}

ProbabilityMaps run_tissue_segmentation(const Volume3D& vol, const ToolConfig& cfg,
                                        const FastOutputSpec& outputs) {
    const auto exe = require_tool("fast", cfg);
    TempDir scratch("brainseg-fast");
    const auto in_path = scratch.path() / "brain.nii.gz";
    const auto out_base = scratch.path() / "seg";
    nifti::write_volume(in_path, vol);

    std::vector<std::string> argv{exe.string()};
    argv.insert(argv.end(), cfg.extra_args.begin(), cfg.extra_args.end());
    argv.insert(argv.end(), {"-o", out_base.string(), in_path.string()});
    check_exit("fast", run_process(argv, cfg.timeout_s));

    auto load_map = [&](int cls) {
        const auto p = outputs.path_for(out_base, cls);
        if (!std::filesystem::exists(p)) {
            throw Error(ErrorCode::ToolFailure, "fast did not produce " + p.filename().string());
        }
        Volume3D m = nifti::load_volume(p);
        if (!(m.shape() == vol.shape())) {
            throw Error(ErrorCode::MapShapeMismatch, p.filename().string() + " does not match the input shape");
        }
        return std::move(m.data);
    };
    return ProbabilityMaps(load_map(outputs.gm_class), load_map(outputs.wm_class), MapSource::ExternalFast);
}

} // namespace brainseg
