#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "brainseg/grid.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

enum class Plane { Axial, Coronal, Sagittal };
enum class Split { Train, Val, Test };

inline constexpr std::array<Plane, 3> kAllPlanes{Plane::Axial, Plane::Coronal, Plane::Sagittal};
inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

std::string_view to_string(Plane plane) noexcept;
std::string_view to_string(Split split) noexcept;
Plane plane_from_string(std::string_view text);
Split split_from_string(std::string_view text);

struct BuildConfig {
    int target_resolution = 256;
    double threshold = 0.5;
    double min_tissue_fraction = 0.01;
    std::vector<Plane> planes{kAllPlanes.begin(), kAllPlanes.end()};

    void validate() const;
    /// SHA-256 over a canonical JSON rendering of the fields.
    std::string hash() const;
};

/// One slice per index along the plane's axis, ascending: axial -> nz slices
/// of (nx x ny), coronal -> ny slices of (nx x nz), sagittal -> nx slices of
/// (ny x nz).
template <typename T>
std::vector<Image<T>> extract_slices(const Grid3<T>& grid, Plane plane);

template <typename T>
Image<T> extract_slice(const Grid3<T>& grid, Plane plane, std::size_t index);

/// Inverse of extract_slices.
template <typename T>
Grid3<T> restack_slices(const std::vector<Image<T>>& slices, Plane plane);

std::size_t slice_count(const Shape3& shape, Plane plane) noexcept;

/// Bilinear resize to target x target with half-pixel-centre sampling, so a
/// same-size resize is the identity. Throws EmptySlice.
Image<float> resize_to_grid(const Image<float>& slice, int target);

/// Label 1 where p_gm > threshold, then label 2 where p_wm > threshold
/// (white matter overwrites), else 0. Throws ShapeMismatch.
LabelMask fuse_mask(const Image<float>& p_gm, const Image<float>& p_wm, double threshold);

/// Fraction of pixels labelled 1 or 2 is at least min_tissue_fraction.
bool is_informative(const LabelMask& label, double min_tissue_fraction);

/// Per-slice min-max scaling to [0,1]; constant slices become all zero.
Image<float> normalize_min_max(const Image<float>& slice);

Image<std::uint8_t> to_u8(const Image<float>& unit_image);

struct SubjectSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& of(Split s) const;
};

/// Sorts ids, shuffles with the seed, then takes floor(f * n) for train and
/// val; the remainder goes to test. Throws DuplicateIds / InvalidArgument.
SubjectSplit split_subjects(std::vector<std::string> subject_ids, std::array<double, 3> fractions,
                            std::uint64_t seed);

struct ManifestEntry {
    std::string image_path; // relative to the dataset root
    std::string label_path;
    std::string subject_id;
    Plane plane = Plane::Axial;
    std::size_t index = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    std::string build_config_hash;
    std::filesystem::path root;

    std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

std::filesystem::path manifest_path(const std::filesystem::path& root, Plane plane, Split split);

/// JSON-lines, one object per entry.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path, const std::filesystem::path& root);

/// All (image, label) slice pairs for one subject and plane, informative or
/// not, in ascending index order.
struct SlicePair {
    Image<float> image; // [0,1]
    LabelMask label;    // {0,1,2}
    std::string subject_id;
    Plane plane = Plane::Axial;
    std::size_t index = 0;
};

SlicePair make_slice_pair(const Volume3D& brain, const ProbabilityMaps& maps, Plane plane, std::size_t index,
                          const BuildConfig& config);

/// Streams subjects into per-plane, per-split PNG trees and manifests.
class DatasetBuilder {
  public:
    DatasetBuilder(std::filesystem::path root, BuildConfig config, SubjectSplit splits, std::uint64_t seed);

    /// Writes every informative slice of the subject; returns how many.
    std::size_t add_subject(const Volume3D& brain, const ProbabilityMaps& maps);

    /// Writes all manifests (empty ones included) plus build_info.json.
    std::map<std::pair<Plane, Split>, DatasetManifest> finish();

  private:
    Split split_of(const std::string& subject_id) const;

    std::filesystem::path root_;
    BuildConfig config_;
    SubjectSplit splits_;
    std::uint64_t seed_;
    std::string config_hash_;
    std::map<std::pair<Plane, Split>, DatasetManifest> manifests_;
};

struct SubjectData {
    Volume3D brain;
    ProbabilityMaps maps;
};

std::map<std::pair<Plane, Split>, DatasetManifest> build_dataset(const std::vector<SubjectData>& subjects,
                                                                 const BuildConfig& config,
                                                                 const SubjectSplit& splits,
                                                                 const std::filesystem::path& root,
                                                                 std::uint64_t seed);

} // namespace brainseg
