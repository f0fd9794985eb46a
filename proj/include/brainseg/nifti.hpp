#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "brainseg/volume.hpp"

namespace brainseg::nifti {

/// On-disk voxel type codes from the NIfTI-1 header.
enum class DataType : std::int16_t {
    Uint8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
    Float64 = 64,
    Int8 = 256,
    Uint16 = 512,
    Uint32 = 768,
};

/// Subset of the 348-byte header that the pipeline consumes.
struct Header {
    Shape3 shape;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    DataType datatype = DataType::Float32;
    double vox_offset = 352.0;
    double scl_slope = 0.0;
    double scl_inter = 0.0;
    bool byte_swapped = false;
};

/// Strips `.nii` / `.nii.gz` from the filename.
std::string subject_id_from_path(const std::filesystem::path& path);

bool has_nifti_extension(const std::filesystem::path& path);

/// Reads a plain or gzip-compressed NIfTI-1 file. Errors: MissingFile,
/// CorruptHeader, NonFiniteData.
Volume3D load_volume(const std::filesystem::path& path);

Header read_header(const std::filesystem::path& path);

/// Writes float32 voxels; the file is gzip-compressed when the path ends in
/// `.gz`. Output bytes depend only on the volume contents.
void write_volume(const std::filesystem::path& path, const Volume3D& volume);

void write_grid(const std::filesystem::path& path, const Grid3<float>& grid,
                const std::array<double, 3>& spacing);

} // namespace brainseg::nifti
