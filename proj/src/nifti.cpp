#include "brainseg/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace brainseg::nifti {
namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

struct GzCloser {
    void operator()(gzFile f) const noexcept { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    // gzread passes uncompressed files through unchanged.
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) {
        throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    }
    std::vector<unsigned char> bytes;
    std::vector<unsigned char> chunk(1 << 16);
    for (;;) {
        const int n = gzread(f.get(), chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            throw Error(ErrorCode::CorruptHeader, "decompression failed for " + path.string());
        }
        if (n == 0) break;
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
    }
    return bytes;
}

template <typename T>
T read_field(const unsigned char* base, std::size_t offset, bool swap) {
    T value;
    std::memcpy(&value, base + offset, sizeof(T));
    if (swap) {
        auto* p = reinterpret_cast<unsigned char*>(&value);
        std::reverse(p, p + sizeof(T));
    }
    return value;
}

template <typename T>
void write_field(unsigned char* base, std::size_t offset, T value) {
    std::memcpy(base + offset, &value, sizeof(T));
}

std::size_t bytes_per_voxel(DataType type) {
    switch (type) {
    case DataType::Uint8:
    case DataType::Int8: return 1;
    case DataType::Int16:
    case DataType::Uint16: return 2;
    case DataType::Int32:
    case DataType::Uint32:
    case DataType::Float32: return 4;
    case DataType::Float64: return 8;
    }
    return 0;
}

Header parse_header(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < kHeaderSize) {
        throw Error(ErrorCode::CorruptHeader, name + ": file shorter than a NIfTI-1 header");
    }
    const unsigned char* base = bytes.data();
    Header h;
    const auto sizeof_hdr = read_field<std::int32_t>(base, 0, false);
    if (sizeof_hdr == 348) {
        h.byte_swapped = false;
    } else if (read_field<std::int32_t>(base, 0, true) == 348) {
        h.byte_swapped = true;
    } else {
        throw Error(ErrorCode::CorruptHeader, name + ": sizeof_hdr is not 348");
    }
    const bool sw = h.byte_swapped;
    if (std::memcmp(base + 344, "n+1", 4) != 0 && std::memcmp(base + 344, "ni1", 4) != 0) {
        throw Error(ErrorCode::CorruptHeader, name + ": missing NIfTI-1 magic");
    }
    if (std::memcmp(base + 344, "ni1", 4) == 0) {
        throw Error(ErrorCode::CorruptHeader, name + ": detached .hdr/.img pairs are not supported");
    }

    std::array<std::int16_t, 8> dim{};
    for (std::size_t i = 0; i < 8; ++i) dim[i] = read_field<std::int16_t>(base, 40 + 2 * i, sw);
    if (dim[0] < 1 || dim[0] > 7) {
        throw Error(ErrorCode::CorruptHeader, name + ": dim[0] out of range");
    }
    std::array<std::size_t, 3> extent{1, 1, 1};
    for (int i = 1; i <= dim[0]; ++i) {
        if (dim[i] < 1) throw Error(ErrorCode::CorruptHeader, name + ": non-positive dimension");
        if (i <= 3) {
            extent[i - 1] = static_cast<std::size_t>(dim[i]);
        } else if (dim[i] != 1) {
            throw Error(ErrorCode::CorruptHeader, name + ": only single-frame 3D volumes are supported");
        }
    }
    h.shape = {extent[0], extent[1], extent[2]};

    const auto code = read_field<std::int16_t>(base, 70, sw);
    h.datatype = static_cast<DataType>(code);
    if (bytes_per_voxel(h.datatype) == 0) {
        throw Error(ErrorCode::CorruptHeader, name + ": unsupported datatype " + std::to_string(code));
    }
    const auto bitpix = read_field<std::int16_t>(base, 72, sw);
    if (static_cast<std::size_t>(bitpix) != 8 * bytes_per_voxel(h.datatype)) {
        throw Error(ErrorCode::CorruptHeader, name + ": bitpix disagrees with datatype");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const double p = read_field<float>(base, 80 + 4 * i, sw);
        h.spacing[i] = (p > 0.0 && std::isfinite(p)) ? p : 1.0;
    }
    h.vox_offset = read_field<float>(base, 108, sw);
    h.scl_slope = read_field<float>(base, 112, sw);
    h.scl_inter = read_field<float>(base, 116, sw);
    if (!(h.vox_offset >= static_cast<double>(kHeaderSize))) {
        throw Error(ErrorCode::CorruptHeader, name + ": vox_offset inside header");
    }
    return h;
}

template <typename T>
void decode_voxels(const unsigned char* src, std::size_t count, bool swap, std::vector<float>& out) {
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<float>(read_field<T>(src, i * sizeof(T), swap));
    }
}

} // namespace

std::string subject_id_from_path(const std::filesystem::path& path) {
    std::string name = path.filename().string();
    for (std::string_view ext : {".nii.gz", ".nii"}) {
        if (ends_with(name, ext)) return name.substr(0, name.size() - ext.size());
    }
    return path.stem().string();
}

bool has_nifti_extension(const std::filesystem::path& path) {
    const std::string name = path.filename().string();
    return ends_with(name, ".nii") || ends_with(name, ".nii.gz");
}

Header read_header(const std::filesystem::path& path) {
    return parse_header(read_all(path), path.string());
}

Volume3D load_volume(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    const Header h = parse_header(bytes, path.string());
    const std::size_t count = h.shape.count();
    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    const std::size_t need = offset + count * bytes_per_voxel(h.datatype);
    if (bytes.size() < need) {
        throw Error(ErrorCode::CorruptHeader, path.string() + ": voxel data truncated");
    }

    std::vector<float> voxels(count);
    const unsigned char* src = bytes.data() + offset;
    switch (h.datatype) {
    case DataType::Uint8: decode_voxels<std::uint8_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Int8: decode_voxels<std::int8_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Int16: decode_voxels<std::int16_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Uint16: decode_voxels<std::uint16_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Int32: decode_voxels<std::int32_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Uint32: decode_voxels<std::uint32_t>(src, count, h.byte_swapped, voxels); break;
    case DataType::Float32: decode_voxels<float>(src, count, h.byte_swapped, voxels); break;
    case DataType::Float64: decode_voxels<double>(src, count, h.byte_swapped, voxels); break;
    }

    // A zero slope means "no scaling" per the format.
    if (h.scl_slope != 0.0 && std::isfinite(h.scl_slope) &&
        !(h.scl_slope == 1.0 && h.scl_inter == 0.0)) {
        for (float& v : voxels) v = static_cast<float>(v * h.scl_slope + h.scl_inter);
    }

    Volume3D vol{Grid3<float>(h.shape, std::move(voxels)), h.spacing, subject_id_from_path(path)};
    for (float v : vol.data.values()) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteData, path.string() + " contains NaN/Inf voxels");
        }
    }
    return vol;
}

void write_grid(const std::filesystem::path& path, const Grid3<float>& grid,
                const std::array<double, 3>& spacing) {
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    const Shape3& s = grid.shape();
    for (std::size_t d : {s.nx, s.ny, s.nz}) {
        if (d > 32767) throw Error(ErrorCode::InvalidArgument, "dimension exceeds NIfTI-1 limit");
    }

    std::vector<unsigned char> bytes(kDataOffset + grid.size() * sizeof(float), 0);
    unsigned char* base = bytes.data();
    write_field<std::int32_t>(base, 0, 348);
    write_field<char>(base, 38, 'r');
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(s.nx), static_cast<std::int16_t>(s.ny),
                                         static_cast<std::int16_t>(s.nz), 1, 1, 1, 1};
    for (std::size_t i = 0; i < 8; ++i) write_field<std::int16_t>(base, 40 + 2 * i, dim[i]);
    write_field<std::int16_t>(base, 70, static_cast<std::int16_t>(DataType::Float32));
    write_field<std::int16_t>(base, 72, 32);
    write_field<float>(base, 76, 1.0f);
    for (std::size_t i = 0; i < 3; ++i) write_field<float>(base, 80 + 4 * i, static_cast<float>(spacing[i]));
    write_field<float>(base, 108, static_cast<float>(kDataOffset));
    write_field<float>(base, 112, 1.0f);
    write_field<float>(base, 116, 0.0f);
    write_field<char>(base, 123, 2); // mm
    // Axis-aligned scanner transform from the spacing.
    write_field<std::int16_t>(base, 254, 1);
    write_field<float>(base, 280, static_cast<float>(spacing[0]));
    write_field<float>(base, 296 + 4, static_cast<float>(spacing[1]));
    write_field<float>(base, 312 + 8, static_cast<float>(spacing[2]));
    std::memcpy(base + 344, "n+1", 4);
    std::memcpy(base + kDataOffset, grid.raw().data(), grid.size() * sizeof(float));

    const std::string name = path.string();
    if (ends_with(name, ".gz")) {
        GzHandle f(gzopen(name.c_str(), "wb6"));
        if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + name);
        std::size_t written = 0;
        while (written < bytes.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - written, 1u << 20));
            if (gzwrite(f.get(), bytes.data() + written, chunk) != static_cast<int>(chunk)) {
                throw Error(ErrorCode::IoFailure, "gzip write failed for " + name);
            }
            written += chunk;
        }
        if (gzclose(f.release()) != Z_OK) throw Error(ErrorCode::IoFailure, "gzip close failed for " + name);
    } else {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + name);
    }
}

void write_volume(const std::filesystem::path& path, const Volume3D& volume) {
    write_grid(path, volume.data, volume.spacing);
}

} // namespace brainseg::nifti
