#pragma once

#include <cstdint>
#include <filesystem>

#include "brainseg/grid.hpp"

namespace brainseg {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

using RgbImage = Image<Rgb>;

namespace png {

void write_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& image);
void write_rgb8(const std::filesystem::path& path, const RgbImage& image);

/// Reads any PNG converted to 8-bit grayscale. Errors: MissingFile, IoFailure.
Image<std::uint8_t> read_gray8(const std::filesystem::path& path);
RgbImage read_rgb8(const std::filesystem::path& path);

} // namespace png
} // namespace brainseg
