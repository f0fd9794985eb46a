#include "brainseg/png_io.hpp"

#include <png.h>

#include <cstring>
#include <vector>

namespace brainseg::png {
namespace {

void write_image(const std::filesystem::path& path, const void* pixels, std::size_t width, std::size_t height,
                 png_uint_32 format) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (png_image_write_to_file(&img, path.c_str(), 0, pixels, 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string() + ": " + msg);
    }
}

template <typename Pixel>
std::vector<Pixel> read_image(const std::filesystem::path& path, png_uint_32 format, std::size_t& width,
                              std::size_t& height) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        throw Error(ErrorCode::IoFailure, "cannot read " + path.string() + ": " + img.message);
    }
    img.format = format;
    width = img.width;
    height = img.height;
    std::vector<Pixel> pixels(width * height);
    if (png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorCode::IoFailure, "cannot decode " + path.string() + ": " + msg);
    }
    return pixels;
}

} // namespace

void write_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& image) {
    write_image(path, image.values().data(), image.width(), image.height(), PNG_FORMAT_GRAY);
}

void write_rgb8(const std::filesystem::path& path, const RgbImage& image) {
    static_assert(sizeof(Rgb) == 3);
    write_image(path, image.values().data(), image.width(), image.height(), PNG_FORMAT_RGB);
}

Image<std::uint8_t> read_gray8(const std::filesystem::path& path) {
    std::size_t w = 0, h = 0;
    auto px = read_image<std::uint8_t>(path, PNG_FORMAT_GRAY, w, h);
    return {w, h, std::move(px)};
}

RgbImage read_rgb8(const std::filesystem::path& path) {
    std::size_t w = 0, h = 0;
    auto px = read_image<Rgb>(path, PNG_FORMAT_RGB, w, h);
    return {w, h, std::move(px)};
}

} // namespace brainseg::png
