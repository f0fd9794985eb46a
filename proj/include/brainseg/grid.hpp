#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "brainseg/error.hpp"

namespace brainseg {

struct Shape3 {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;

    std::size_t count() const noexcept { return nx * ny * nz; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense 3D grid in NIfTI voxel order (x fastest, then y, then z).
template <typename T>
class Grid3 {
  public:
    Grid3() = default;
    explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {
        if (shape.nx == 0 || shape.ny == 0 || shape.nz == 0) {
            throw Error(ErrorCode::InvalidArgument, "grid dimensions must all be >= 1");
        }
    }
    Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (shape.nx == 0 || shape.ny == 0 || shape.nz == 0) {
            throw Error(ErrorCode::InvalidArgument, "grid dimensions must all be >= 1");
        }
        if (data_.size() != shape.count()) {
            throw Error(ErrorCode::ShapeMismatch, "grid data size does not match shape");
        }
    }

    const Shape3& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + shape_.nx * (y + shape_.ny * z);
    }
    T& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data_[index(x, y, z)]; }
    const T& at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[index(x, y, z)];
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    const std::vector<T>& raw() const noexcept { return data_; }

    friend bool operator==(const Grid3&, const Grid3&) = default;

  private:
    Shape3 shape_;
    std::vector<T> data_;
};

/// Dense row-major 2D image; (x, y) addresses column x of row y.
template <typename T>
class Image {
  public:
    Image() = default;
    Image(std::size_t width, std::size_t height, T fill = T{})
        : width_(width), height_(height), data_(width * height, fill) {}
    Image(std::size_t width, std::size_t height, std::vector<T> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != width * height) {
            throw Error(ErrorCode::ShapeMismatch, "image data size does not match shape");
        }
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& at(std::size_t x, std::size_t y) noexcept { return data_[y * width_ + x]; }
    const T& at(std::size_t x, std::size_t y) const noexcept { return data_[y * width_ + x]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    bool same_shape(const auto& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Image&, const Image&) = default;

  private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<T> data_;
};

using LabelMask = Image<std::uint8_t>;

} // namespace brainseg
