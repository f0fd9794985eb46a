#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace brainseg {

/// Scratch directory removed on destruction.
class TempDir {
  public:
    explicit TempDir(std::string_view prefix = "brainseg");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    TempDir(TempDir&& other) noexcept;
    TempDir& operator=(TempDir&&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

  private:
    std::filesystem::path path_;
};

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename so readers never observe a
/// partially written file.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

std::string sha256_file(const std::filesystem::path& path);

} // namespace brainseg
