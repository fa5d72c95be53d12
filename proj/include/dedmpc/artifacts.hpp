#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dedmpc {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& file);

/// Writes a new file; refuses to replace an existing one.
void write_new_file(const std::filesystem::path& file, std::string_view contents);

/// Creates `dir` for fresh artifacts. Throws if it exists and is not empty.
void prepare_output_dir(const std::filesystem::path& dir);

}  // namespace dedmpc
