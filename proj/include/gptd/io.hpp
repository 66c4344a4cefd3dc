#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gptd::io {

std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Write-temp-then-rename. Parent directories are created as needed.
void write_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes);
void write_atomic(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

// Non-empty lines with trailing CR/whitespace stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace gptd::io
