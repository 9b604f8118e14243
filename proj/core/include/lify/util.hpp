#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace lify::util {

/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view s) noexcept;

/// Keeps at most max_chars code points; when text is cut, the last kept code
/// point is replaced by `marker` so the result still fits.
std::string utf8_truncate(std::string_view s, std::size_t max_chars, std::string_view marker = "…");

/// Writes to a sibling temp file, fsyncs and renames over `path`.
/// Throws Error(IoError).
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace lify::util
