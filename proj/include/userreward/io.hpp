#pragma once

#include <filesystem>
#include <string>

namespace userreward {

/// Reads a whole file; throws Error naming the path when it cannot be opened.
std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace userreward
