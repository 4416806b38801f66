#pragma once

#include <filesystem>
#include <string>

namespace pheno {

std::string read_text_file(const std::filesystem::path& path);

// Writes via a temp file in the same directory, then renames into place, so
// readers never observe a partially written file.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

} // namespace pheno
