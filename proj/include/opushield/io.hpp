#pragma once

#include <filesystem>
#include <string_view>

namespace opushield {

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// see a partial file. Creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace opushield
