#pragma once

#include <string>

namespace hvat {

/// Whole-file read; throws CheckpointError(io) on failure.
std::string read_file(const std::string& path);

/// Write-temp-then-rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace hvat
