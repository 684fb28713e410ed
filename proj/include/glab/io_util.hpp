#pragma once

#include <string>

namespace glab {

// Shortest round-trip decimal form; keeps CSV output byte-stable across runs.
std::string fmt_double(double v);

// Create dir (and parents); error if the path exists as a non-directory.
void ensure_dir(const std::string& path);

bool file_exists(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace glab
