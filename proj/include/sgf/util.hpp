#pragma once

#include <string>

namespace sgf {

/// SHA-256 of a byte string, lowercase hex. Used to fingerprint scenario
/// files in run metadata.
std::string sha256_hex(const std::string& bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace sgf
