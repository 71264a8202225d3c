#pragma once

#include <filesystem>
#include <string>

namespace gmpvi::tools {

struct FetchResult {
  std::filesystem::path path;
  std::string sha256;
  bool downloaded = false;
};

/// Hex SHA-256 of a file.
std::string sha256_file(const std::filesystem::path& path);

/// Downloads a named public data set into `dir` unless a cached copy is
/// present. The digest is checked against `expected` when given, else
/// against the one recorded in dir/checksums.json on the first download.
FetchResult fetch_dataset(const std::string& name, const std::filesystem::path& dir,
                          const std::string& expected = "");

}  // namespace gmpvi::tools
