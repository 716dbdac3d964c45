// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cdiff {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kRunManifestName = "run_manifest.txt";

/// Provenance record written into every output directory.
struct RunManifest {
  std::string command_line;
  std::string config_text;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> checksums;  // relative path -> sha256

  /// Checksums every regular file under dir (except the manifest itself)
  /// and writes run_manifest.txt.
  void write(const std::filesystem::path& dir);
  static RunManifest read(const std::filesystem::path& dir);
  /// Relative paths whose current checksum differs or that are missing.
  static std::vector<std::string> verify(const std::filesystem::path& dir);
};

/// Entry point shared by the executable and the tests. Exit codes: 0 ok,
/// 1 runtime failure, 2 usage error. Failures print one line
/// `error\t<category>\t<message>` to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cdiff
