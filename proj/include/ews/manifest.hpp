#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ews {

// Record of one run: everything needed to re-run or audit it. Artifact
// paths are relative to the run directory; each carries a content hash
// checked at read time.
struct RunManifest {
  std::string run_id;
  std::string code_version;
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::string config_text;
  std::string metrics_path;                     // relative
  std::vector<std::string> checkpoint_paths;    // relative
  std::map<std::string, std::uint64_t> file_hashes;  // path -> fnv1a64
};

std::string manifest_to_text(const RunManifest& m);
RunManifest manifest_from_text(const std::string& text);

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Re-hashes every referenced artifact under run_dir; returns one message
// per missing or modified file (empty = intact).
std::vector<std::string> verify_manifest(const RunManifest& m,
                                         const std::string& run_dir);

}  // namespace ews
