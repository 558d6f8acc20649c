#include "ews/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ews/hashing.hpp"

namespace ews {

namespace fs = std::filesystem;

std::string manifest_to_text(const RunManifest& m) {
  std::ostringstream os;
  os << "manifest v1\n";
  os << "run_id " << m.run_id << "\n";
  os << "code_version " << m.code_version << "\n";
  os << "seed " << m.seed << "\n";
  os << "dataset_hash " << m.dataset_hash << "\n";
  os << "metrics_path " << m.metrics_path << "\n";
  os << "checkpoints " << m.checkpoint_paths.size() << "\n";
  for (const auto& p : m.checkpoint_paths) os << p << "\n";
  os << "file_hashes " << m.file_hashes.size() << "\n";
  for (const auto& [p, h] : m.file_hashes) os << h << " " << p << "\n";
  os << "config " << m.config_text.size() << "\n";
  os << m.config_text;
  return os.str();
}

RunManifest manifest_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string word, version;
  is >> word >> version;
  if (word != "manifest" || version != "v1")
    throw std::runtime_error("not a run manifest");
  RunManifest m;
  auto expect = [&](const std::string& name) {
    if (!(is >> word) || word != name)
      throw std::runtime_error("manifest: expected " + name);
  };
  expect("run_id");
  is >> m.run_id;
  expect("code_version");
  is >> m.code_version;
  expect("seed");
  is >> m.seed;
  expect("dataset_hash");
  is >> m.dataset_hash;
  expect("metrics_path");
  is >> m.metrics_path;
  expect("checkpoints");
  std::size_t n = 0;
  is >> n;
  m.checkpoint_paths.resize(n);
  for (auto& p : m.checkpoint_paths) is >> p;
  expect("file_hashes");
  is >> n;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = 0;
    std::string p;
    is >> h >> p;
    m.file_hashes[p] = h;
  }
  expect("config");
  std::size_t len = 0;
  is >> len;
  is.get();  // newline
  m.config_text.resize(len);
  is.read(m.config_text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("manifest: truncated record");
  return m;
}

void save_manifest(const RunManifest& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  os << manifest_to_text(m);
  if (!os) throw std::runtime_error("short manifest write " + path);
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read manifest " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return manifest_from_text(os.str());
}

std::vector<std::string> verify_manifest(const RunManifest& m,
                                         const std::string& run_dir) {
  std::vector<std::string> problems;
  for (const auto& [rel, want] : m.file_hashes) {
    const fs::path p = fs::path(run_dir) / rel;
    if (!fs::exists(p)) {
      problems.push_back("missing artifact: " + rel);
      continue;
    }
    const std::uint64_t got = file_hash(p.string());
    if (got != want)
      problems.push_back("artifact modified since it was recorded: " + rel);
  }
  return problems;
}

}  // namespace ews
