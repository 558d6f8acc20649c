#pragma once

#include <map>
#include <string>
#include <vector>

namespace ews {

// Flat key=value run configuration. '#' starts a comment; keys are
// case-sensitive identifiers; later assignments win.
class Config {
 public:
  static Config from_text(const std::string& text);
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // Parses one "key=value" override (the CLI --set grammar).
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  long long integer(const std::string& key, long long fallback) const;
  double real(const std::string& key, double fallback) const;
  bool flag(const std::string& key, bool fallback) const;

  std::vector<std::string> keys() const;
  // Keys not in `known` (config validation before a run starts).
  std::vector<std::string> unknown_keys(
      const std::vector<std::string>& known) const;

  // Canonical text form: sorted "key = value" lines.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ews
