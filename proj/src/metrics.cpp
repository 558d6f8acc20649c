#include "ews/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ews {

namespace {

std::string expect_field(std::istringstream& is, const std::string& name) {
  std::string tok;
  if (!(is >> tok) || tok.rfind(name + "=", 0) != 0)
    throw std::runtime_error("metrics line: expected field " + name);
  return tok.substr(name.size() + 1);
}

}  // namespace

std::string record_to_line(const MetricsRecord& r) {
  if (!std::isfinite(r.value))
    throw std::invalid_argument("metrics value must be finite");
  std::ostringstream os;
  os << std::setprecision(17);
  os << "run=" << r.run << " step=" << r.step << " split=" << r.split
     << " metric=" << r.metric << " variant=" << r.variant
     << " severity=" << r.severity << " value=" << r.value;
  return os.str();
}

MetricsRecord record_from_line(const std::string& line) {
  std::istringstream is(line);
  MetricsRecord r;
  r.run = expect_field(is, "run");
  r.step = std::stoll(expect_field(is, "step"));
  r.split = expect_field(is, "split");
  r.metric = expect_field(is, "metric");
  r.variant = expect_field(is, "variant");
  r.severity = std::stoi(expect_field(is, "severity"));
  r.value = std::stod(expect_field(is, "value"));
  return r;
}

void append_metrics(const std::string& path,
                    const std::vector<MetricsRecord>& records) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot append metrics to " + path);
  for (const auto& r : records) os << record_to_line(r) << "\n";
  if (!os) throw std::runtime_error("short metrics write to " + path);
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read metrics " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_line(line));
  }
  return out;
}

std::vector<MetricsRecord> select_metrics(
    const std::vector<MetricsRecord>& records, const std::string& metric,
    const std::string& split) {
  std::vector<MetricsRecord> out;
  for (const auto& r : records)
    if (r.metric == metric && (split.empty() || r.split == split))
      out.push_back(r);
  return out;
}

}  // namespace ews
