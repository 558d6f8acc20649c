#pragma once

#include <string>
#include <vector>

namespace ews {

// One evaluation or logging event. Serialized as a single line with fixed
// field order:
//   run=<id> step=<n> split=<name> metric=<name> variant=<id> severity=<s>
//   value=<v>
// `variant` carries the corruption kind or attack id; "-" when not
// applicable, severity 0 likewise.
struct MetricsRecord {
  std::string run;
  long long step = 0;
  std::string split;    // train | val | test
  std::string metric;   // clean_error | corruption_error | robust_error | ...
  std::string variant = "-";
  int severity = 0;
  double value = 0.0;
};

std::string record_to_line(const MetricsRecord& r);
MetricsRecord record_from_line(const std::string& line);

void append_metrics(const std::string& path,
                    const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics(const std::string& path);

// Convenience filter: records with the given metric name (and, when
// non-empty, split).
std::vector<MetricsRecord> select_metrics(
    const std::vector<MetricsRecord>& records, const std::string& metric,
    const std::string& split = "");

}  // namespace ews
