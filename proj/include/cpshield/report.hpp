#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cpshield::eval {

struct MetricValues {
  std::optional<double> accuracy, tpr, fpr, precision, f1, ap50, ap70, fps;
};

/// The structured result of one CLI run. Serialization is deterministic and
/// lossless; wall-clock metadata lives in a sidecar file so reports from
/// identical config+seed runs compare byte-for-byte.
struct MetricsReport {
  std::string kind;
  std::uint64_t seed = 0;
  std::string config_digest;
  MetricValues overall;
  std::vector<std::pair<std::string, MetricValues>> sections;  // e.g. per-attack rows
  std::vector<std::pair<std::string, std::string>> notes;      // deterministic extras
};

std::string to_text(const MetricsReport& report);
MetricsReport from_text(const std::string& text);  // throws on malformed input

/// report text to `path`, timestamp to `path.meta`.
void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);

/// "section,metric,value" rows; absent metrics keep an empty value cell.
std::string to_csv(const MetricsReport& report);

}  // namespace cpshield::eval
