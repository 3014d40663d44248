#include "cpshield/report.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpshield::eval {

namespace {

constexpr const char* kMagic = "cpshield-report v1";

constexpr std::array<const char*, 8> kMetricNames = {"accuracy", "tpr",  "fpr", "precision",
                                                     "f1",       "ap50", "ap70", "fps"};

std::array<std::optional<double>*, 8> metric_slots(MetricValues& v) {
  return {&v.accuracy, &v.tpr, &v.fpr, &v.precision, &v.f1, &v.ap50, &v.ap70, &v.fps};
}

std::array<const std::optional<double>*, 8> metric_slots(const MetricValues& v) {
  return {&v.accuracy, &v.tpr, &v.fpr, &v.precision, &v.f1, &v.ap50, &v.ap70, &v.fps};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_section(std::ostream& os, const std::string& name, const MetricValues& v) {
  auto slots = metric_slots(v);
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
    os << "metric " << name << " " << kMetricNames[i] << " ";
    if (slots[i]->has_value()) {
      os << fmt(**slots[i]);
    } else {
      os << "absent";
    }
    os << "\n";
  }
}

}  // namespace

std::string to_text(const MetricsReport& report) {
  std::ostringstream os;
  os << kMagic << "\n";
  os << "kind " << report.kind << "\n";
  os << "seed " << report.seed << "\n";
  os << "config_digest " << report.config_digest << "\n";
  emit_section(os, "overall", report.overall);
  for (const auto& [name, values] : report.sections) emit_section(os, name, values);
  for (const auto& [key, value] : report.notes) os << "note " << key << " " << value << "\n";
  return os.str();
}

MetricsReport from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    throw std::runtime_error("report: bad magic/version line");
  }
  MetricsReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> report.kind;
    } else if (tag == "seed") {
      ls >> report.seed;
    } else if (tag == "config_digest") {
      ls >> report.config_digest;
    } else if (tag == "metric") {
      std::string section, metric, value;
      ls >> section >> metric >> value;
      if (ls.fail()) throw std::runtime_error("report: malformed metric line '" + line + "'");
      MetricValues* target = nullptr;
      if (section == "overall") {
        target = &report.overall;
      } else {
        for (auto& [name, values] : report.sections) {
          if (name == section) target = &values;
        }
        if (!target) {
          report.sections.emplace_back(section, MetricValues{});
          target = &report.sections.back().second;
        }
      }
      auto slots = metric_slots(*target);
      bool known = false;
      for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
        if (metric != kMetricNames[i]) continue;
        known = true;
        if (value != "absent") *slots[i] = std::stod(value);
      }
      if (!known) throw std::runtime_error("report: unknown metric '" + metric + "'");
    } else if (tag == "note") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(value.begin());
      report.notes.emplace_back(key, value);
    } else {
      throw std::runtime_error("report: unknown line tag '" + tag + "'");
    }
  }
  return report;
}

void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
  os << to_text(report);
  if (!os) throw std::runtime_error("report: write failed for " + path);

  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[64];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  std::ofstream meta(path + ".meta", std::ios::binary);
  meta << "timestamp " << stamp << "\n";
}

MetricsReport read_report(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("report: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "section,metric,value\n";
  auto emit = [&os](const std::string& name, const MetricValues& v) {
    auto slots = metric_slots(v);
    for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
      os << name << "," << kMetricNames[i] << ",";
      if (slots[i]->has_value()) os << fmt(**slots[i]);
      os << "\n";
    }
  };
  emit("overall", report.overall);
  for (const auto& [name, values] : report.sections) emit(name, values);
  return os.str();
}

}  // namespace cpshield::eval
