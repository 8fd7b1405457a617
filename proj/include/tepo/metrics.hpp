#pragma once

// Metric stream serialization. Both formats use the MetricsRecord field
// names in declaration order and 17 significant digits.

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tepo/error.hpp"
#include "tepo/trainer.hpp"

namespace tepo {

enum class MetricsFormat { jsonl, csv };

inline MetricsFormat parse_metrics_format(const std::string& s) {
  if (s == "jsonl") return MetricsFormat::jsonl;
  if (s == "csv") return MetricsFormat::csv;
  throw ConfigError("unknown metrics format '" + s + "' (expected jsonl or csv)");
}

inline std::string to_string(MetricsFormat f) { return f == MetricsFormat::jsonl ? "jsonl" : "csv"; }

inline const std::vector<std::string>& metrics_field_names() {
  static const std::vector<std::string> names{"step",       "mean_reward",   "mean_entropy",
                                              "grad_norm",  "clip_ratio",    "mean_is",
                                              "kl_to_reference", "groups_retained", "entropy_exact"};
  return names;
}

// Field values rendered as text, in metrics_field_names() order.
inline std::vector<std::string> metrics_field_values(const MetricsRecord& r) {
  return {std::to_string(r.step),       format_real(r.mean_reward), format_real(r.mean_entropy),
          format_real(r.grad_norm),     format_real(r.clip_ratio),  format_real(r.mean_is),
          format_real(r.kl_to_reference), std::to_string(r.groups_retained),
          std::to_string(r.entropy_exact)};
}

// Extra leading columns (e.g. arm and seed in a comparison table).
using LabelColumns = std::vector<std::pair<std::string, std::string>>;

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

inline std::string metrics_jsonl_line(const MetricsRecord& r, const LabelColumns& labels = {}) {
  const auto& names = metrics_field_names();
  const auto values = metrics_field_values(r);
  std::string line = "{";
  bool first = true;
  for (const auto& [k, v] : labels) {
    line += (first ? "" : ",") + json_string(k) + ":" + json_string(v);
    first = false;
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    line += (first ? "" : ",") + json_string(names[i]) + ":" + values[i];
    first = false;
  }
  return line + "}";
}

inline std::string metrics_csv_header(const LabelColumns& labels = {}) {
  std::string line;
  for (const auto& [k, v] : labels) line += k + ",";
  const auto& names = metrics_field_names();
  for (std::size_t i = 0; i < names.size(); ++i) line += (i ? "," : "") + names[i];
  return line;
}

inline std::string metrics_csv_row(const MetricsRecord& r, const LabelColumns& labels = {}) {
  std::string line;
  for (const auto& [k, v] : labels) line += v + ",";
  const auto values = metrics_field_values(r);
  for (std::size_t i = 0; i < values.size(); ++i) line += (i ? "," : "") + values[i];
  return line;
}

inline std::string metrics_text(const std::vector<MetricsRecord>& records, MetricsFormat format) {
  std::string out;
  if (format == MetricsFormat::csv) out += metrics_csv_header() + "\n";
  for (const auto& r : records)
    out += (format == MetricsFormat::csv ? metrics_csv_row(r) : metrics_jsonl_line(r)) + "\n";
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("failed writing: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void emit_metrics(const std::vector<MetricsRecord>& records, MetricsFormat format,
                         const std::string& path) {
  write_text_file(path, metrics_text(records, format));
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.step = j.at("step").get<int>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.mean_entropy = j.at("mean_entropy").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.clip_ratio = j.at("clip_ratio").get<double>();
  r.mean_is = j.at("mean_is").get<double>();
  r.kl_to_reference = j.at("kl_to_reference").get<double>();
  r.groups_retained = j.at("groups_retained").get<int>();
  r.entropy_exact = j.at("entropy_exact").get<int>();
  return r;
}

inline std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace tepo
