#pragma once

// File-producing experiment drivers: a single training run and a paired
// multi-arm comparison.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tepo/config.hpp"
#include "tepo/metrics.hpp"
#include "tepo/trainer.hpp"

namespace tepo {

struct TrainArtifacts {
  std::string metrics_path;
  std::string checkpoint_path;
  std::string manifest_path;
  std::vector<MetricsRecord> records;
};

// Writes metrics.<format>, checkpoint.json and manifest.json into the
// configured output directory.
inline TrainArtifacts run_training(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  manifest.seed = cfg.train.seed;
  manifest.started_at = utc_timestamp();

  ensure_directory(cfg.output_dir);
  TrainArtifacts out;
  const fs::path dir(cfg.output_dir);
  out.metrics_path = (dir / ("metrics." + to_string(cfg.format))).string();
  out.checkpoint_path = (dir / "checkpoint.json").string();
  out.manifest_path = (dir / kManifestName).string();

  out.records = run_experiment(cfg.train, cfg.task, out.checkpoint_path);
  emit_metrics(out.records, cfg.format, out.metrics_path);

  manifest.finished_at = utc_timestamp();
  manifest.artifacts = {out.metrics_path, out.checkpoint_path};
  write_manifest(cfg.output_dir, manifest);
  return out;
}

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;

  double final_reward() const { return records.empty() ? 0.0 : records.back().mean_reward; }

  double mean_clip_ratio() const {
    if (records.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : records) s += r.clip_ratio;
    return s / records.size();
  }
};

// Arm labels: the algorithm name, suffixed with the arm index when two arms
// share an algorithm.
inline std::vector<std::string> arm_labels(const std::vector<ExperimentConfig>& arms) {
  std::map<std::string, int> count;
  for (const auto& a : arms) ++count[to_string(a.train.algorithm)];
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const auto name = to_string(arms[i].train.algorithm);
    labels.push_back(count[name] > 1 ? name + "_" + std::to_string(i) : name);
  }
  return labels;
}

// Runs every arm under every seed. Within a seed all arms share the task and
// the prompt stream (both derive from the seed alone).
inline std::vector<ArmRun> run_comparison(const std::vector<ExperimentConfig>& arms,
                                          const std::vector<std::uint64_t>& seeds) {
  if (arms.empty()) throw ConfigError("compare needs at least one config");
  const auto& t0 = arms.front().task;
  for (const auto& a : arms)
    if (a.task.vocab_size != t0.vocab_size || a.task.answer_length != t0.answer_length ||
        a.task.num_prompts != t0.num_prompts || a.task.seed != t0.seed ||
        a.train.seed != arms.front().train.seed || a.train.prompts_per_batch != arms.front().train.prompts_per_batch)
      throw ConfigError("compare arms must share the task, seed and prompts_per_batch");
  const auto labels = arm_labels(arms);
  std::vector<ArmRun> runs;
  for (std::uint64_t seed : seeds)
    for (std::size_t i = 0; i < arms.size(); ++i) {
      TrainConfig train = arms[i].train;
      TaskSpec task = arms[i].task;
      train.seed = seed;
      task.seed = seed;
      runs.push_back({labels[i], seed, run_experiment(train, task)});
    }
  return runs;
}

inline std::string comparison_table(const std::vector<ArmRun>& runs, MetricsFormat format) {
  std::string out;
  if (format == MetricsFormat::csv) out += metrics_csv_header({{"arm", ""}, {"seed", ""}}) + "\n";
  for (const auto& run : runs) {
    const LabelColumns labels{{"arm", run.arm}, {"seed", std::to_string(run.seed)}};
    for (const auto& r : run.records)
      out += (format == MetricsFormat::csv ? metrics_csv_row(r, labels) : metrics_jsonl_line(r, labels)) + "\n";
  }
  return out;
}

inline nlohmann::json comparison_summary(const std::vector<ArmRun>& runs) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& run : runs)
    rows.push_back({{"arm", run.arm},
                    {"seed", run.seed},
                    {"final_mean_reward", run.final_reward()},
                    {"mean_clip_ratio", run.mean_clip_ratio()}});
  return rows;
}

}  // namespace tepo
