#pragma once

// Experiment configuration files and run manifests.
//
// A config is a JSON object. Every key is optional; unknown keys anywhere
// are rejected.
//
//   {
//     "algorithm": "tepo",
//     "group_size": 8, "prompts_per_batch": 16, "updates_per_rollout": 8,
//     "mini_batch_groups": 0, "learning_rate": 1.0, "steps": 500,
//     "seed": 0, "std_floor": 1e-8,
//     "clip": {"eps_low": 0.2, "eps_high": 0.2},
//     "regularizers": {"entropy_coef": 0.0, "kl_coef": 0.0},
//     "task": {"kind": "mod_sum", "vocab_size": 10, "answer_length": 2,
//              "num_prompts": 16, "seed": 0},
//     "output": {"dir": "runs/tepo", "format": "jsonl"}
//   }
//
// task.seed defaults to the top-level seed.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tepo/env.hpp"
#include "tepo/error.hpp"
#include "tepo/metrics.hpp"
#include "tepo/trainer.hpp"

namespace tepo {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "TEPO_OUTPUT_DIR";

struct ExperimentConfig {
  TrainConfig train;
  TaskSpec task;
  std::string output_dir;
  MetricsFormat format = MetricsFormat::jsonl;
};

inline std::string default_output_dir() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "runs";
}

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <class T>
void read_if(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& doc) {
  using detail::read_if;
  detail::reject_unknown(doc,
                         {"algorithm", "group_size", "prompts_per_batch", "updates_per_rollout",
                          "mini_batch_groups", "learning_rate", "steps", "seed", "std_floor", "clip",
                          "regularizers", "task", "output"},
                         "");
  ExperimentConfig cfg;
  auto& t = cfg.train;
  std::string algorithm = to_string(t.algorithm);
  read_if(doc, "algorithm", algorithm, "");
  t.algorithm = parse_algorithm(algorithm);
  read_if(doc, "group_size", t.group_size, "");
  read_if(doc, "prompts_per_batch", t.prompts_per_batch, "");
  read_if(doc, "updates_per_rollout", t.updates_per_rollout, "");
  read_if(doc, "mini_batch_groups", t.mini_batch_groups, "");
  read_if(doc, "learning_rate", t.learning_rate, "");
  read_if(doc, "steps", t.steps, "");
  read_if(doc, "seed", t.seed, "");
  read_if(doc, "std_floor", t.std_floor, "");

  if (doc.contains("clip")) {
    const auto& c = doc.at("clip");
    detail::reject_unknown(c, {"eps_low", "eps_high"}, "clip.");
    ClipConfig clip = default_clip(t.algorithm);
    read_if(c, "eps_low", clip.eps_low, "clip.");
    read_if(c, "eps_high", clip.eps_high, "clip.");
    t.clip = clip;
  }
  if (doc.contains("regularizers")) {
    const auto& r = doc.at("regularizers");
    detail::reject_unknown(r, {"entropy_coef", "kl_coef"}, "regularizers.");
    if (r.contains("entropy_coef")) {
      double v = 0.0;
      read_if(r, "entropy_coef", v, "regularizers.");
      t.entropy_coef = v;
    }
    if (r.contains("kl_coef")) {
      double v = 0.0;
      read_if(r, "kl_coef", v, "regularizers.");
      t.kl_coef = v;
    }
  }

  cfg.task.seed = t.seed;
  if (doc.contains("task")) {
    const auto& k = doc.at("task");
    detail::reject_unknown(k, {"kind", "vocab_size", "answer_length", "num_prompts", "seed"}, "task.");
    std::string kind = "mod_sum";
    read_if(k, "kind", kind, "task.");
    if (kind != "mod_sum") throw ConfigError("unknown task kind '" + kind + "'");
    read_if(k, "vocab_size", cfg.task.vocab_size, "task.");
    read_if(k, "answer_length", cfg.task.answer_length, "task.");
    read_if(k, "num_prompts", cfg.task.num_prompts, "task.");
    read_if(k, "seed", cfg.task.seed, "task.");
  }

  cfg.output_dir = default_output_dir();
  if (doc.contains("output")) {
    const auto& o = doc.at("output");
    detail::reject_unknown(o, {"dir", "format"}, "output.");
    read_if(o, "dir", cfg.output_dir, "output.");
    std::string format = "jsonl";
    read_if(o, "format", format, "output.");
    cfg.format = parse_metrics_format(format);
  }

  t.validate();
  try {
    cfg.task.validate();
    if (static_cast<std::uint64_t>(cfg.task.num_prompts) >
        static_cast<std::uint64_t>(cfg.task.vocab_size) * cfg.task.vocab_size)
      throw DomainError("task.num_prompts exceeds vocab_size^2");
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file: " + path);
  }
  try {
    return parse_config_text(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// The effective configuration, with presets resolved.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  const auto& t = cfg.train;
  const auto clip = t.effective_clip();
  return {
      {"algorithm", to_string(t.algorithm)},
      {"group_size", t.group_size},
      {"prompts_per_batch", t.prompts_per_batch},
      {"updates_per_rollout", t.updates_per_rollout},
      {"mini_batch_groups", t.mini_batch_groups},
      {"learning_rate", t.learning_rate},
      {"steps", t.steps},
      {"seed", t.seed},
      {"std_floor", t.std_floor},
      {"clip", {{"eps_low", clip.eps_low}, {"eps_high", clip.eps_high}}},
      {"regularizers",
       {{"entropy_coef", t.effective_entropy_coef()}, {"kl_coef", t.effective_kl_coef()}}},
      {"task",
       {{"kind", "mod_sum"},
        {"vocab_size", cfg.task.vocab_size},
        {"answer_length", cfg.task.answer_length},
        {"num_prompts", cfg.task.num_prompts},
        {"seed", cfg.task.seed}}},
      {"output", {{"dir", cfg.output_dir}, {"format", to_string(cfg.format)}}},
  };
}

// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(config_to_json(cfg).dump()); }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
  std::string version = kVersion;

  nlohmann::json to_json() const {
    return {{"config_hash", config_hash}, {"seed", seed},         {"started_at", started_at},
            {"finished_at", finished_at}, {"artifacts", artifacts}, {"version", version}};
  }
};

inline constexpr const char* kManifestName = "manifest.json";

inline void write_manifest(const std::string& dir, const RunManifest& m) {
  write_text_file((std::filesystem::path(dir) / kManifestName).string(), m.to_json().dump(2) + "\n");
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

}  // namespace tepo
