#pragma once

// Subcommand dispatch for the `tepo` command-line tool.
//
//   tepo train <config> [--out DIR] [--format jsonl|csv] [--steps N] [--seed S]
//                       [--algorithm NAME] [--lr X]
//   tepo gradcheck [--trials N] [--seed S] [--out FILE]
//   tepo dynamics <config> [--steps N] [--out FILE]
//   tepo compare <config>... [--seeds 0,1,2] [--out DIR] [--format jsonl|csv]
//
// Exit codes: 0 success, 2 config or usage error, 3 verification failure,
// 4 I/O error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tepo/config.hpp"
#include "tepo/error.hpp"
#include "tepo/experiment.hpp"
#include "tepo/verify.hpp"

namespace tepo::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kVerificationFailure = 3, kIoError = 4 };

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algorithm;
  std::optional<double> learning_rate;
};

// Command-line flags win over config values.
inline void apply(const Overrides& o, ExperimentConfig& cfg) {
  if (o.out) cfg.output_dir = *o.out;
  if (o.format) cfg.format = parse_metrics_format(*o.format);
  if (o.steps) cfg.train.steps = *o.steps;
  if (o.seed) {
    cfg.train.seed = *o.seed;
    cfg.task.seed = *o.seed;
  }
  if (o.algorithm) cfg.train.algorithm = parse_algorithm(*o.algorithm);
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  cfg.train.validate();
}

inline int exit_code_for(const Error& e) {
  switch (e.category()) {
    case Error::Category::io: return kIoError;
    case Error::Category::verification: return kVerificationFailure;
    default: return kConfigError;
  }
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Critic-free policy optimization lab", "tepo"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Overrides train_flags;
  std::string train_config;
  auto* train = app.add_subcommand("train", "Run one training experiment from a config file");
  train->add_option("config", train_config, "Experiment config (JSON)")->required();
  train->add_option("--out", train_flags.out, "Output directory");
  train->add_option("--format", train_flags.format, "Metrics format: jsonl or csv");
  train->add_option("--steps", train_flags.steps, "Number of training steps");
  train->add_option("--seed", train_flags.seed, "Seed for training and task");
  train->add_option("--algorithm", train_flags.algorithm, "Objective preset");
  train->add_option("--lr", train_flags.learning_rate, "Learning rate");

  int trials = 100;
  std::uint64_t gradcheck_seed = 0;
  std::string gradcheck_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gradcheck->add_option("--trials", trials, "Random instances per check");
  gradcheck->add_option("--seed", gradcheck_seed, "Seed for the random instances");
  gradcheck->add_option("--out", gradcheck_out, "Write the JSON report here as well as to stdout");

  std::string dynamics_config;
  std::optional<int> dynamics_steps;
  std::string dynamics_out;
  auto* dynamics = app.add_subcommand("dynamics", "Entropy-change prediction and decomposition report");
  dynamics->add_option("config", dynamics_config, "Experiment config (JSON)")->required();
  dynamics->add_option("--steps", dynamics_steps, "Training steps to decompose (default: config steps)");
  dynamics->add_option("--out", dynamics_out, "Write the JSON report here as well as to stdout");

  std::vector<std::string> compare_configs;
  std::vector<std::uint64_t> compare_seeds;
  std::optional<std::string> compare_out;
  std::string compare_format = "csv";
  auto* compare = app.add_subcommand("compare", "Run several configs on one task with paired seeds");
  compare->add_option("configs", compare_configs, "Experiment configs, one per arm")->required();
  compare->add_option("--seeds", compare_seeds, "Seeds (default: the first config's seed)")->delimiter(',');
  compare->add_option("--out", compare_out, "Output directory");
  compare->add_option("--format", compare_format, "Merged table format: jsonl or csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kConfigError;
  }

  try {
    if (*train) {
      auto cfg = load_config(train_config);
      apply(train_flags, cfg);
      const auto artifacts = run_training(cfg);
      out << "wrote " << artifacts.records.size() << " records to " << artifacts.metrics_path << "\n";
      return kOk;
    }
    if (*gradcheck) {
      const auto report = run_gradcheck(trials, gradcheck_seed);
      const auto text = report.to_json().dump(2) + "\n";
      if (!gradcheck_out.empty()) write_text_file(gradcheck_out, text);
      out << text;
      return report.passed() ? kOk : kVerificationFailure;
    }
    if (*dynamics) {
      auto cfg = load_config(dynamics_config);
      if (dynamics_steps) cfg.train.steps = *dynamics_steps;
      cfg.train.validate();
      const auto report = run_dynamics(cfg.train, cfg.task);
      const auto text = report.to_json().dump(2) + "\n";
      if (!dynamics_out.empty()) write_text_file(dynamics_out, text);
      out << text;
      return report.passed() ? kOk : kVerificationFailure;
    }
    if (*compare) {
      std::vector<ExperimentConfig> arms;
      for (const auto& path : compare_configs) arms.push_back(load_config(path));
      if (compare_seeds.empty()) compare_seeds.push_back(arms.front().train.seed);
      const auto format = parse_metrics_format(compare_format);
      const std::string dir = compare_out.value_or(arms.front().output_dir);

      RunManifest manifest;
      {
        nlohmann::json all = nlohmann::json::array();
        for (const auto& a : arms) all.push_back(config_to_json(a));
        manifest.config_hash = fnv1a_hex(all.dump());
      }
      manifest.seed = compare_seeds.front();
      manifest.started_at = utc_timestamp();
      ensure_directory(dir);
      const auto runs = run_comparison(arms, compare_seeds);
      const auto table_path = (std::filesystem::path(dir) / ("compare." + to_string(format))).string();
      const auto summary_path = (std::filesystem::path(dir) / "summary.json").string();
      write_text_file(table_path, comparison_table(runs, format));
      const auto summary = comparison_summary(runs);
      write_text_file(summary_path, summary.dump(2) + "\n");
      manifest.finished_at = utc_timestamp();
      manifest.artifacts = {table_path, summary_path};
      write_manifest(dir, manifest);
      out << summary.dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}

}  // namespace tepo::cli
