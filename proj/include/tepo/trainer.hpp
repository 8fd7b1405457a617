#pragma once

// Critic-free training loop: sample a group of responses per prompt from a
// frozen snapshot, drop all-correct / all-wrong groups, normalize rewards
// within each group, then take several ascent steps on the chosen surrogate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tepo/advantage.hpp"
#include "tepo/dynamics.hpp"
#include "tepo/env.hpp"
#include "tepo/error.hpp"
#include "tepo/objective.hpp"
#include "tepo/policy.hpp"

namespace tepo {

enum class Algorithm { tepo, grpo, clip_higher, prefix_is, reinforce_is, tepo_maxent, tepo_kl };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::tepo,        Algorithm::grpo,
                                               Algorithm::clip_higher, Algorithm::prefix_is,
                                               Algorithm::reinforce_is, Algorithm::tepo_maxent,
                                               Algorithm::tepo_kl};

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::tepo: return "tepo";
    case Algorithm::grpo: return "grpo";
    case Algorithm::clip_higher: return "clip_higher";
    case Algorithm::prefix_is: return "prefix_is";
    case Algorithm::reinforce_is: return "reinforce_is";
    case Algorithm::tepo_maxent: return "tepo_maxent";
    case Algorithm::tepo_kl: return "tepo_kl";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : kAllAlgorithms)
    if (to_string(a) == name) return a;
  throw ConfigError("unknown algorithm '" + name + "'");
}

inline ISVariant is_variant(Algorithm a) {
  switch (a) {
    case Algorithm::grpo:
    case Algorithm::clip_higher: return ISVariant::token_level;
    case Algorithm::prefix_is: return ISVariant::prefix_geomean;
    case Algorithm::reinforce_is: return ISVariant::reinforce_stopgrad;
    default: return ISVariant::sequence_geomean;
  }
}

// Clip-Higher widens only the upper bound.
inline ClipConfig default_clip(Algorithm a) {
  if (a == Algorithm::clip_higher) return {0.2, 0.28};
  return {0.2, 0.2};
}

inline constexpr double kDefaultRegularizerCoef = 0.01;

struct TrainConfig {
  Algorithm algorithm = Algorithm::tepo;
  int group_size = 8;
  int prompts_per_batch = 16;
  int updates_per_rollout = 8;
  // Groups per mini-batch within one update pass; 0 uses every retained
  // group at once.
  int mini_batch_groups = 0;
  double learning_rate = 1.0;
  std::optional<ClipConfig> clip;       // unset: algorithm preset
  std::optional<double> entropy_coef;   // unset: 0, or the preset for tepo_maxent
  std::optional<double> kl_coef;        // unset: 0, or the preset for tepo_kl
  int steps = 500;
  std::uint64_t seed = 0;
  double std_floor = kDefaultStdFloor;

  ClipConfig effective_clip() const { return clip.value_or(default_clip(algorithm)); }

  double effective_entropy_coef() const {
    return entropy_coef.value_or(algorithm == Algorithm::tepo_maxent ? kDefaultRegularizerCoef : 0.0);
  }

  double effective_kl_coef() const {
    return kl_coef.value_or(algorithm == Algorithm::tepo_kl ? kDefaultRegularizerCoef : 0.0);
  }

  void validate() const {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (prompts_per_batch < 1) throw ConfigError("prompts_per_batch must be >= 1");
    if (updates_per_rollout < 1) throw ConfigError("updates_per_rollout must be >= 1");
    if (mini_batch_groups < 0) throw ConfigError("mini_batch_groups must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(std_floor > 0.0)) throw ConfigError("std_floor must be positive");
    try {
      effective_clip().validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (!(effective_entropy_coef() >= 0.0)) throw ConfigError("entropy_coef must be >= 0");
    if (!(effective_kl_coef() >= 0.0)) throw ConfigError("kl_coef must be >= 0");
  }
};

struct MetricsRecord {
  int step = 0;
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double grad_norm = 0.0;
  double clip_ratio = 0.0;
  double mean_is = 1.0;
  double kl_to_reference = 0.0;
  int groups_retained = 0;
  // 1 when mean_entropy and kl_to_reference are exact expectations under the
  // enumerated state distribution, 0 when they average the visited contexts.
  int entropy_exact = 0;

  bool operator==(const MetricsRecord&) const = default;
};

struct TrainerState {
  TaskSpec task;
  TrainConfig config;
  std::vector<Prompt> prompts;
  LogitTable policy;
  LogitTable reference;  // the initial policy
  int step = 0;
  std::size_t enumeration_budget = kDefaultEnumerationBudget;

  TrainerState(TaskSpec t, TrainConfig c, std::optional<LogitTable> initial = std::nullopt)
      : task(t),
        config(c),
        prompts(generate_prompts(t)),
        policy(initial.value_or(LogitTable(Vocab(t.vocab_size)))),
        reference(policy) {
    config.validate();
    if (policy.vocab_size() != task.vocab_size)
      throw ConfigError("initial policy vocabulary does not match the task");
  }
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t step, std::uint64_t purpose,
                              std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(purpose),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Prompts for one step. Depends only on (seed, step), so runs that differ
// only in algorithm see the same prompt stream.
inline std::vector<Prompt> select_prompts(const std::vector<Prompt>& prompts, int count,
                                          std::uint64_t seed, int step) {
  auto rng = detail::stream(seed, static_cast<std::uint64_t>(step), 0);
  std::vector<Prompt> out;
  if (static_cast<std::size_t>(count) <= prompts.size()) {
    std::vector<std::size_t> idx(prompts.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(prompts[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, prompts.size() - 1);
    for (int i = 0; i < count; ++i) out.push_back(prompts[pick(rng)]);
  }
  return out;
}

// Samples group_size responses per prompt from the snapshot. Each group has
// its own seeded stream.
inline std::vector<Group> rollout_groups(const LogitTable& snapshot, const TaskSpec& task,
                                         std::span<const Prompt> prompts, int group_size,
                                         std::uint64_t seed, int step) {
  std::vector<Group> groups;
  groups.reserve(prompts.size());
  for (std::size_t g = 0; g < prompts.size(); ++g) {
    auto rng = detail::stream(seed, static_cast<std::uint64_t>(step), 1, g);
    Group group;
    group.prompt_id = prompts[g].prompt_id;
    for (int k = 0; k < group_size; ++k) {
      auto seq = sample_sequence(snapshot, prompts[g].prompt_id, task.answer_length, rng);
      group.rewards.push_back(evaluate_reward(task, prompts[g], seq.tokens));
      group.responses.push_back(std::move(seq.tokens));
      group.old_logprobs.push_back(std::move(seq.logprobs));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

// One sequence per response, with group-normalized advantages broadcast to
// every token. new_logprobs start equal to the old ones.
inline RolloutBatch build_batch(std::span<const Group> groups, double std_floor) {
  RolloutBatch batch;
  for (const auto& g : groups) {
    const auto adv = group_advantage(g.rewards, std_floor);
    for (std::size_t k = 0; k < g.size(); ++k) {
      SequenceRollout s;
      s.tokens = g.responses[k];
      s.old_logprobs = g.old_logprobs[k];
      s.new_logprobs = s.old_logprobs;
      s.mask.assign(s.tokens.size(), 1);
      Context ctx{g.prompt_id, {}};
      for (Token tok : s.tokens) {
        s.contexts.push_back(ctx);
        ctx.prefix.push_back(tok);
      }
      const std::vector<std::vector<int>> masks{s.mask};
      s.advantage = broadcast(std::span<const double>(&adv[k], 1), masks).front();
      batch.sequences.push_back(std::move(s));
    }
  }
  return batch;
}

inline std::vector<Context> masked_contexts(const RolloutBatch& batch) {
  std::vector<Context> out;
  for (const auto& s : batch.sequences)
    for (std::size_t t = 0; t < s.length(); ++t)
      if (s.mask[t]) out.push_back(s.contexts[t]);
  return out;
}

struct UpdateResult {
  LossReport report;
  ParamGradient ascent;
};

// Full ascent direction for one mini-batch: surrogate + entropy bonus - KL.
inline UpdateResult objective_gradient(const LogitTable& policy, const RolloutBatch& batch,
                                       const TrainConfig& config, const LogitTable& reference) {
  UpdateResult out;
  out.report = clipped_token_mean_loss(policy, batch, is_variant(config.algorithm), config.effective_clip());
  out.ascent = out.report.param_gradient;
  const auto contexts = masked_contexts(batch);
  if (const double c = config.effective_entropy_coef(); c > 0.0) {
    const auto bonus = entropy_bonus_term(policy, contexts, c);
    accumulate(out.ascent, bonus.gradient);
    out.report.diagnostics["entropy_bonus"] = bonus.value;
  }
  if (const double c = config.effective_kl_coef(); c > 0.0) {
    const auto penalty = kl_penalty_term(policy, reference, contexts, c);
    accumulate(out.ascent, penalty.gradient, -1.0);
    out.report.diagnostics["kl_penalty"] = penalty.value;
  }
  return out;
}

namespace detail {

// Expected entropy and KL to the reference of the given policy, exact when
// the task is small enough to enumerate.
inline void policy_statistics(const TrainerState& state, const LogitTable& policy,
                              std::span<const Group> groups, MetricsRecord& rec) {
  if (context_count(state.task) <= state.enumeration_budget) {
    const auto d = state_distribution(policy, state.task, state.enumeration_budget);
    double h = 0.0, kl = 0.0;
    for (const auto& [ctx, w] : d.weights) {
      const auto p = softmax_distribution(policy, ctx);
      h += w * entropy(p);
      kl += w * kl_divergence(p, softmax_distribution(state.reference, ctx));
    }
    rec.mean_entropy = h;
    rec.kl_to_reference = kl;
    rec.entropy_exact = 1;
    return;
  }
  double h = 0.0, kl = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups)
    for (const auto& response : g.responses) {
      Context ctx{g.prompt_id, {}};
      for (Token tok : response) {
        const auto p = softmax_distribution(policy, ctx);
        h += entropy(p);
        kl += kl_divergence(p, softmax_distribution(state.reference, ctx));
        ++n;
        ctx.prefix.push_back(tok);
      }
    }
  rec.mean_entropy = n ? h / n : 0.0;
  rec.kl_to_reference = n ? kl / n : 0.0;
  rec.entropy_exact = 0;
}

}  // namespace detail

// One rollout phase followed by updates_per_rollout passes over the
// retained groups. Reward, entropy and KL describe the snapshot that
// generated the rollouts; grad_norm, clip_ratio and mean_is come from the
// final inner update.
inline MetricsRecord train_step(TrainerState& state) {
  const auto& cfg = state.config;
  MetricsRecord rec;
  rec.step = state.step;

  const LogitTable snapshot = state.policy;
  const auto prompts = select_prompts(state.prompts, cfg.prompts_per_batch, cfg.seed, state.step);
  const auto groups = rollout_groups(snapshot, state.task, prompts, cfg.group_size, cfg.seed, state.step);

  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  for (const auto& g : groups)
    for (double r : g.rewards) {
      reward_sum += r;
      ++reward_count;
    }
  rec.mean_reward = reward_sum / static_cast<double>(reward_count);
  detail::policy_statistics(state, snapshot, groups, rec);

  const auto retained = filter_groups(groups);
  rec.groups_retained = static_cast<int>(retained.size());
  ++state.step;
  if (retained.empty()) return rec;

  const std::size_t chunk = cfg.mini_batch_groups > 0 ? static_cast<std::size_t>(cfg.mini_batch_groups)
                                                      : retained.size();
  std::vector<RolloutBatch> mini_batches;
  for (std::size_t begin = 0; begin < retained.size(); begin += chunk) {
    const auto end = std::min(begin + chunk, retained.size());
    mini_batches.push_back(build_batch(std::span<const Group>(retained).subspan(begin, end - begin),
                                       cfg.std_floor));
  }

  for (int u = 0; u < cfg.updates_per_rollout; ++u) {
    for (auto& batch : mini_batches) {
      refresh_new_logprobs(batch, state.policy);
      const auto update = objective_gradient(state.policy, batch, cfg, state.reference);
      apply_ascent(state.policy, update.ascent, cfg.learning_rate);
      rec.grad_norm = l2_norm(update.ascent);
      rec.clip_ratio = update.report.clip_ratio;
      rec.mean_is = update.report.mean_is;
    }
  }
  return rec;
}

// Runs config.steps training steps; writes the final policy to
// checkpoint_path when one is given.
inline std::vector<MetricsRecord> run_experiment(const TrainConfig& config, const TaskSpec& task,
                                                 const std::string& checkpoint_path = {}) {
  TrainerState state(task, config);
  std::vector<MetricsRecord> records;
  records.reserve(config.steps);
  for (int s = 0; s < config.steps; ++s) records.push_back(train_step(state));
  if (!checkpoint_path.empty()) save_checkpoint(state.policy, checkpoint_path);
  return records;
}

}  // namespace tepo
