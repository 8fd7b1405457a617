#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tepo/trainer.hpp"

using namespace tepo;

namespace {

TrainConfig small_config(Algorithm algorithm = Algorithm::tepo) {
  TrainConfig c;
  c.algorithm = algorithm;
  c.group_size = 4;
  c.prompts_per_batch = 4;
  c.updates_per_rollout = 2;
  c.steps = 5;
  c.seed = 3;
  return c;
}

const TaskSpec kSmallTask{4, 2, 6};

// A policy that puts all of its mass on the canonical answer of every prompt.
LogitTable oracle_policy(const TaskSpec& task) {
  LogitTable t{Vocab(task.vocab_size)};
  for (const auto& p : generate_prompts(task)) {
    Context ctx{p.prompt_id, {}};
    for (Token tok : canonical_answer(task, p)) {
      std::vector<double> row(task.vocab_size, 0.0);
      row[tok] = 60.0;
      t.set(ctx, row);
      ctx.prefix.push_back(tok);
    }
  }
  return t;
}

}  // namespace

TEST(Algorithms, NamesRoundTrip) {
  for (Algorithm a : kAllAlgorithms) EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_THROW(parse_algorithm("ppo"), ConfigError);
  EXPECT_EQ(is_variant(Algorithm::tepo), ISVariant::sequence_geomean);
  EXPECT_EQ(is_variant(Algorithm::grpo), ISVariant::token_level);
  EXPECT_EQ(is_variant(Algorithm::clip_higher), ISVariant::token_level);
  EXPECT_EQ(is_variant(Algorithm::prefix_is), ISVariant::prefix_geomean);
  EXPECT_EQ(default_clip(Algorithm::clip_higher).eps_high, 0.28);
  EXPECT_EQ(default_clip(Algorithm::grpo).eps_high, 0.2);
}

TEST(TrainConfig, EffectiveValuesAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.effective_entropy_coef(), 0.0);
  EXPECT_EQ(c.effective_kl_coef(), 0.0);
  c.algorithm = Algorithm::tepo_maxent;
  EXPECT_EQ(c.effective_entropy_coef(), kDefaultRegularizerCoef);
  c.entropy_coef = 0.5;
  EXPECT_EQ(c.effective_entropy_coef(), 0.5);
  c.algorithm = Algorithm::tepo_kl;
  EXPECT_EQ(c.effective_kl_coef(), kDefaultRegularizerCoef);
  EXPECT_NO_THROW(c.validate());

  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    EXPECT_THROW(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.group_size = 1; });
  bad([](TrainConfig& t) { t.prompts_per_batch = 0; });
  bad([](TrainConfig& t) { t.updates_per_rollout = 0; });
  bad([](TrainConfig& t) { t.mini_batch_groups = -1; });
  bad([](TrainConfig& t) { t.learning_rate = 0.0; });
  bad([](TrainConfig& t) { t.steps = -1; });
  bad([](TrainConfig& t) { t.std_floor = 0.0; });
  bad([](TrainConfig& t) { t.clip = ClipConfig{0.2, -0.1}; });
  bad([](TrainConfig& t) { t.entropy_coef = -1.0; });
  bad([](TrainConfig& t) { t.kl_coef = -1.0; });
}

TEST(SelectPrompts, DeterministicAndDistinct) {
  const auto prompts = generate_prompts(TaskSpec{10, 2, 16});
  const auto a = select_prompts(prompts, 8, 5, 3);
  const auto b = select_prompts(prompts, 8, 5, 3);
  std::set<int> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_id, b[i].prompt_id);
    ids.insert(a[i].prompt_id);
  }
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_EQ(select_prompts(prompts, 40, 5, 3).size(), 40u);
}

TEST(Rollout, ShapesAndDeterminism) {
  const TaskSpec task{10, 3, 5};
  const auto prompts = generate_prompts(task);
  const LogitTable uniform{Vocab(10)};
  const auto g1 = rollout_groups(uniform, task, prompts, 6, 11, 0);
  const auto g2 = rollout_groups(uniform, task, prompts, 6, 11, 0);
  ASSERT_EQ(g1.size(), 5u);
  for (std::size_t g = 0; g < g1.size(); ++g) {
    EXPECT_EQ(g1[g].prompt_id, prompts[g].prompt_id);
    ASSERT_EQ(g1[g].size(), 6u);
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_EQ(g1[g].responses[k].size(), 3u);
      EXPECT_EQ(g1[g].old_logprobs[k].size(), 3u);
      for (double lp : g1[g].old_logprobs[k]) EXPECT_NEAR(lp, -std::log(10.0), 1e-12);
      EXPECT_EQ(g1[g].responses[k], g2[g].responses[k]);
    }
  }
  const auto other = rollout_groups(uniform, task, prompts, 6, 11, 1);
  bool differs = false;
  for (std::size_t g = 0; g < g1.size(); ++g) differs |= g1[g].responses != other[g].responses;
  EXPECT_TRUE(differs);
}

TEST(Rollout, OneHotPolicyGivesIdenticalResponses) {
  const auto policy = oracle_policy(kSmallTask);
  const auto prompts = generate_prompts(kSmallTask);
  const auto groups = rollout_groups(policy, kSmallTask, prompts, 5, 0, 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& r : groups[g].responses) EXPECT_EQ(r, canonical_answer(kSmallTask, prompts[g]));
    for (double r : groups[g].rewards) EXPECT_EQ(r, 1.0);
  }
  EXPECT_TRUE(filter_groups(groups).empty());
}

TEST(BuildBatch, BroadcastsGroupAdvantage) {
  Group g;
  g.prompt_id = 2;
  g.responses = {{1, 0}, {3, 3}};
  g.old_logprobs = {{-1.0, -2.0}, {-0.5, -0.25}};
  g.rewards = {1.0, 0.0};
  const std::vector<Group> groups{g};
  const auto batch = build_batch(groups, kDefaultStdFloor);
  ASSERT_EQ(batch.sequences.size(), 2u);
  EXPECT_EQ(batch.sequences[0].advantage, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(batch.sequences[1].advantage, (std::vector<double>{-1.0, -1.0}));
  EXPECT_EQ(batch.sequences[0].contexts[1], (Context{2, {1}}));
  EXPECT_EQ(batch.sequences[1].new_logprobs, batch.sequences[1].old_logprobs);
  EXPECT_EQ(batch.total_mask(), 4.0);
}

TEST(TrainStep, AllCorrectGroupsCauseNoUpdate) {
  TrainerState state(kSmallTask, small_config(), oracle_policy(kSmallTask));
  const auto before = state.policy;
  const auto rec = train_step(state);
  EXPECT_EQ(rec.groups_retained, 0);
  EXPECT_EQ(rec.mean_reward, 1.0);
  EXPECT_EQ(rec.grad_norm, 0.0);
  EXPECT_EQ(state.policy, before);
  EXPECT_EQ(state.step, 1);
}

TEST(TrainStep, FirstUpdateIsOnPolicy) {
  auto cfg = small_config();
  cfg.updates_per_rollout = 1;
  cfg.prompts_per_batch = 6;
  cfg.group_size = 16;
  for (Algorithm a : kAllAlgorithms) {
    cfg.algorithm = a;
    TrainerState state(kSmallTask, cfg);
    const auto rec = train_step(state);
    EXPECT_EQ(rec.step, 0);
    EXPECT_GT(rec.groups_retained, 0) << to_string(a);
    EXPECT_NEAR(rec.mean_is, 1.0, 1e-12) << to_string(a);
    EXPECT_EQ(rec.clip_ratio, 0.0) << to_string(a);
    EXPECT_GT(rec.grad_norm, 0.0) << to_string(a);
    EXPECT_EQ(rec.kl_to_reference, 0.0);
    EXPECT_EQ(rec.entropy_exact, 1);
    EXPECT_NEAR(rec.mean_entropy, std::log(4.0), 1e-12);
    EXPECT_FALSE(state.policy == state.reference);
  }
}

TEST(TrainStep, LaterStepsMoveAwayFromReference) {
  auto cfg = small_config();
  cfg.group_size = 16;
  cfg.prompts_per_batch = 6;
  TrainerState state(kSmallTask, cfg);
  ASSERT_GT(train_step(state).groups_retained, 0);
  const auto rec = train_step(state);
  EXPECT_EQ(rec.step, 1);
  EXPECT_GT(rec.kl_to_reference, 0.0);
  EXPECT_LT(rec.mean_entropy, std::log(4.0));
}

TEST(TrainStep, LargeTaskUsesVisitedContexts) {
  TaskSpec task{10, 6, 4};
  auto cfg = small_config();
  TrainerState state(task, cfg);
  const auto rec = train_step(state);
  EXPECT_EQ(rec.entropy_exact, 0);
  EXPECT_NEAR(rec.mean_entropy, std::log(10.0), 1e-12);
}

TEST(ObjectiveGradient, RegularizersAddTheirTerms) {
  TrainerState state(kSmallTask, small_config());
  const auto prompts = select_prompts(state.prompts, 6, 0, 0);
  const auto groups = filter_groups(rollout_groups(state.policy, kSmallTask, prompts, 16, 0, 0));
  ASSERT_FALSE(groups.empty());
  const auto batch = build_batch(groups, kDefaultStdFloor);

  auto cfg = small_config(Algorithm::tepo_maxent);
  cfg.entropy_coef = 0.3;
  LogitTable skewed = state.policy;
  for (const auto& ctx : masked_contexts(batch)) skewed.set(ctx, {1.0, 0.0, -0.5, 0.25});
  auto with_bonus = objective_gradient(skewed, batch, cfg, state.reference);
  EXPECT_TRUE(with_bonus.report.diagnostics.contains("entropy_bonus"));
  auto expected = with_bonus.report.param_gradient;
  accumulate(expected, entropy_bonus_term(skewed, masked_contexts(batch), 0.3).gradient);
  for (const auto& [ctx, g] : expected)
    for (std::size_t a = 0; a < g.size(); ++a) EXPECT_NEAR(with_bonus.ascent.at(ctx)[a], g[a], 1e-15);

  cfg = small_config(Algorithm::tepo_kl);
  const auto with_kl = objective_gradient(skewed, batch, cfg, state.reference);
  EXPECT_GT(with_kl.report.diagnostics.at("kl_penalty"), 0.0);
  EXPECT_FALSE(with_kl.report.diagnostics.contains("entropy_bonus"));
}

TEST(RunExperiment, DeterministicRecordsAndCheckpoint) {
  for (Algorithm a : kAllAlgorithms) {
    const auto r1 = run_experiment(small_config(a), kSmallTask);
    const auto r2 = run_experiment(small_config(a), kSmallTask);
    ASSERT_EQ(r1.size(), 5u);
    EXPECT_EQ(r1, r2) << to_string(a);
    for (std::size_t i = 0; i < r1.size(); ++i) {
      EXPECT_EQ(r1[i].step, static_cast<int>(i));
      EXPECT_TRUE(std::isfinite(r1[i].grad_norm));
      EXPECT_GE(r1[i].mean_reward, 0.0);
      EXPECT_LE(r1[i].mean_reward, 1.0);
      EXPECT_GE(r1[i].clip_ratio, 0.0);
      EXPECT_LE(r1[i].clip_ratio, 1.0);
    }
  }
  auto other = small_config();
  other.seed = 4;
  EXPECT_NE(run_experiment(other, kSmallTask), run_experiment(small_config(), kSmallTask));
}

TEST(RunExperiment, ZeroStepsAndMiniBatches) {
  auto cfg = small_config();
  cfg.steps = 0;
  EXPECT_TRUE(run_experiment(cfg, kSmallTask).empty());
  cfg.steps = 3;
  cfg.mini_batch_groups = 1;
  EXPECT_EQ(run_experiment(cfg, kSmallTask).size(), 3u);
}

TEST(RunExperiment, LearnsSmallTask) {
  auto cfg = small_config();
  cfg.steps = 60;
  cfg.group_size = 8;
  const auto records = run_experiment(cfg, kSmallTask);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += records[i].mean_reward / 5;
    late += records[records.size() - 1 - i].mean_reward / 5;
  }
  EXPECT_GT(late, early + 0.3);
}

TEST(TrainerState, RejectsMismatchedPolicy) {
  EXPECT_THROW(TrainerState(kSmallTask, small_config(), LogitTable{Vocab(5)}), ConfigError);
  auto bad = small_config();
  bad.group_size = 0;
  EXPECT_THROW(TrainerState(kSmallTask, bad), ConfigError);
}
