#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "tepo/env.hpp"

using namespace tepo;

TEST(ModSum, CanonicalAnswers) {
  const TaskSpec spec{10, 2, 1};
  EXPECT_EQ(canonical_answer(spec, {0, 9, 9}), (std::vector<Token>{1, 8}));
  EXPECT_EQ(canonical_answer(spec, {0, 0, 0}), (std::vector<Token>{0, 0}));
  EXPECT_EQ(canonical_answer(spec, {0, 3, 4}), (std::vector<Token>{0, 7}));
  // Wraps modulo V^L.
  const TaskSpec one{10, 1, 1};
  EXPECT_EQ(canonical_answer(one, {0, 9, 9}), (std::vector<Token>{8}));
  const TaskSpec binary{2, 3, 1};
  EXPECT_EQ(canonical_answer(binary, {0, 1, 1}), (std::vector<Token>{0, 1, 0}));
}

TEST(ModSum, ExactlyOneResponseIsRewarded) {
  const TaskSpec spec{10, 2, 1};
  for (Token a = 0; a < 10; a += 3)
    for (Token b = 0; b < 10; b += 4) {
      const Prompt prompt{0, a, b};
      int rewarded = 0;
      for (Token x = 0; x < 10; ++x)
        for (Token y = 0; y < 10; ++y) {
          const std::vector<Token> r{x, y};
          const double v = evaluate_reward(spec, prompt, r);
          EXPECT_TRUE(v == 0.0 || v == 1.0);
          if (v == 1.0) {
            ++rewarded;
            EXPECT_EQ(10 * x + y, (a + b) % 100);
          }
        }
      EXPECT_EQ(rewarded, 1);
    }
}

TEST(ModSum, RejectsWrongLength) {
  const TaskSpec spec{10, 2, 1};
  const std::vector<Token> short_response{1};
  EXPECT_THROW(evaluate_reward(spec, {0, 1, 2}, short_response), DomainError);
}

TEST(Prompts, DistinctDeterministicInRange) {
  TaskSpec spec{10, 2, 40};
  spec.seed = 17;
  const auto a = generate_prompts(spec);
  const auto b = generate_prompts(spec);
  ASSERT_EQ(a.size(), 40u);
  std::set<std::pair<Token, Token>> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_id, static_cast<int>(i));
    EXPECT_EQ(a[i].a, b[i].a);
    EXPECT_EQ(a[i].b, b[i].b);
    EXPECT_GE(a[i].a, 0);
    EXPECT_LT(a[i].a, 10);
    EXPECT_GE(a[i].b, 0);
    EXPECT_LT(a[i].b, 10);
    seen.insert({a[i].a, a[i].b});
  }
  EXPECT_EQ(seen.size(), a.size());
  spec.seed = 18;
  const auto c = generate_prompts(spec);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].a != c[i].a || a[i].b != c[i].b;
  EXPECT_TRUE(differs);
}

TEST(Prompts, Errors) {
  EXPECT_THROW(generate_prompts(TaskSpec{3, 2, 10}), DomainError);
  EXPECT_EQ(generate_prompts(TaskSpec{3, 2, 9}).size(), 9u);
  EXPECT_THROW(generate_prompts(TaskSpec{1, 2, 1}), DomainError);
  EXPECT_THROW(generate_prompts(TaskSpec{4, 0, 1}), DomainError);
  EXPECT_THROW(generate_prompts(TaskSpec{4, 2, 0}), DomainError);
}

TEST(Contexts, Counts) {
  EXPECT_EQ(context_count(TaskSpec{10, 1, 1}), 1u);
  EXPECT_EQ(context_count(TaskSpec{10, 2, 1}), 11u);
  EXPECT_EQ(context_count(TaskSpec{10, 2, 16}), 176u);
  EXPECT_EQ(context_count(TaskSpec{3, 3, 2}), 26u);
  EXPECT_EQ(enumerate_contexts(TaskSpec{10, 2, 1}).size(), 11u);
  EXPECT_EQ(context_count(TaskSpec{1000, 40, 5}), std::numeric_limits<std::uint64_t>::max());
}

TEST(Contexts, BudgetIsEnforced) {
  EXPECT_THROW(enumerate_contexts(TaskSpec{10, 6, 16}), DomainError);
  EXPECT_THROW(enumerate_contexts(TaskSpec{10, 2, 16}, 100), DomainError);
  EXPECT_EQ(enumerate_contexts(TaskSpec{10, 2, 16}, 176).size(), 176u);
}

TEST(Contexts, MatchesRecursiveEnumeration) {
  for (const TaskSpec spec : {TaskSpec{2, 3, 2}, TaskSpec{3, 2, 3}, TaskSpec{4, 1, 2}, TaskSpec{2, 4, 1}}) {
    std::set<Context> expected;
    std::function<void(Context)> walk = [&](Context ctx) {
      if (ctx.position() >= spec.answer_length) return;
      expected.insert(ctx);
      for (Token a = 0; a < spec.vocab_size; ++a) walk(ctx.child(a));
    };
    for (int p = 0; p < spec.num_prompts; ++p) walk(Context{p, {}});
    const auto got = enumerate_contexts(spec);
    EXPECT_EQ(got.size(), expected.size());
    EXPECT_EQ(std::set<Context>(got.begin(), got.end()), expected);
    EXPECT_EQ(got.size(), context_count(spec));
  }
}

TEST(ModSum, UniformPolicySuccessRate) {
  const TaskSpec spec{10, 2, 1};
  const Prompt prompt{0, 4, 7};
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<Token> tok(0, 9);
  const int n = 40000;
  double hits = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::vector<Token> r{tok(rng), tok(rng)};
    hits += evaluate_reward(spec, prompt, r);
  }
  const double p = 0.01;
  const double se = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(hits / n, p, 3 * se);
}
