#pragma once

// Synthetic verifiable-reward task: given operands (a, b), answer with the
// base-V digits of (a + b) mod V^L, most significant first.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tepo/error.hpp"
#include "tepo/policy.hpp"

namespace tepo {

enum class TaskKind { mod_sum };

struct TaskSpec {
  int vocab_size = 10;
  int answer_length = 2;
  int num_prompts = 16;
  TaskKind task_kind = TaskKind::mod_sum;
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size < 2) throw DomainError("task vocab_size must be >= 2");
    if (answer_length < 1) throw DomainError("task answer_length must be >= 1");
    if (num_prompts < 1) throw DomainError("task num_prompts must be >= 1");
  }
};

struct Prompt {
  int prompt_id = 0;
  Token a = 0;
  Token b = 0;
};

inline constexpr std::size_t kDefaultEnumerationBudget = 200'000;

// V^k, or numeric_limits::max() when it does not fit.
inline std::uint64_t saturating_power(std::uint64_t base, int exponent) {
  std::uint64_t out = 1;
  for (int i = 0; i < exponent; ++i) {
    if (out > std::numeric_limits<std::uint64_t>::max() / base)
      return std::numeric_limits<std::uint64_t>::max();
    out *= base;
  }
  return out;
}

// Distinct operand pairs drawn uniformly without replacement; deterministic
// in spec.seed.
inline std::vector<Prompt> generate_prompts(const TaskSpec& spec) {
  spec.validate();
  const std::uint64_t pairs = static_cast<std::uint64_t>(spec.vocab_size) * spec.vocab_size;
  if (static_cast<std::uint64_t>(spec.num_prompts) > pairs)
    throw DomainError("num_prompts (" + std::to_string(spec.num_prompts) +
                      ") exceeds the number of operand pairs (" + std::to_string(pairs) + ")");
  std::vector<std::uint64_t> order(pairs);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed);
  // Partial Fisher-Yates: only the first num_prompts slots are needed.
  for (int i = 0; i < spec.num_prompts; ++i) {
    std::uniform_int_distribution<std::uint64_t> pick(i, pairs - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<Prompt> prompts;
  for (int i = 0; i < spec.num_prompts; ++i)
    prompts.push_back({i, static_cast<Token>(order[i] / spec.vocab_size),
                       static_cast<Token>(order[i] % spec.vocab_size)});
  return prompts;
}

inline std::vector<Token> canonical_answer(const TaskSpec& spec, const Prompt& prompt) {
  const std::uint64_t modulus = saturating_power(spec.vocab_size, spec.answer_length);
  std::uint64_t value = static_cast<std::uint64_t>(prompt.a) + static_cast<std::uint64_t>(prompt.b);
  value %= modulus;
  std::vector<Token> digits(spec.answer_length, 0);
  for (int t = spec.answer_length; t-- > 0;) {
    digits[t] = static_cast<Token>(value % spec.vocab_size);
    value /= spec.vocab_size;
  }
  return digits;
}

// 1 when the response is token-for-token the canonical answer, else 0.
inline double evaluate_reward(const TaskSpec& spec, const Prompt& prompt,
                              std::span<const Token> response) {
  if (static_cast<int>(response.size()) != spec.answer_length)
    throw DomainError("response length " + std::to_string(response.size()) + " != answer length " +
                      std::to_string(spec.answer_length));
  const auto answer = canonical_answer(spec, prompt);
  return std::equal(answer.begin(), answer.end(), response.begin()) ? 1.0 : 0.0;
}

inline std::uint64_t context_count(const TaskSpec& spec) {
  std::uint64_t per_prompt = 0;
  for (int t = 0; t < spec.answer_length; ++t) {
    const auto level = saturating_power(spec.vocab_size, t);
    if (level == std::numeric_limits<std::uint64_t>::max() ||
        per_prompt > std::numeric_limits<std::uint64_t>::max() - level)
      return std::numeric_limits<std::uint64_t>::max();
    per_prompt += level;
  }
  if (per_prompt > std::numeric_limits<std::uint64_t>::max() / spec.num_prompts)
    return std::numeric_limits<std::uint64_t>::max();
  return per_prompt * spec.num_prompts;
}

inline void check_enumeration_budget(const TaskSpec& spec, std::size_t budget) {
  const auto n = context_count(spec);
  if (n > budget)
    throw DomainError("context enumeration needs " + std::to_string(n) +
                      " contexts, over the budget of " + std::to_string(budget));
}

// Every context reachable during generation, each once, in prompt-major
// breadth-first order.
inline std::vector<Context> enumerate_contexts(const TaskSpec& spec,
                                               std::size_t budget = kDefaultEnumerationBudget) {
  spec.validate();
  check_enumeration_budget(spec, budget);
  std::vector<Context> out;
  for (int p = 0; p < spec.num_prompts; ++p) {
    std::vector<Context> level{Context{p, {}}};
    for (int t = 0; t < spec.answer_length; ++t) {
      out.insert(out.end(), level.begin(), level.end());
      if (t + 1 == spec.answer_length) break;
      std::vector<Context> next;
      next.reserve(level.size() * spec.vocab_size);
      for (const auto& ctx : level)
        for (Token a = 0; a < spec.vocab_size; ++a) next.push_back(ctx.child(a));
      level = std::move(next);
    }
  }
  return out;
}

}  // namespace tepo
