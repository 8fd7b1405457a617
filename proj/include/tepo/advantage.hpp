#pragma once

// Group-relative advantages and the mixed-outcome group filter.

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tepo/error.hpp"
#include "tepo/policy.hpp"

namespace tepo {

struct Group {
  int prompt_id = 0;
  std::vector<std::vector<Token>> responses;
  std::vector<std::vector<double>> old_logprobs;  // per response, per token; sampling time
  std::vector<double> rewards;

  std::size_t size() const noexcept { return rewards.size(); }
};

inline constexpr double kDefaultStdFloor = 1e-8;

// A_i = (r_i - mean r) / max(population std r, std_floor).
inline std::vector<double> group_advantage(std::span<const double> rewards,
                                           double std_floor = kDefaultStdFloor) {
  if (rewards.size() < 2) throw DomainError("a group needs at least two rewards");
  if (!(std_floor > 0.0)) throw DomainError("std_floor must be positive");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw DomainError("non-finite reward");
    mean += r;
  }
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size());
  // With every reward equal the numerators are exactly zero and so are the
  // advantages, whatever the floor.
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / std::max(sd, std_floor);
  return adv;
}

// Keeps the groups whose number of reward-1 responses is strictly between 0
// and the group size.
inline std::vector<Group> filter_groups(std::span<const Group> groups) {
  std::vector<Group> kept;
  for (const auto& g : groups) {
    std::size_t successes = 0;
    for (double r : g.rewards)
      if (r == 1.0) ++successes;
    if (successes > 0 && successes < g.size()) kept.push_back(g);
  }
  return kept;
}

// Per-token advantages: A_i on masked-in positions, 0 elsewhere.
inline std::vector<std::vector<double>> broadcast(std::span<const double> adv,
                                                  std::span<const std::vector<int>> masks) {
  if (adv.size() != masks.size()) throw DomainError("broadcast: one mask per sequence required");
  std::vector<std::vector<double>> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    out[i].resize(masks[i].size());
    for (std::size_t t = 0; t < masks[i].size(); ++t) out[i][t] = masks[i][t] ? adv[i] : 0.0;
  }
  return out;
}

// Overload with explicit lengths; each length must equal its mask's size.
inline std::vector<std::vector<double>> broadcast(std::span<const double> adv,
                                                  std::span<const int> lengths,
                                                  std::span<const std::vector<int>> masks) {
  if (lengths.size() != masks.size()) throw DomainError("broadcast: lengths and masks differ in count");
  for (std::size_t i = 0; i < lengths.size(); ++i)
    if (static_cast<std::size_t>(lengths[i]) != masks[i].size())
      throw DomainError("broadcast: length does not match mask for sequence " + std::to_string(i));
  return broadcast(adv, masks);
}

}  // namespace tepo
