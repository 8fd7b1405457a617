#pragma once

// Entropy-evolution diagnostics: the covariance prediction of the entropy
// change under exponential tilting, the exact split of the expected-entropy
// change into a state-distribution shift and a policy-update effect, and the
// per-sequence covariance term.

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "tepo/calculus.hpp"
#include "tepo/env.hpp"
#include "tepo/error.hpp"
#include "tepo/policy.hpp"

namespace tepo {

// Visitation probability d(s) of every reachable context: uniform over
// prompts and positions, weighted by the prefix probability under the policy.
struct StateDistribution {
  std::map<Context, double> weights;

  double total() const {
    double s = 0.0;
    for (const auto& [ctx, w] : weights) s += w;
    return s;
  }
};

inline StateDistribution state_distribution(const LogitTable& table, const TaskSpec& spec,
                                            std::size_t budget = kDefaultEnumerationBudget) {
  spec.validate();
  check_enumeration_budget(spec, budget);
  if (table.vocab_size() != spec.vocab_size)
    throw DomainError("policy vocabulary does not match the task");
  StateDistribution out;
  const double root = 1.0 / (static_cast<double>(spec.num_prompts) * spec.answer_length);
  for (int p = 0; p < spec.num_prompts; ++p) {
    std::vector<std::pair<Context, double>> level{{Context{p, {}}, root}};
    for (int t = 0; t < spec.answer_length; ++t) {
      std::vector<std::pair<Context, double>> next;
      for (const auto& [ctx, w] : level) {
        out.weights[ctx] += w;
        if (t + 1 == spec.answer_length) continue;
        const auto dist = softmax_distribution(table, ctx);
        for (Token a = 0; a < spec.vocab_size; ++a) next.emplace_back(ctx.child(a), w * dist[a]);
      }
      level = std::move(next);
    }
  }
  return out;
}

// E_{s ~ d}[H(pi(.|s))].
inline double expected_entropy(const LogitTable& table, const StateDistribution& d) {
  double h = 0.0;
  for (const auto& [ctx, w] : d.weights)
    if (w > 0.0) h += w * entropy(softmax_distribution(table, ctx));
  return h;
}

// Cov_{a ~ pi}(log pi(a), A(a)) = sum pi log pi A + H E[A].
inline double log_prob_advantage_covariance(const PolicyDistribution& dist, const AdvantageVector& adv) {
  detail::require_same_size(dist.size(), adv.size(), "covariance");
  double cross = 0.0;
  for (std::size_t a = 0; a < dist.size(); ++a) cross += detail::plogp(dist[a]) * adv[a];
  return cross + entropy(dist) * detail::expectation(dist, adv);
}

// Predicted entropy change -(1/eta) Cov(log pi, A) under phi += A / eta.
inline double entropy_covariance_delta(const PolicyDistribution& dist, const AdvantageVector& adv,
                                       double eta) {
  if (!(eta > 0.0)) throw DomainError("eta must be positive");
  return -log_prob_advantage_covariance(dist, adv) / eta;
}

// Entropy after the parameter-space tilting phi += A / eta, minus before.
inline double measured_tilt_entropy_delta(std::span<const double> logits, const AdvantageVector& adv,
                                          double eta) {
  if (!(eta > 0.0)) throw DomainError("eta must be positive");
  detail::require_same_size(logits.size(), adv.size(), "measured_tilt_entropy_delta");
  std::vector<double> moved(logits.begin(), logits.end());
  for (std::size_t a = 0; a < moved.size(); ++a) moved[a] += adv[a] / eta;
  return entropy(softmax(moved)) - entropy(softmax(logits));
}

struct EntropyDecomposition {
  double shift_term = 0.0;   // E_{d_k1} H(pi_k1) - E_{d_k} H(pi_k1)
  double update_term = 0.0;  // E_{d_k} H(pi_k1) - E_{d_k} H(pi_k)
  double total = 0.0;        // E_{d_k1} H(pi_k1) - E_{d_k} H(pi_k)
};

inline EntropyDecomposition entropy_decomposition(const LogitTable& table_k, const LogitTable& table_k1,
                                                  const TaskSpec& spec,
                                                  std::size_t budget = kDefaultEnumerationBudget) {
  const auto d_k = state_distribution(table_k, spec, budget);
  const auto d_k1 = state_distribution(table_k1, spec, budget);
  const double h_k_on_k = expected_entropy(table_k, d_k);
  const double h_k1_on_k = expected_entropy(table_k1, d_k);
  const double h_k1_on_k1 = expected_entropy(table_k1, d_k1);
  return {h_k1_on_k1 - h_k1_on_k, h_k1_on_k - h_k_on_k, h_k1_on_k1 - h_k_on_k};
}

struct CovarianceReport {
  std::vector<double> per_sequence;
  double group_mean = 0.0;
};

// Cov(y_i) = (A_i - mean A)(log pi(y_i) - mean log pi).
inline CovarianceReport sequence_covariance(std::span<const double> advantages,
                                            std::span<const double> seq_logprobs) {
  if (advantages.size() != seq_logprobs.size())
    throw DomainError("sequence_covariance: advantages and log-probabilities differ in length");
  if (advantages.size() < 2) throw DomainError("sequence_covariance needs at least two sequences");
  const double n = static_cast<double>(advantages.size());
  double ma = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    ma += advantages[i];
    ml += seq_logprobs[i];
  }
  ma /= n;
  ml /= n;
  CovarianceReport report;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    report.per_sequence.push_back((advantages[i] - ma) * (seq_logprobs[i] - ml));
    report.group_mean += report.per_sequence.back();
  }
  report.group_mean /= n;
  return report;
}

}  // namespace tepo
