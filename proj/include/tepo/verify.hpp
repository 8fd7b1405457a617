#pragma once

// Verification suites behind the `gradcheck` and `dynamics` subcommands.
// Each compares an analytic quantity against an independent route: central
// finite differences, a value-only recomputation of a loss, or a direct
// before/after entropy measurement.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tepo/calculus.hpp"
#include "tepo/dynamics.hpp"
#include "tepo/objective.hpp"
#include "tepo/policy.hpp"
#include "tepo/trainer.hpp"

namespace tepo {

inline std::vector<double> random_normal_vector(std::size_t n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

// A small random batch over a random logit table, with old log-probs from a
// perturbed copy of the table and random per-token advantages and masks.
struct RandomBatchInstance {
  LogitTable table;
  RolloutBatch batch;
  std::vector<Context> contexts;  // distinct contexts touched, sorted
};

inline RandomBatchInstance random_batch_instance(int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_seq_dist(2, 4);
  std::uniform_int_distribution<int> len_dist(1, 3);
  std::uniform_int_distribution<int> prompt_dist(0, 1);
  std::uniform_int_distribution<int> token_dist(0, vocab - 1);
  std::bernoulli_distribution keep(0.8);
  std::normal_distribution<double> normal(0.0, 1.0);

  RandomBatchInstance inst{LogitTable(Vocab(vocab)), {}, {}};
  LogitTable old_table{Vocab(vocab)};
  std::set<Context> seen;
  const int n_seq = n_seq_dist(rng);
  for (int i = 0; i < n_seq; ++i) {
    SequenceRollout s;
    Context ctx{prompt_dist(rng), {}};
    const int len = len_dist(rng);
    for (int t = 0; t < len; ++t) {
      if (seen.insert(ctx).second) {
        const auto logits = random_normal_vector(vocab, 1.0, rng);
        auto perturbed = logits;
        for (auto& v : perturbed) v += 0.3 * normal(rng);
        inst.table.set(ctx, logits);
        old_table.set(ctx, perturbed);
      }
      const Token tok = token_dist(rng);
      s.contexts.push_back(ctx);
      s.tokens.push_back(tok);
      s.old_logprobs.push_back(log_softmax(old_table.logits(ctx))[tok]);
      s.mask.push_back(keep(rng) ? 1 : 0);
      s.advantage.push_back(normal(rng));
      ctx.prefix.push_back(tok);
    }
    if (s.valid_tokens() == 0) s.mask[0] = 1;
    for (std::size_t t = 0; t < s.length(); ++t)
      if (!s.mask[t]) s.advantage[t] = 0.0;
    s.new_logprobs = s.old_logprobs;
    inst.batch.sequences.push_back(std::move(s));
  }
  refresh_new_logprobs(inst.batch, inst.table);
  inst.contexts.assign(seen.begin(), seen.end());
  return inst;
}

// Unclipped sequence-ratio objective evaluated from the table directly,
// without touching any gradient code.
inline double unclipped_sequence_objective(const LogitTable& table, const RolloutBatch& batch) {
  double total = 0.0;
  for (const auto& s : batch.sequences)
    for (int m : s.mask) total += m;
  double value = 0.0;
  for (const auto& s : batch.sequences) {
    double log_ratio = 0.0;
    double n = 0.0;
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (!s.mask[t]) continue;
      log_ratio += log_softmax(table.logits(s.contexts[t]))[s.tokens[t]] - s.old_logprobs[t];
      n += 1.0;
    }
    const double is = std::exp(log_ratio / n);
    for (std::size_t t = 0; t < s.length(); ++t)
      if (s.mask[t]) value += is * s.advantage[t] / total;
  }
  return value;
}

// Flattens the gradient over the given contexts (zeros where untouched).
inline std::vector<double> flatten(const ParamGradient& grad, const std::vector<Context>& contexts,
                                   int vocab) {
  std::vector<double> out;
  out.reserve(contexts.size() * vocab);
  for (const auto& ctx : contexts) {
    const auto it = grad.find(ctx);
    for (int a = 0; a < vocab; ++a) out.push_back(it == grad.end() ? 0.0 : it->second[a]);
  }
  return out;
}

// Finite-difference gradient of a table-valued objective over the listed
// contexts.
template <class Objective>
std::vector<double> table_finite_difference(const LogitTable& table, const std::vector<Context>& contexts,
                                            Objective&& objective, double h = kDefaultFiniteDifferenceStep) {
  const int vocab = table.vocab_size();
  std::vector<double> params;
  for (const auto& ctx : contexts) {
    const auto row = table.logits(ctx);
    params.insert(params.end(), row.begin(), row.end());
  }
  LogitTable probe = table;
  auto f = [&](std::span<const double> x) {
    for (std::size_t c = 0; c < contexts.size(); ++c)
      probe.set(contexts[c], std::vector<double>(x.begin() + c * vocab, x.begin() + (c + 1) * vocab));
    return objective(probe);
  };
  return finite_difference_gradient(f, params, h);
}

struct SignEvidenceRow {
  int vocab = 0;
  double corr_implemented = 0.0;  // corr(-pi(log pi + H), finite differences)
  double corr_unnegated = 0.0;    // corr(+pi(log pi + H), finite differences)
};

struct GradcheckReport {
  int trials = 0;
  double entropy_max_rel_error = 0.0;
  double policy_max_rel_error = 0.0;
  double backward_max_rel_error = 0.0;
  double inner_product_max_abs_diff = 0.0;
  int entropy_failures = 0;
  int policy_failures = 0;
  int backward_failures = 0;
  std::vector<SignEvidenceRow> sign_evidence;
  bool sign_evidence_ok = false;
  double seconds = 0.0;

  double max_rel_error() const {
    return std::max({entropy_max_rel_error, policy_max_rel_error, backward_max_rel_error});
  }

  bool passed() const {
    return entropy_failures == 0 && policy_failures == 0 && backward_failures == 0 &&
           inner_product_max_abs_diff <= 1e-10 && sign_evidence_ok;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : sign_evidence)
      rows.push_back({{"vocab", r.vocab},
                      {"corr_implemented_vs_fd", r.corr_implemented},
                      {"corr_unnegated_vs_fd", r.corr_unnegated}});
    return {{"trials", trials},
            {"rtol", 1e-5},
            {"atol", 1e-9},
            {"entropy_gradient", {{"max_rel_error", entropy_max_rel_error}, {"failures", entropy_failures}}},
            {"policy_gradient", {{"max_rel_error", policy_max_rel_error}, {"failures", policy_failures}}},
            {"sequence_backward", {{"max_rel_error", backward_max_rel_error}, {"failures", backward_failures}}},
            {"inner_product_max_abs_diff", inner_product_max_abs_diff},
            {"max_rel_error", max_rel_error()},
            {"entropy_sign_evidence", {{"instances", rows}, {"ok", sign_evidence_ok}}},
            {"seconds", seconds},
            {"passed", passed()}};
  }
};

inline GradcheckReport run_gradcheck(int trials, std::uint64_t seed = 0) {
  if (trials < 1) throw DomainError("gradcheck needs at least one trial");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> vocab_dist(2, 16);
  GradcheckReport report;
  report.trials = trials;

  for (int trial = 0; trial < trials; ++trial) {
    const int vocab = vocab_dist(rng);
    const auto logits = random_normal_vector(vocab, 1.5, rng);
    const auto adv = random_normal_vector(vocab, 1.0, rng);
    const auto dist = softmax(logits);

    const auto fd_h = finite_difference_gradient(
        [](std::span<const double> x) { return entropy(softmax(x)); }, logits);
    const auto an_h = entropy_gradient(dist);
    report.entropy_max_rel_error = std::max(report.entropy_max_rel_error, relative_error(an_h, fd_h));
    if (!gradients_agree(an_h, fd_h)) ++report.entropy_failures;

    const auto fd_j = finite_difference_gradient(
        [&adv](std::span<const double> x) { return detail::expectation(softmax(x), adv); }, logits);
    const auto an_j = policy_gradient(dist, adv);
    report.policy_max_rel_error = std::max(report.policy_max_rel_error, relative_error(an_j, fd_j));
    if (!gradients_agree(an_j, fd_j)) ++report.policy_failures;

    report.inner_product_max_abs_diff =
        std::max(report.inner_product_max_abs_diff,
                 std::abs(grad_inner_product(dist, adv) - grad_inner_product_closed_form(dist, adv)));

    const auto inst = random_batch_instance(vocab, rng);
    const auto an_b = flatten(tepo_backward(inst.table, inst.batch), inst.contexts, vocab);
    const auto fd_b = table_finite_difference(inst.table, inst.contexts, [&](const LogitTable& t) {
      return unclipped_sequence_objective(t, inst.batch);
    });
    report.backward_max_rel_error = std::max(report.backward_max_rel_error, relative_error(an_b, fd_b));
    if (!gradients_agree(an_b, fd_b)) ++report.backward_failures;
  }

  // Sign evidence on its own stream so it does not depend on the trial count.
  std::mt19937_64 sign_rng(seed ^ 0x5157ull);
  report.sign_evidence_ok = true;
  const int sign_instances = std::max(20, trials);
  for (int i = 0; i < sign_instances; ++i) {
    const int vocab = vocab_dist(sign_rng);
    const auto logits = random_normal_vector(vocab, 1.5, sign_rng);
    const auto dist = softmax(logits);
    const auto fd_h = finite_difference_gradient(
        [](std::span<const double> x) { return entropy(softmax(x)); }, logits);
    SignEvidenceRow row{vocab, correlation(entropy_gradient(dist), fd_h),
                        correlation(entropy_gradient_unnegated(dist), fd_h)};
    report.sign_evidence_ok = report.sign_evidence_ok && row.corr_implemented > 1.0 - 1e-6 &&
                              row.corr_unnegated < -1.0 + 1e-6;
    report.sign_evidence.push_back(row);
  }

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

struct TiltSweepRow {
  int instance = 0;
  double eta = 0.0;
  double predicted = 0.0;
  double measured = 0.0;
  double rel_error = 0.0;
};

// Covariance prediction versus measured entropy change under phi += A / eta.
inline std::vector<TiltSweepRow> tilt_sweep(int vocab, int instances, const std::vector<double>& etas,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TiltSweepRow> rows;
  for (int i = 0; i < instances; ++i) {
    const auto logits = random_normal_vector(vocab, 1.0, rng);
    const auto adv = random_normal_vector(vocab, 1.0, rng);
    const auto dist = softmax(logits);
    for (double eta : etas) {
      TiltSweepRow row{i, eta, entropy_covariance_delta(dist, adv, eta),
                       measured_tilt_entropy_delta(logits, adv, eta), 0.0};
      row.rel_error = std::abs(row.predicted - row.measured) / std::abs(row.measured);
      rows.push_back(row);
    }
  }
  return rows;
}

struct TaylorSweepRow {
  int instance = 0;
  double step = 0.0;
  double predicted = 0.0;
  double measured = 0.0;
  double abs_error = 0.0;
};

// First-order entropy prediction step * <grad H, grad J> versus the exact
// change after phi += step * grad J.
inline std::vector<TaylorSweepRow> taylor_sweep(int vocab, int instances, const std::vector<double>& steps,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TaylorSweepRow> rows;
  for (int i = 0; i < instances; ++i) {
    const auto logits = random_normal_vector(vocab, 1.0, rng);
    const auto adv = random_normal_vector(vocab, 1.0, rng);
    const auto dist = softmax(logits);
    for (double step : steps) {
      TaylorSweepRow row{i, step, predicted_entropy_delta(dist, adv, step),
                         measured_entropy_delta(logits, adv, step), 0.0};
      row.abs_error = std::abs(row.predicted - row.measured);
      rows.push_back(row);
    }
  }
  return rows;
}

struct DecompositionRow {
  int step = 0;
  EntropyDecomposition terms;
  double residual = 0.0;  // |shift + update - total|
};

// Trains for config.steps and splits each step's expected-entropy change.
inline std::vector<DecompositionRow> decomposition_trace(const TrainConfig& config, const TaskSpec& task) {
  TrainerState state(task, config);
  check_enumeration_budget(task, state.enumeration_budget);
  std::vector<DecompositionRow> rows;
  for (int s = 0; s < config.steps; ++s) {
    const LogitTable before = state.policy;
    train_step(state);
    DecompositionRow row{s, entropy_decomposition(before, state.policy, task), 0.0};
    row.residual = std::abs(row.terms.shift_term + row.terms.update_term - row.terms.total);
    rows.push_back(row);
  }
  return rows;
}

struct DynamicsReport {
  std::vector<TiltSweepRow> tilt;
  std::vector<TaylorSweepRow> taylor;
  std::vector<DecompositionRow> decomposition;

  double max_decomposition_residual() const {
    double m = 0.0;
    for (const auto& r : decomposition) m = std::max(m, r.residual);
    return m;
  }

  bool passed() const { return max_decomposition_residual() <= 1e-12; }

  nlohmann::json to_json() const {
    nlohmann::json tilt_rows = nlohmann::json::array();
    for (const auto& r : tilt)
      tilt_rows.push_back({{"instance", r.instance}, {"eta", r.eta}, {"predicted", r.predicted},
                           {"measured", r.measured}, {"rel_error", r.rel_error}});
    nlohmann::json taylor_rows = nlohmann::json::array();
    for (const auto& r : taylor)
      taylor_rows.push_back({{"instance", r.instance}, {"step", r.step}, {"predicted", r.predicted},
                             {"measured", r.measured}, {"abs_error", r.abs_error}});
    nlohmann::json decomposition_rows = nlohmann::json::array();
    for (const auto& r : decomposition)
      decomposition_rows.push_back({{"step", r.step},
                                    {"shift_term", r.terms.shift_term},
                                    {"update_term", r.terms.update_term},
                                    {"total", r.terms.total},
                                    {"residual", r.residual}});
    return {{"eta_sweep", tilt_rows},
            {"step_sweep", taylor_rows},
            {"entropy_decomposition", decomposition_rows},
            {"max_decomposition_residual", max_decomposition_residual()},
            {"passed", passed()}};
  }
};

inline DynamicsReport run_dynamics(const TrainConfig& config, const TaskSpec& task) {
  DynamicsReport report;
  report.tilt = tilt_sweep(task.vocab_size, 20, {1.0, 10.0, 100.0, 1000.0}, config.seed);
  report.taylor = taylor_sweep(task.vocab_size, 20, {1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4}, config.seed + 1);
  report.decomposition = decomposition_trace(config, task);
  return report;
}

}  // namespace tepo
