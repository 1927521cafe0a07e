#pragma once

// Evaluation on a pinned instance set and the reasoning-health metrics.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dasd/policy.hpp"
#include "dasd/taskenv.hpp"
#include "dasd/trainer.hpp"

namespace dasd {

struct EvalRollout {
  std::vector<TokenId> tokens;
  std::vector<double> entropies;
  double reward = 0.0;
  std::vector<bool> step_flags;
  std::optional<std::size_t> first_error_step;
};

struct EvalSample {
  std::uint64_t instance_id = 0;
  std::vector<EvalRollout> rollouts;
};

class EmptyReportError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

EvalRollout score_rollout(const TaskInstance& instance, const Trajectory& trajectory);

/// K rollouts per instance; rollout j of instance i draws from a stream
/// derived from (seed, instance index, j), so results do not depend on exec.
std::vector<EvalSample> evaluate(const Policy& policy, const std::vector<TaskInstance>& instances,
                                 int k, int max_len, std::uint64_t seed, Exec exec = Exec::serial,
                                 int workers = 1);

/// Percentage of correct rollouts among the first k, averaged over instances.
double avg_at_k(const std::vector<EvalSample>& samples, int k);

/// Unbiased estimator 1 - C(n-c, k) / C(n, k).
double pass_at_k(int n, int c, int k);

/// pass_at_k averaged over instances, as a fraction.
double mean_pass_at_k(const std::vector<EvalSample>& samples, int k);

struct StepMetrics {
  double step_acc = 0.0;            // percent
  double first_error_step = 0.0;    // 1-based
  double correct_step_ratio = 0.0;  // percent
  std::size_t rollouts_used = 0;
  std::size_t rollouts_without_steps = 0;
};

StepMetrics step_metrics(const std::vector<EvalSample>& samples);

struct ExplorationMetrics {
  double e_density = 0.0;  // markers per 100 generated tokens
  double rev_rate = 0.0;   // fraction of rollouts
  double distinct3 = 0.0;  // fraction
};

inline constexpr std::size_t kRevisionWindow = 12;
inline constexpr double kRevisionOverlap = 0.3;

/// Share of post-window trigrams that also occur in the pre-window; nullopt
/// when the post window has no trigram.
std::optional<double> trigram_overlap(std::span<const TokenId> pre, std::span<const TokenId> post);

/// True when some marker is followed by a continuation that overlaps the
/// preceding window by at most the revision threshold.
bool has_revision(std::span<const TokenId> tokens, TokenId marker);

ExplorationMetrics exploration_metrics(const std::vector<EvalSample>& samples, TokenId marker);

struct EntropyHistogram {
  double upper = 0.0;  // ln |V|
  std::vector<std::size_t> counts;
  std::vector<double> log_counts;  // log10(count + 1)
  double p50 = 0.0, p80 = 0.0, p95 = 0.0;
  std::size_t total = 0;
};

EntropyHistogram entropy_histogram(std::span<const double> entropies, int vocab_size, int bins);
EntropyHistogram entropy_histogram(const std::vector<EvalSample>& samples, int vocab_size,
                                   int bins);

struct HealthReport {
  double step_acc = 0.0;            // percent
  double first_error_step = 0.0;
  double correct_step_ratio = 0.0;  // percent
  double e_density = 0.0;           // per 100 tokens
  double rev_rate = 0.0;            // fraction
  double distinct3 = 0.0;           // fraction
  double avg_at_k = 0.0;            // percent
  std::vector<std::pair<int, double>> pass_at_k;  // (k, fraction)
  double mean_length = 0.0;
  double entropy_p80 = 0.0;

  friend bool operator==(const HealthReport&, const HealthReport&) = default;
};

/// Pass@k is reported for k = 1, 2, 4, ... up to the rollout count.
HealthReport health_report(const std::vector<EvalSample>& samples, TokenId marker,
                           int vocab_size);

}  // namespace dasd
