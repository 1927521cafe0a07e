#pragma once

// Diagnostic probes: sign-flip training, pressure vs entropy, one-step TV
// shift, prefix interventions, arm flips, and fork/revision interventions.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dasd/metrics.hpp"
#include "dasd/policy.hpp"
#include "dasd/run.hpp"
#include "dasd/taskenv.hpp"
#include "dasd/trainer.hpp"

namespace dasd {

// ---------------------------------------------------------------------------
// Shared rollout machinery

/// Sampling distribution override for position t (0-based within the
/// response); nullopt keeps the student distribution.
using DistOverride =
    std::function<std::optional<CategoricalDist>(std::size_t t, std::span<const TokenId> prefix)>;

/// Student rollout where `override` may replace the sampling distribution at
/// any position. One uniform variate is consumed per token, so two calls on
/// copies of the same stream stay aligned position by position. Recorded
/// logprob and entropy always refer to the student distribution.
Trajectory guided_rollout(const Policy& policy, std::span<const TokenId> prompt,
                          const RolloutOptions& options, Rng& rng, const DistOverride& override);

/// p(v) q(v)^-alpha renormalized; zero teacher entries take the smallest
/// positive teacher probability of the row.
CategoricalDist novelty_distribution(const CategoricalDist& student, const CategoricalDist& teacher,
                                     double alpha);

/// Student distribution with `masked` removed and the rest renormalized. A
/// row whose whole mass sits on `masked` becomes uniform over the others.
CategoricalDist mask_token(const CategoricalDist& dist, TokenId masked);

// ---------------------------------------------------------------------------
// Sign-flip training

/// Trains with token advantage A_G + beta * sign * delta_bar (opsd_sampled for
/// +1, novelty for -1).
RunResult signflip_probe(TrainConfig config, int sign, const RunHooks& hooks = {});

// ---------------------------------------------------------------------------
// Pressure vs entropy

struct TokenRecord {
  double entropy = 0.0;
  double delta = 0.0;
};

std::vector<TokenRecord> token_records(const std::vector<RolloutGroup>& groups);

/// Spearman correlation with average ranks for ties; nullopt when either
/// input is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Average (1-based) ranks with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> x);

struct PressureBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_entropy;
  std::optional<double> mean_delta;
};

struct PressureReport {
  std::optional<double> spearman;  // nullopt: undefined correlation
  std::vector<PressureBin> bins;   // entropy deciles
  std::size_t tokens = 0;
};

inline constexpr std::size_t kMinPressureTokens = 100;

/// Throws std::invalid_argument below kMinPressureTokens tokens.
PressureReport pressure_vs_entropy(std::span<const TokenRecord> records);

// ---------------------------------------------------------------------------
// One-step TV shift

struct TvRecord {
  double entropy = 0.0;  // pre-step student entropy
  double tv = 0.0;
  double delta = 0.0;
};

struct TvShiftResult {
  std::vector<TvRecord> records;
  double learning_rate = 0.0;
  int sign = 1;
};

/// Applies one diagnostic step computed from `groups` to a scratch copy and
/// measures TV at every recorded prefix. `config.mode` selects the surrogate.
TvShiftResult tv_shift_groups(const Policy& policy, const std::vector<RolloutGroup>& groups,
                              const TrainConfig& config, double learning_rate);

/// Collects one batch over `prompts` under the given sign, then
/// tv_shift_groups with the training learning rate.
TvShiftResult tv_shift(const Policy& policy, int sign, const std::vector<TaskInstance>& prompts,
                       const TrainConfig& config, const TrainContext& context);

// ---------------------------------------------------------------------------
// Prefix interventions

enum class Bucket { low_H, high_H, random_control };
enum class InterventionMode { conformity, novelty };

std::string to_string(Bucket b);
std::string to_string(InterventionMode m);
Bucket parse_bucket(const std::string& s);

struct InterventionSpec {
  Bucket bucket = Bucket::low_H;
  InterventionMode mode = InterventionMode::conformity;
  double alpha = 0.5;
  double threshold_quantile = 0.5;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct InterventionOutcome {
  Trajectory baseline;
  Trajectory intervened;
  std::optional<std::size_t> position;  // nullopt: no qualifying position
};

/// Baseline rollout from Rng::stream(stream_seed, 0); the random_control
/// position comes from Rng::stream(stream_seed, 1). The intervened rollout
/// replays the baseline stream and changes the sampling distribution at the
/// chosen position only.
InterventionOutcome intervene_rollout(const Policy& policy, const TaskInstance& instance,
                                      const InterventionSpec& spec, int max_len,
                                      std::uint64_t stream_seed);

struct InterventionCell {
  InterventionSpec spec;
  std::optional<double> d_step_acc;  // percent change; nullopt when undefined
  std::optional<double> d_e_density;
  double base_step_acc = 0.0, step_acc = 0.0;
  double base_e_density = 0.0, e_density = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::size_t problems = 0;
  /// Problem-level means of the paired differences and their standard errors.
  double cluster_d_step_acc = 0.0, cluster_se_step_acc = 0.0;
  double cluster_d_e_density = 0.0, cluster_se_e_density = 0.0;
};

struct InterventionReport {
  std::vector<InterventionCell> cells;  // one per spec, in order
  std::size_t n_samples = 0;
};

inline constexpr int kMinInterventionSamples = 200;

/// The standard 3 x 2 grid: {low_H, high_H, random_control} x
/// {conformity, novelty}.
std::vector<InterventionSpec> standard_intervention_grid(double alpha = 0.5,
                                                         double threshold_quantile = 0.5);

/// Sample r uses eval_set[r % size] and a stream derived from (seed, r) that
/// every cell shares, so all cells compare against one baseline set.
InterventionReport intervention_report(const Policy& policy,
                                       const std::vector<TaskInstance>& eval_set,
                                       const std::vector<InterventionSpec>& specs, int n_samples,
                                       int max_len, std::uint64_t seed, Exec exec = Exec::serial,
                                       int workers = 1);

// ---------------------------------------------------------------------------
// Arm flip

RunResult arm_flip_run(TrainConfig config, FlipArm arm, int flip_step, const RunHooks& hooks = {});

// ---------------------------------------------------------------------------
// Causal fork and revision interventions

struct ForkResult {
  std::size_t samples = 0;
  std::size_t changed = 0;  // teacher argmax differed from the sampled token
  double base_reward = 0.0, reward = 0.0;
  double base_rev_rate = 0.0, rev_rate = 0.0;
  double d_reward = 0.0;
  double d_rev_rate = 0.0;
  std::vector<std::string> warnings;
};

/// Replaces the max-entropy (min-entropy, random) token of each baseline
/// rollout with the teacher's argmax and resumes on the same stream.
ForkResult causal_fork_intervention(const Policy& policy, const std::vector<TaskInstance>& eval_set,
                                    Bucket target, int n, int max_len, std::uint64_t seed);

enum class RevisionAction { preserve, suppress, teacher_force };

std::string to_string(RevisionAction a);
RevisionAction parse_revision_action(const std::string& s);

inline constexpr std::size_t kMinRevisionPrefixes = 50;

struct RevisionResult {
  std::size_t samples = 0;
  std::size_t marker_prefixes = 0;
  bool low_power = true;
  double base_correct = 0.0, correct = 0.0;
  double d_correct = 0.0;
};

/// Baseline rollouts that contain a MARKER are continued from their first
/// MARKER: preserve keeps the student, suppress masks MARKER from there on,
/// teacher_force samples the rest from the privileged branch.
RevisionResult revision_intervention(const Policy& policy,
                                     const std::vector<TaskInstance>& eval_set,
                                     RevisionAction action, int n, int max_len,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Records

inline constexpr const char* kProbeSchema = "dasd.probe/1";

nlohmann::json to_json(const PressureReport& r);
nlohmann::json to_json(const TvRecord& r);
nlohmann::json to_json(const InterventionCell& c);
nlohmann::json to_json(const ForkResult& r);
nlohmann::json to_json(const RevisionResult& r);

}  // namespace dasd
