#pragma once

// Closed training loop: group rollout collection, token credit, and one
// on-policy clipped-surrogate step per collection.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dasd/credit.hpp"
#include "dasd/policy.hpp"
#include "dasd/rng.hpp"
#include "dasd/taskenv.hpp"

namespace dasd {

enum class TrainMode { grpo, opsd_sampled, opsd_exact_kl, novelty, dasd, ablation };
enum class FlipArm { none, low_h, high_h, both };
enum class LrSchedule { constant, cosine };
enum class Exec { serial, parallel };

std::string to_string(TrainMode m);
std::string to_string(FlipArm a);
std::string to_string(LrSchedule s);
TrainMode parse_train_mode(const std::string& s);
FlipArm parse_flip_arm(const std::string& s);
LrSchedule parse_lr_schedule(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::dasd;
  /// Direction/gate/signal are only read in ablation mode; rho, eps and the
  /// clipping switch apply to every mode.
  RoutingConfig routing;
  int group_size = 8;
  double beta = 1.0;
  double eps_clip = 0.2;
  double learning_rate = 2.0;
  LrSchedule lr_schedule = LrSchedule::constant;
  int batch_prompts = 32;
  int updates = 300;
  int max_len = 48;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 1001;

  int modulus = 7;
  /// Sampling weights for difficulty 2, 3 and 4.
  std::vector<double> difficulty_weights{0.4, 0.4, 0.2};
  int window = 3;

  // Supervised warm-up on verified solutions before RL (both branches).
  int warmup_examples = 30000;
  double warmup_lr = 2.0;
  double warmup_revision_rate = 0.15;

  int eval_instances = 64;
  /// Keeps evaluation prompts out of warm-up and training batches. Off by
  /// default: a lookup table cannot answer a prompt whose first-step row it
  /// never saw.
  bool exclude_eval_prompts = false;
  int eval_k = 16;
  int eval_every = 50;
  int checkpoint_every = 50;

  FlipArm flip_arm = FlipArm::none;
  int flip_step = 0;

  int workers = 1;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Routing variants actually used for a mode.
RoutingConfig effective_routing(const TrainConfig& config);
/// beta after mode overrides (grpo forces zero).
double effective_beta(const TrainConfig& config);

/// Shared, read-only run context derived deterministically from the config.
struct TrainContext {
  TaskVocabulary vocab{7};
  std::vector<double> token_frequency_scores;  // per token id
  std::set<std::vector<TokenId>> held_out_prompts;
};

struct ScoredRollout {
  std::vector<TokenId> tokens;
  std::vector<TokenEvidence> evidence;
  VerifierResult result;
  TrajectoryScales scales;
  std::vector<RoutedCredit> credits;
};

struct RolloutGroup {
  TaskInstance instance;
  std::vector<ScoredRollout> rollouts;
  GroupAdvantage advantage;
};

struct UpdateStats {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double mean_entropy = 0.0;
  double entropy_p80 = 0.0;
  double mean_abs_omega = 0.0;
  double frac_omega_positive = 0.0;
  double surrogate = 0.0;
  double max_ratio_deviation = 0.0;
  double learning_rate = 0.0;
  double marker_rate = 0.0;  // MARKER tokens per generated token

  friend bool operator==(const UpdateStats&, const UpdateStats&) = default;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Computes evidence scales and routed credit for one rollout.
void assign_credit(ScoredRollout& rollout, double a_group, const TrainConfig& config,
                   const TrainContext& context, std::uint64_t step);

/// Samples G student rollouts from per-rollout streams derived from
/// `stream_seed`, scores both branches at every emitted prefix, and fills the
/// group advantage and token credit.
RolloutGroup collect_group(const Policy& policy, const TaskInstance& instance,
                           const TrainConfig& config, const TrainContext& context,
                           std::uint64_t stream_seed, std::uint64_t step);

/// collect_group over a batch; the parallel path must match the serial one.
std::vector<RolloutGroup> collect_batch(const Policy& policy,
                                        const std::vector<TaskInstance>& instances,
                                        const TrainConfig& config, const TrainContext& context,
                                        std::uint64_t step, Exec exec);

/// Ascent direction of the batch surrogate (no parameter change).
SparseGradient surrogate_gradient(const Policy& policy, const std::vector<RolloutGroup>& groups,
                                  const TrainConfig& config, UpdateStats* stats = nullptr);

/// One gradient-ascent step on the clipped surrogate.
UpdateStats ppo_update(Policy& policy, const std::vector<RolloutGroup>& groups,
                       const TrainConfig& config, double learning_rate, std::uint64_t step);

double scheduled_learning_rate(const TrainConfig& config, std::uint64_t step);

/// Pinned evaluation prompts derived from eval_seed.
std::vector<TaskInstance> make_eval_set(const TrainConfig& config);

/// Supervised warm-up on verified solutions; returns the initial policy.
Policy warmup_policy(const TrainConfig& config, const TrainContext& context);

TrainContext make_context(const TrainConfig& config, const std::vector<TaskInstance>& eval_set);

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const TrainContext& context() const { return context_; }
  const Policy& policy() const { return policy_; }
  std::uint64_t step() const { return step_; }
  const std::vector<TaskInstance>& eval_set() const { return eval_set_; }

  /// Prompts for the next update, drawn from the master stream.
  std::vector<TaskInstance> next_batch();
  UpdateStats update();

  PolicyCheckpoint checkpoint() const;
  void restore(const PolicyCheckpoint& checkpoint);

 private:
  TrainConfig config_;
  std::vector<TaskInstance> eval_set_;
  TrainContext context_;
  Policy policy_;
  Rng rng_;
  std::uint64_t step_ = 0;
};

/// Draws a training instance whose prompt is not held out.
TaskInstance sample_training_instance(Rng& rng, const TrainConfig& config,
                                      const TrainContext& context);

}  // namespace dasd
