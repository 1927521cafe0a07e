#include "dasd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dasd {

namespace {

// Stream tags keep the derived seeds of unrelated consumers apart.
constexpr std::uint64_t kTagRollout = 0x726f6c6cULL;
constexpr std::uint64_t kTagWarmup = 0x7761726dULL;
constexpr std::uint64_t kTagEval = 0x6576616cULL;
constexpr std::uint64_t kTagMaster = 0x6d617374ULL;

}  // namespace

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::grpo: return "grpo";
    case TrainMode::opsd_sampled: return "opsd_sampled";
    case TrainMode::opsd_exact_kl: return "opsd_exact_kl";
    case TrainMode::novelty: return "novelty";
    case TrainMode::dasd: return "dasd";
    case TrainMode::ablation: return "ablation";
  }
  return "?";
}

std::string to_string(FlipArm a) {
  switch (a) {
    case FlipArm::none: return "none";
    case FlipArm::low_h: return "low_H";
    case FlipArm::high_h: return "high_H";
    case FlipArm::both: return "both";
  }
  return "?";
}

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

TrainMode parse_train_mode(const std::string& s) {
  for (auto m : {TrainMode::grpo, TrainMode::opsd_sampled, TrainMode::opsd_exact_kl,
                 TrainMode::novelty, TrainMode::dasd, TrainMode::ablation}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown mode '" + s + "'");
}

FlipArm parse_flip_arm(const std::string& s) {
  for (auto a : {FlipArm::none, FlipArm::low_h, FlipArm::high_h, FlipArm::both}) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown flip arm '" + s + "'");
}

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw std::invalid_argument("unknown lr schedule '" + s + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (!(routing.rho > 0.0 && routing.rho < 1.0)) fail("rho must lie in (0,1)");
  if (!(routing.eps > 0.0)) fail("eps must be positive");
  if (!(routing.gate_threshold > 0.0)) fail("gate_threshold must be positive");
  if (!(routing.delta_bar_limit > 0.0)) fail("delta_bar_limit must be positive");
  if (group_size < 2) fail("group_size must be >= 2");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be >= 0");
  if (!(eps_clip > 0.0 && eps_clip < 1.0)) fail("eps_clip must lie in (0,1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (batch_prompts < 1) fail("batch_prompts must be >= 1");
  if (updates < 0) fail("updates must be >= 0");
  if (max_len < 1) fail("max_len must be >= 1");
  if (difficulty_weights.size() != 3) fail("difficulty_weights needs three entries (2,3,4)");
  double total = 0.0;
  for (double w : difficulty_weights) {
    if (!(w >= 0.0)) fail("difficulty weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) fail("difficulty weights must not all be zero");
  TaskVocabulary vocab(modulus);
  if (window < 1 || window > kMaxWindow) fail("window must be in [1, 8]");
  if (warmup_examples < 0) fail("warmup_examples must be >= 0");
  if (!(warmup_lr >= 0.0)) fail("warmup_lr must be >= 0");
  if (!(warmup_revision_rate >= 0.0 && warmup_revision_rate <= 1.0)) {
    fail("warmup_revision_rate must lie in [0,1]");
  }
  if (eval_instances < 1) fail("eval_instances must be >= 1");
  if (eval_k < 1) fail("eval_k must be >= 1");
  if (eval_every < 0 || checkpoint_every < 0) fail("cadences must be >= 0");
  if (flip_step < 0) fail("flip_step must be >= 0");
  if (workers < 1) fail("workers must be >= 1");
}

RoutingConfig effective_routing(const TrainConfig& config) {
  RoutingConfig r = config.routing;
  switch (config.mode) {
    case TrainMode::grpo:
    case TrainMode::dasd:
      r.direction = DirectionMap::tanh;
      r.gate = GateKind::sigmoid_gap;
      r.signal = RouterSignal::entropy;
      break;
    case TrainMode::opsd_sampled:
    case TrainMode::opsd_exact_kl:
      r.direction = DirectionMap::const_plus;
      r.gate = GateKind::none;
      r.signal = RouterSignal::entropy;
      break;
    case TrainMode::novelty:
      r.direction = DirectionMap::const_minus;
      r.gate = GateKind::none;
      r.signal = RouterSignal::entropy;
      break;
    case TrainMode::ablation:
      break;
  }
  return r;
}

double effective_beta(const TrainConfig& config) {
  return config.mode == TrainMode::grpo ? 0.0 : config.beta;
}

double scheduled_learning_rate(const TrainConfig& config, std::uint64_t step) {
  if (config.lr_schedule == LrSchedule::constant || config.updates == 0) {
    return config.learning_rate;
  }
  const double frac = static_cast<double>(step) / static_cast<double>(config.updates);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void assign_credit(ScoredRollout& rollout, double a_group, const TrainConfig& config,
                   const TrainContext& context, std::uint64_t step) {
  const std::size_t n = rollout.evidence.size();
  std::vector<double> entropies(n), deltas(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& e = rollout.evidence[t];
    entropies[t] = e.entropy;
    deltas[t] = log_evidence_gap(e.teacher_logprob, e.student_logprob);
  }
  const RoutingConfig routing = effective_routing(config);
  rollout.scales = trajectory_scales(entropies, deltas, routing.rho);

  // The exact-KL mode replaces the sampled teacher term inside the update.
  const double beta = config.mode == TrainMode::opsd_exact_kl ? 0.0 : effective_beta(config);
  const bool flipping = config.flip_arm != FlipArm::none &&
                        step >= static_cast<std::uint64_t>(config.flip_step);

  rollout.credits.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    RouterAux aux;
    aux.position = t;
    aux.length = n;
    const auto tok = static_cast<std::size_t>(rollout.evidence[t].token_id);
    if (tok < context.token_frequency_scores.size()) {
      aux.token_frequency_score = context.token_frequency_scores[tok];
    }
    RoutedCredit c = routing_coefficient(entropies[t], rollout.scales, deltas[t], routing, aux);
    if (flipping) {
      const bool low = entropies[t] < rollout.scales.tau_rho;
      const bool high = entropies[t] > rollout.scales.tau_rho;
      const bool in_arm = (config.flip_arm == FlipArm::low_h && low) ||
                          (config.flip_arm == FlipArm::high_h && high) ||
                          (config.flip_arm == FlipArm::both && (low || high));
      if (in_arm) {
        c.router = -c.router;
        c.omega = -c.omega;
        c.phi = c.omega * c.delta_bar;
      }
    }
    finalize_credit(c, a_group, beta);
    rollout.credits[t] = c;
  }
}

RolloutGroup collect_group(const Policy& policy, const TaskInstance& instance,
                           const TrainConfig& config, const TrainContext& context,
                           std::uint64_t stream_seed, std::uint64_t step) {
  RolloutGroup group;
  group.instance = instance;
  const TokenId priv = privileged_context(instance);
  RolloutOptions opts{static_cast<std::size_t>(config.max_len), context.vocab.eos()};

  std::vector<double> rewards;
  for (int i = 0; i < config.group_size; ++i) {
    Rng rng = Rng::stream(stream_seed, static_cast<std::uint64_t>(i));
    const Trajectory traj = sample_rollout(policy, instance.prompt, opts, rng);
    ScoredRollout r;
    r.tokens = traj.tokens();
    std::vector<TokenId> prefix = instance.prompt;
    r.evidence.reserve(traj.steps.size());
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const auto& s = traj.steps[t];
      const auto teacher = policy.next_distribution(prefix, priv);
      r.evidence.push_back(TokenEvidence{t, s.token_id, s.logprob,
                                         std::log(teacher[static_cast<std::size_t>(s.token_id)]),
                                         s.entropy});
      prefix.push_back(s.token_id);
    }
    r.result = verify(instance, r.tokens);
    rewards.push_back(r.result.reward);
    group.rollouts.push_back(std::move(r));
  }
  group.advantage = group_relative_advantage(rewards, config.routing.eps);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    assign_credit(group.rollouts[i], group.advantage.advantages[i], config, context, step);
  }
  return group;
}

std::vector<RolloutGroup> collect_batch(const Policy& policy,
                                        const std::vector<TaskInstance>& instances,
                                        const TrainConfig& config, const TrainContext& context,
                                        std::uint64_t step, Exec exec) {
  std::vector<RolloutGroup> groups(instances.size());
  const auto n = static_cast<std::ptrdiff_t>(instances.size());
  auto seed_for = [&](std::ptrdiff_t slot) {
    return derive_seed(config.seed, kTagRollout, step, static_cast<std::uint64_t>(slot));
  };
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      groups[static_cast<std::size_t>(i)] =
          collect_group(policy, instances[static_cast<std::size_t>(i)], config, context,
                        seed_for(i), step);
    }
    return groups;
  }
#pragma omp parallel for schedule(dynamic) num_threads(config.workers)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    groups[static_cast<std::size_t>(i)] =
        collect_group(policy, instances[static_cast<std::size_t>(i)], config, context,
                      seed_for(i), step);
  }
  return groups;
}

SparseGradient surrogate_gradient(const Policy& policy, const std::vector<RolloutGroup>& groups,
                                  const TrainConfig& config, UpdateStats* stats) {
  SparseGradient grad;
  if (groups.empty()) return grad;
  const bool exact_kl = config.mode == TrainMode::opsd_exact_kl;
  const double beta = effective_beta(config);

  double surrogate = 0.0, reward_sum = 0.0, length_sum = 0.0, entropy_sum = 0.0;
  double abs_omega_sum = 0.0, max_dev = 0.0;
  std::size_t tokens = 0, omega_pos = 0, markers = 0, rollouts = 0;
  std::vector<double> all_entropies;

  // Fixed reduction order: groups by slot, rollouts by index, tokens by position.
  for (const auto& group : groups) {
    const double g_size = static_cast<double>(group.rollouts.size());
    const TokenId priv = privileged_context(group.instance);
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const auto& r = group.rollouts[i];
      ++rollouts;
      reward_sum += r.result.reward;
      length_sum += static_cast<double>(r.tokens.size());
      const double weight = 1.0 / (static_cast<double>(r.tokens.size()) * g_size);
      std::vector<TokenId> prefix = group.instance.prompt;
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const auto& ev = r.evidence[t];
        const auto& credit = r.credits[t];
        const ContextKey key = policy.key(prefix, std::nullopt);
        const auto p = policy.distribution(key);
        const auto tok = static_cast<std::size_t>(ev.token_id);
        const double new_logprob = std::log(p[tok]);
        const double ratio = std::exp(new_logprob - ev.student_logprob);
        max_dev = std::max(max_dev, std::abs(ratio - 1.0));

        const double slope = clipped_surrogate_slope(ratio, credit.a_hat, config.eps_clip);
        surrogate += weight * clipped_surrogate(ratio, credit.a_hat, config.eps_clip);
        std::vector<double> score(p.probs().begin(), p.probs().end());
        for (double& x : score) x = -x;
        score[tok] += 1.0;
        if (slope != 0.0) accumulate(grad, key, score, weight * slope * ratio);

        if (exact_kl && beta != 0.0) {
          const auto q = policy.next_distribution(prefix, priv);
          const double kl = kl_divergence(p, q);
          std::vector<double> kl_grad(p.size());
          for (std::size_t v = 0; v < p.size(); ++v) {
            kl_grad[v] = p[v] > 0.0 ? p[v] * (std::log(p[v]) - std::log(q[v]) - kl) : 0.0;
          }
          accumulate(grad, key, kl_grad, -beta * weight);
          surrogate -= beta * weight * kl;
        }

        ++tokens;
        entropy_sum += ev.entropy;
        all_entropies.push_back(ev.entropy);
        abs_omega_sum += std::abs(credit.omega);
        if (credit.omega > 0.0) ++omega_pos;
        if (ev.token_id == TaskVocabulary(group.instance.modulus).marker()) ++markers;
        prefix.push_back(ev.token_id);
      }
    }
  }

  if (!std::isfinite(surrogate)) {
    std::ostringstream msg;
    msg << "non-finite surrogate (" << surrogate << ") over " << tokens << " tokens";
    throw TrainingDiverged(msg.str());
  }
  for (const auto& [key, row] : grad) {
    for (double x : row) {
      if (!std::isfinite(x)) {
        throw TrainingDiverged("non-finite gradient at row " + std::to_string(key.code));
      }
    }
  }

  if (stats) {
    const double nt = static_cast<double>(std::max<std::size_t>(tokens, 1));
    const double nr = static_cast<double>(std::max<std::size_t>(rollouts, 1));
    stats->mean_reward = reward_sum / nr;
    stats->mean_length = length_sum / nr;
    stats->mean_entropy = entropy_sum / nt;
    stats->entropy_p80 = all_entropies.empty() ? 0.0 : quantile(all_entropies, 0.8);
    stats->mean_abs_omega = abs_omega_sum / nt;
    stats->frac_omega_positive = static_cast<double>(omega_pos) / nt;
    stats->surrogate = surrogate;
    stats->max_ratio_deviation = max_dev;
    stats->marker_rate = static_cast<double>(markers) / nt;
  }
  return grad;
}

UpdateStats ppo_update(Policy& policy, const std::vector<RolloutGroup>& groups,
                       const TrainConfig& config, double learning_rate, std::uint64_t step) {
  UpdateStats stats;
  stats.step = step;
  stats.learning_rate = learning_rate;
  const auto grad = surrogate_gradient(policy, groups, config, &stats);
  apply_update(policy, grad, learning_rate);
  return stats;
}

TaskInstance sample_training_instance(Rng& rng, const TrainConfig& config,
                                      const TrainContext& context) {
  const auto& w = config.difficulty_weights;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (;;) {
    const double u = rng.uniform() * total;
    int difficulty = 4;
    if (u < w[0]) {
      difficulty = 2;
    } else if (u < w[0] + w[1]) {
      difficulty = 3;
    }
    auto inst = generate_instance(rng, difficulty, config.modulus);
    if (!context.held_out_prompts.contains(inst.prompt)) return inst;
  }
}

std::vector<TaskInstance> make_eval_set(const TrainConfig& config) {
  Rng rng = Rng::stream(config.eval_seed, kTagEval);
  TrainContext empty{TaskVocabulary(config.modulus), {}, {}};
  std::set<std::vector<TokenId>> seen;
  std::vector<TaskInstance> out;
  // Bounded so a tiny instance space cannot loop forever.
  for (int attempts = 0; static_cast<int>(out.size()) < config.eval_instances && attempts < 100000;
       ++attempts) {
    auto inst = sample_training_instance(rng, config, empty);
    if (!seen.insert(inst.prompt).second) continue;
    inst.id = out.size();
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

struct WarmupExample {
  TaskInstance instance;
  std::vector<TokenId> student;  // sampled valid order, sometimes revised
  std::vector<TokenId> teacher;  // verified canonical solution
};

std::vector<WarmupExample> warmup_corpus(const TrainConfig& config, const TrainContext& context) {
  Rng rng = Rng::stream(config.seed, kTagWarmup);
  const int m = config.modulus;
  std::vector<WarmupExample> out;
  out.reserve(static_cast<std::size_t>(config.warmup_examples));
  for (int e = 0; e < config.warmup_examples; ++e) {
    WarmupExample ex;
    ex.instance = sample_training_instance(rng, config, context);
    const auto& orders = ex.instance.valid_orders;
    const std::size_t order = rng.below(orders.size());
    std::optional<std::size_t> revise;
    int wrong = 0;
    if (rng.uniform() < config.warmup_revision_rate) {
      const std::size_t s = rng.below(orders[order].size());
      revise = s;
      wrong = (orders[order][s] + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - 1)))) % m;
    }
    ex.student = solution_tokens(ex.instance, order, revise, wrong);
    ex.teacher = ex.instance.trace;
    out.push_back(std::move(ex));
  }
  return out;
}

void sft_step(Policy& policy, std::span<const TokenId> prompt, std::span<const TokenId> tokens,
              std::optional<TokenId> privileged, double lr) {
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  for (TokenId tok : tokens) {
    const auto grad = logprob_grad(policy, prefix, privileged, tok);
    apply_update(policy, grad, lr);
    prefix.push_back(tok);
  }
}

}  // namespace

TrainContext make_context(const TrainConfig& config, const std::vector<TaskInstance>& eval_set) {
  TrainContext ctx{TaskVocabulary(config.modulus), {}, {}};
  if (config.exclude_eval_prompts) {
    for (const auto& inst : eval_set) ctx.held_out_prompts.insert(inst.prompt);
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(ctx.vocab.size()), 0);
  for (const auto& ex : warmup_corpus(config, ctx)) {
    for (TokenId t : ex.student) ++counts[static_cast<std::size_t>(t)];
  }
  ctx.token_frequency_scores = token_frequency_scores(counts);
  return ctx;
}

Policy warmup_policy(const TrainConfig& config, const TrainContext& context) {
  Policy policy(context.vocab.size(), config.window, context.vocab.bos());
  for (const auto& ex : warmup_corpus(config, context)) {
    sft_step(policy, ex.instance.prompt, ex.student, std::nullopt, config.warmup_lr);
    sft_step(policy, ex.instance.prompt, ex.teacher, privileged_context(ex.instance),
             config.warmup_lr);
  }
  return policy;
}

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)),
      eval_set_((config_.validate(), make_eval_set(config_))),
      context_(make_context(config_, eval_set_)),
      policy_(warmup_policy(config_, context_)),
      rng_(derive_seed(config_.seed, kTagMaster)) {}

std::vector<TaskInstance> Trainer::next_batch() {
  std::vector<TaskInstance> batch;
  for (int b = 0; b < config_.batch_prompts; ++b) {
    auto inst = sample_training_instance(rng_, config_, context_);
    inst.id = step_ * static_cast<std::uint64_t>(config_.batch_prompts) + static_cast<std::uint64_t>(b);
    batch.push_back(std::move(inst));
  }
  return batch;
}

UpdateStats Trainer::update() {
  const auto batch = next_batch();
  const auto groups = collect_batch(policy_, batch, config_, context_, step_,
                                    config_.workers > 1 ? Exec::parallel : Exec::serial);
  auto stats = ppo_update(policy_, groups, config_, scheduled_learning_rate(config_, step_), step_);
  ++step_;
  return stats;
}

PolicyCheckpoint Trainer::checkpoint() const {
  PolicyCheckpoint ck;
  ck.vocabulary = context_.vocab.describe();
  ck.step = step_;
  ck.rng_state = rng_.state();
  ck.policy = policy_;
  return ck;
}

void Trainer::restore(const PolicyCheckpoint& ck) {
  if (ck.vocabulary != context_.vocab.describe()) {
    throw std::invalid_argument("checkpoint vocabulary '" + ck.vocabulary +
                                "' does not match config");
  }
  if (ck.policy.window() != config_.window) {
    throw std::invalid_argument("checkpoint window does not match config");
  }
  policy_ = ck.policy;
  step_ = ck.step;
  rng_.set_state(ck.rng_state);
}

}  // namespace dasd
