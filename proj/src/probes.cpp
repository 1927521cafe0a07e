#include "dasd/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dasd {

namespace {

constexpr std::uint64_t kTagIntervention = 0x696e7476ULL;
constexpr std::uint64_t kTagFork = 0x666f726bULL;
constexpr std::uint64_t kTagRevision = 0x72657673ULL;

RolloutOptions options_for(const TaskInstance& instance, int max_len) {
  const TaskVocabulary vocab(instance.modulus);
  return RolloutOptions{static_cast<std::size_t>(max_len), vocab.eos()};
}

std::vector<TokenId> prefix_at(const TaskInstance& instance, const Trajectory& traj,
                               std::size_t t) {
  std::vector<TokenId> prefix = instance.prompt;
  for (std::size_t i = 0; i < t; ++i) prefix.push_back(traj.steps[i].token_id);
  return prefix;
}

std::size_t argmax_index(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

std::size_t argmin_index(std::span<const double> xs) {
  return static_cast<std::size_t>(std::min_element(xs.begin(), xs.end()) - xs.begin());
}

std::vector<double> entropies_of(const Trajectory& traj) {
  std::vector<double> out;
  out.reserve(traj.steps.size());
  for (const auto& s : traj.steps) out.push_back(s.entropy);
  return out;
}

// Correct-step fraction in percent; rollouts with no parsed step score 0.
double rollout_step_acc(const TaskInstance& instance, const Trajectory& traj) {
  const auto v = verify(instance, traj.tokens());
  if (v.step_flags.empty()) return 0.0;
  const auto ok = std::count(v.step_flags.begin(), v.step_flags.end(), true);
  return 100.0 * static_cast<double>(ok) / static_cast<double>(v.step_flags.size());
}

double rollout_e_density(const TaskInstance& instance, const Trajectory& traj) {
  if (traj.steps.empty()) return 0.0;
  const TaskVocabulary vocab(instance.modulus);
  std::size_t markers = 0;
  for (const auto& s : traj.steps) markers += s.token_id == vocab.marker();
  return 100.0 * static_cast<double>(markers) / static_cast<double>(traj.steps.size());
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

std::optional<double> percent_change(double base, double value) {
  if (base == 0.0) return std::nullopt;
  return 100.0 * (value - base) / base;
}

std::pair<double, double> mean_and_se(std::span<const double> xs) {
  const double m = mean_of(xs);
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double var = ss / static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

template <typename F>
void run_indexed(std::ptrdiff_t n, Exec exec, int workers, F&& f) {
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
  } else {
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
  }
}

}  // namespace

Trajectory guided_rollout(const Policy& policy, std::span<const TokenId> prompt,
                          const RolloutOptions& options, Rng& rng, const DistOverride& override) {
  if (options.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  Trajectory traj;
  for (std::size_t t = 0; t < options.max_len; ++t) {
    const auto student = policy.next_distribution(prefix);
    const auto replaced = override ? override(t, prefix) : std::nullopt;
    const auto& dist = replaced ? *replaced : student;
    const TokenId tok = sample_index(dist, rng.uniform());
    traj.steps.push_back(
        {tok, std::log(student[static_cast<std::size_t>(tok)]), token_entropy(student)});
    prefix.push_back(tok);
    if (options.stop_token && tok == *options.stop_token) break;
  }
  return traj;
}

CategoricalDist novelty_distribution(const CategoricalDist& student, const CategoricalDist& teacher,
                                     double alpha) {
  if (student.size() != teacher.size()) {
    throw std::invalid_argument("novelty_distribution: size mismatch");
  }
  double floor = 1.0;
  for (double q : teacher.probs()) {
    if (q > 0.0) floor = std::min(floor, q);
  }
  std::vector<double> w(student.size());
  double total = 0.0;
  for (std::size_t v = 0; v < w.size(); ++v) {
    const double q = teacher[v] > 0.0 ? teacher[v] : floor;
    w[v] = student[v] * std::pow(q, -alpha);
    total += w[v];
  }
  for (double& x : w) x /= total;
  return CategoricalDist(std::move(w));
}

CategoricalDist mask_token(const CategoricalDist& dist, TokenId masked) {
  const auto m = static_cast<std::size_t>(masked);
  if (m >= dist.size()) throw std::out_of_range("mask_token: token outside vocabulary");
  if (dist.size() < 2) throw std::invalid_argument("mask_token: nothing left after masking");
  std::vector<double> p(dist.probs().begin(), dist.probs().end());
  p[m] = 0.0;
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (total <= 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size() - 1));
    p[m] = 0.0;
  } else {
    for (double& x : p) x /= total;
  }
  return CategoricalDist(std::move(p));
}

// ---------------------------------------------------------------------------

RunResult signflip_probe(TrainConfig config, int sign, const RunHooks& hooks) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("signflip_probe: sign must be +1 or -1");
  config.mode = sign > 0 ? TrainMode::opsd_sampled : TrainMode::novelty;
  return train_run(config, hooks);
}

// ---------------------------------------------------------------------------

std::vector<TokenRecord> token_records(const std::vector<RolloutGroup>& groups) {
  std::vector<TokenRecord> out;
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      for (const auto& e : r.evidence) {
        out.push_back({e.entropy, log_evidence_gap(e.teacher_logprob, e.student_logprob)});
      }
    }
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: size mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

PressureReport pressure_vs_entropy(std::span<const TokenRecord> records) {
  if (records.size() < kMinPressureTokens) {
    throw std::invalid_argument("pressure_vs_entropy: needs at least " +
                                std::to_string(kMinPressureTokens) + " tokens");
  }
  std::vector<double> h, d;
  for (const auto& r : records) {
    h.push_back(r.entropy);
    d.push_back(r.delta);
  }
  PressureReport out;
  out.tokens = records.size();
  out.spearman = spearman(h, d);
  std::vector<double> edges;
  for (int k = 0; k <= 10; ++k) edges.push_back(quantile(h, k / 10.0));
  for (int b = 0; b < 10; ++b) {
    PressureBin bin{edges[b], edges[b + 1], 0, std::nullopt, std::nullopt};
    double sh = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const bool last = b == 9;
      if (h[i] >= bin.lo && (h[i] < bin.hi || (last && h[i] <= bin.hi))) {
        ++bin.count;
        sh += h[i];
        sd += d[i];
      }
    }
    if (bin.count > 0) {
      bin.mean_entropy = sh / static_cast<double>(bin.count);
      bin.mean_delta = sd / static_cast<double>(bin.count);
    }
    out.bins.push_back(bin);
  }
  return out;
}

// ---------------------------------------------------------------------------

TvShiftResult tv_shift_groups(const Policy& policy, const std::vector<RolloutGroup>& groups,
                              const TrainConfig& config, double learning_rate) {
  TvShiftResult out;
  out.learning_rate = learning_rate;
  out.sign = config.mode == TrainMode::novelty ? -1 : 1;
  Policy scratch = policy;
  apply_update(scratch, surrogate_gradient(policy, groups, config), learning_rate);
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      std::vector<TokenId> prefix = g.instance.prompt;
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const auto before = policy.next_distribution(prefix);
        const auto after = scratch.next_distribution(prefix);
        const double delta = t < r.evidence.size()
                                 ? log_evidence_gap(r.evidence[t].teacher_logprob,
                                                    r.evidence[t].student_logprob)
                                 : 0.0;
        out.records.push_back({token_entropy(before), tv_distance(before, after), delta});
        prefix.push_back(r.tokens[t]);
      }
    }
  }
  return out;
}

TvShiftResult tv_shift(const Policy& policy, int sign, const std::vector<TaskInstance>& prompts,
                       const TrainConfig& config, const TrainContext& context) {
  if (prompts.empty()) throw std::invalid_argument("tv_shift: no prompts");
  if (sign != 1 && sign != -1) throw std::invalid_argument("tv_shift: sign must be +1 or -1");
  TrainConfig c = config;
  c.mode = sign > 0 ? TrainMode::opsd_sampled : TrainMode::novelty;
  const auto groups = collect_batch(policy, prompts, c, context, 0, Exec::serial);
  return tv_shift_groups(policy, groups, c, c.learning_rate);
}

// ---------------------------------------------------------------------------

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::low_H: return "low_H";
    case Bucket::high_H: return "high_H";
    case Bucket::random_control: return "random_control";
  }
  return "?";
}

std::string to_string(InterventionMode m) {
  return m == InterventionMode::conformity ? "conformity" : "novelty";
}

Bucket parse_bucket(const std::string& s) {
  if (s == "low_H") return Bucket::low_H;
  if (s == "high_H") return Bucket::high_H;
  if (s == "random_control" || s == "random") return Bucket::random_control;
  throw std::invalid_argument("unknown bucket '" + s + "'");
}

void InterventionSpec::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("intervention alpha must be > 0");
  if (!(threshold_quantile > 0.0 && threshold_quantile < 1.0)) {
    throw std::invalid_argument("intervention threshold_quantile must lie in (0, 1)");
  }
}

InterventionOutcome intervene_rollout(const Policy& policy, const TaskInstance& instance,
                                      const InterventionSpec& spec, int max_len,
                                      std::uint64_t stream_seed) {
  spec.validate();
  const auto opts = options_for(instance, max_len);
  InterventionOutcome out;
  {
    Rng rng = Rng::stream(stream_seed, 0);
    out.baseline = sample_rollout(policy, instance.prompt, opts, rng);
  }
  const auto h = entropies_of(out.baseline);
  if (spec.bucket == Bucket::random_control) {
    Rng pick = Rng::stream(stream_seed, 1);
    out.position = static_cast<std::size_t>(pick.below(h.size()));
  } else {
    const double tau = quantile(h, spec.threshold_quantile);
    for (std::size_t t = 0; t < h.size(); ++t) {
      const bool hit = spec.bucket == Bucket::low_H ? h[t] < tau : h[t] > tau;
      if (hit) {
        out.position = t;
        break;
      }
    }
  }
  if (!out.position) {
    out.intervened = out.baseline;
    return out;
  }
  const std::size_t site = *out.position;
  const TokenId priv = privileged_context(instance);
  const DistOverride override = [&](std::size_t t,
                                    std::span<const TokenId> prefix) -> std::optional<CategoricalDist> {
    if (t != site) return std::nullopt;
    const auto teacher = policy.next_distribution(prefix, priv);
    if (spec.mode == InterventionMode::conformity) return teacher;
    return novelty_distribution(policy.next_distribution(prefix), teacher, spec.alpha);
  };
  Rng rng = Rng::stream(stream_seed, 0);
  out.intervened = guided_rollout(policy, instance.prompt, opts, rng, override);
  return out;
}

std::vector<InterventionSpec> standard_intervention_grid(double alpha, double threshold_quantile) {
  std::vector<InterventionSpec> out;
  for (Bucket b : {Bucket::low_H, Bucket::high_H, Bucket::random_control}) {
    for (InterventionMode m : {InterventionMode::conformity, InterventionMode::novelty}) {
      out.push_back({b, m, alpha, threshold_quantile});
    }
  }
  return out;
}

InterventionReport intervention_report(const Policy& policy,
                                       const std::vector<TaskInstance>& eval_set,
                                       const std::vector<InterventionSpec>& specs, int n_samples,
                                       int max_len, std::uint64_t seed, Exec exec, int workers) {
  if (eval_set.empty()) throw std::invalid_argument("intervention_report: empty eval set");
  if (n_samples < kMinInterventionSamples) {
    throw std::invalid_argument("intervention_report: needs at least " +
                                std::to_string(kMinInterventionSamples) + " samples per cell");
  }
  for (const auto& s : specs) s.validate();
  const auto n = static_cast<std::size_t>(n_samples);
  InterventionReport report;
  report.n_samples = n;
  for (const auto& spec : specs) {
    std::vector<double> base_acc(n), acc(n), base_e(n), e(n);
    std::vector<char> skipped(n, 0);
    run_indexed(static_cast<std::ptrdiff_t>(n), exec, workers, [&](std::ptrdiff_t i) {
      const auto r = static_cast<std::size_t>(i);
      const auto& inst = eval_set[r % eval_set.size()];
      const auto o =
          intervene_rollout(policy, inst, spec, max_len, derive_seed(seed, kTagIntervention, r));
      base_acc[r] = rollout_step_acc(inst, o.baseline);
      base_e[r] = rollout_e_density(inst, o.baseline);
      if (!o.position) {
        skipped[r] = 1;
        acc[r] = base_acc[r];
        e[r] = base_e[r];
      } else {
        acc[r] = rollout_step_acc(inst, o.intervened);
        e[r] = rollout_e_density(inst, o.intervened);
      }
    });
    InterventionCell cell;
    cell.spec = spec;
    cell.samples = n;
    cell.skipped = static_cast<std::size_t>(std::count(skipped.begin(), skipped.end(), 1));
    cell.base_step_acc = mean_of(base_acc);
    cell.step_acc = mean_of(acc);
    cell.base_e_density = mean_of(base_e);
    cell.e_density = mean_of(e);
    cell.d_step_acc = percent_change(cell.base_step_acc, cell.step_acc);
    cell.d_e_density = percent_change(cell.base_e_density, cell.e_density);
    const std::size_t problems = std::min(n, eval_set.size());
    std::vector<double> pd_acc(problems, 0.0), pd_e(problems, 0.0), cnt(problems, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t p = r % eval_set.size();
      pd_acc[p] += acc[r] - base_acc[r];
      pd_e[p] += e[r] - base_e[r];
      cnt[p] += 1.0;
    }
    for (std::size_t p = 0; p < problems; ++p) {
      pd_acc[p] /= cnt[p];
      pd_e[p] /= cnt[p];
    }
    cell.problems = problems;
    std::tie(cell.cluster_d_step_acc, cell.cluster_se_step_acc) = mean_and_se(pd_acc);
    std::tie(cell.cluster_d_e_density, cell.cluster_se_e_density) = mean_and_se(pd_e);
    report.cells.push_back(cell);
  }
  return report;
}

// ---------------------------------------------------------------------------

RunResult arm_flip_run(TrainConfig config, FlipArm arm, int flip_step, const RunHooks& hooks) {
  if (flip_step < 0 || flip_step > config.updates) {
    throw std::invalid_argument("arm_flip_run: flip_step must lie in [0, updates]");
  }
  config.mode = TrainMode::dasd;
  config.flip_arm = arm;
  config.flip_step = flip_step;
  return train_run(config, hooks);
}

// ---------------------------------------------------------------------------

ForkResult causal_fork_intervention(const Policy& policy, const std::vector<TaskInstance>& eval_set,
                                    Bucket target, int n, int max_len, std::uint64_t seed) {
  if (eval_set.empty()) throw std::invalid_argument("causal_fork_intervention: empty eval set");
  if (n < 1) throw std::invalid_argument("causal_fork_intervention: n must be >= 1");
  ForkResult out;
  out.samples = static_cast<std::size_t>(n);
  std::size_t degenerate = 0;
  double base_reward = 0.0, reward = 0.0, base_rev = 0.0, rev = 0.0;
  for (std::size_t r = 0; r < out.samples; ++r) {
    const auto& inst = eval_set[r % eval_set.size()];
    const TaskVocabulary vocab(inst.modulus);
    const auto opts = options_for(inst, max_len);
    const std::uint64_t s = derive_seed(seed, kTagFork, r);
    Rng rng = Rng::stream(s, 0);
    const auto base = sample_rollout(policy, inst.prompt, opts, rng);
    const auto h = entropies_of(base);
    std::size_t site = 0;
    if (target == Bucket::high_H) {
      site = argmax_index(h);
      if (h[site] == 0.0) ++degenerate;
    } else if (target == Bucket::low_H) {
      site = argmin_index(h);
    } else {
      Rng pick = Rng::stream(s, 1);
      site = static_cast<std::size_t>(pick.below(h.size()));
    }
    const auto teacher =
        policy.next_distribution(prefix_at(inst, base, site), privileged_context(inst));
    const auto best = static_cast<TokenId>(argmax_index(teacher.probs()));
    Trajectory edited = base;
    if (best != base.steps[site].token_id) {
      ++out.changed;
      std::vector<double> point(teacher.size(), 0.0);
      point[static_cast<std::size_t>(best)] = 1.0;
      const CategoricalDist forced(std::move(point));
      Rng replay = Rng::stream(s, 0);
      edited = guided_rollout(policy, inst.prompt, opts, replay,
                              [&](std::size_t t, std::span<const TokenId>) {
                                return t == site ? std::optional<CategoricalDist>(forced)
                                                 : std::nullopt;
                              });
    }
    base_reward += verify(inst, base.tokens()).reward;
    reward += verify(inst, edited.tokens()).reward;
    base_rev += has_revision(base.tokens(), vocab.marker()) ? 1.0 : 0.0;
    rev += has_revision(edited.tokens(), vocab.marker()) ? 1.0 : 0.0;
  }
  if (degenerate > 0) {
    out.warnings.push_back(std::to_string(degenerate) +
                           " rollouts had all-zero entropy; high_H fell back to position 0");
  }
  const double nn = static_cast<double>(out.samples);
  out.base_reward = base_reward / nn;
  out.reward = reward / nn;
  out.base_rev_rate = base_rev / nn;
  out.rev_rate = rev / nn;
  out.d_reward = out.reward - out.base_reward;
  out.d_rev_rate = out.rev_rate - out.base_rev_rate;
  return out;
}

std::string to_string(RevisionAction a) {
  switch (a) {
    case RevisionAction::preserve: return "preserve";
    case RevisionAction::suppress: return "suppress";
    case RevisionAction::teacher_force: return "teacher_force";
  }
  return "?";
}

RevisionAction parse_revision_action(const std::string& s) {
  if (s == "preserve") return RevisionAction::preserve;
  if (s == "suppress") return RevisionAction::suppress;
  if (s == "teacher_force") return RevisionAction::teacher_force;
  throw std::invalid_argument("unknown revision action '" + s + "'");
}

RevisionResult revision_intervention(const Policy& policy,
                                     const std::vector<TaskInstance>& eval_set,
                                     RevisionAction action, int n, int max_len,
                                     std::uint64_t seed) {
  if (eval_set.empty()) throw std::invalid_argument("revision_intervention: empty eval set");
  if (n < 1) throw std::invalid_argument("revision_intervention: n must be >= 1");
  RevisionResult out;
  out.samples = static_cast<std::size_t>(n);
  double base_ok = 0.0, ok = 0.0;
  for (std::size_t r = 0; r < out.samples; ++r) {
    const auto& inst = eval_set[r % eval_set.size()];
    const TaskVocabulary vocab(inst.modulus);
    const TokenId marker = vocab.marker();
    const auto opts = options_for(inst, max_len);
    const std::uint64_t s = derive_seed(seed, kTagRevision, r);
    Rng rng = Rng::stream(s, 0);
    const auto base = sample_rollout(policy, inst.prompt, opts, rng);
    std::optional<std::size_t> site;
    for (std::size_t t = 0; t < base.steps.size(); ++t) {
      if (base.steps[t].token_id == marker) {
        site = t;
        break;
      }
    }
    if (!site) continue;
    ++out.marker_prefixes;
    const std::size_t at = *site;
    const TokenId priv = privileged_context(inst);
    DistOverride override;
    if (action == RevisionAction::suppress) {
      override = [&](std::size_t t, std::span<const TokenId> prefix) -> std::optional<CategoricalDist> {
        if (t < at) return std::nullopt;
        return mask_token(policy.next_distribution(prefix), marker);
      };
    } else if (action == RevisionAction::teacher_force) {
      override = [&](std::size_t t, std::span<const TokenId> prefix) -> std::optional<CategoricalDist> {
        if (t <= at) return std::nullopt;
        return policy.next_distribution(prefix, priv);
      };
    }
    Rng replay = Rng::stream(s, 0);
    const auto edited = guided_rollout(policy, inst.prompt, opts, replay, override);
    base_ok += verify(inst, base.tokens()).reward;
    ok += verify(inst, edited.tokens()).reward;
  }
  out.low_power = out.marker_prefixes < kMinRevisionPrefixes;
  if (out.marker_prefixes > 0) {
    const double m = static_cast<double>(out.marker_prefixes);
    out.base_correct = base_ok / m;
    out.correct = ok / m;
    out.d_correct = out.correct - out.base_correct;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json opt_json(const std::optional<double>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const PressureReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"mean_entropy", opt_json(b.mean_entropy)},
                    {"mean_delta", opt_json(b.mean_delta)}});
  }
  return {{"schema", kProbeSchema},
          {"probe", "pressure"},
          {"tokens", r.tokens},
          {"spearman", opt_json(r.spearman)},
          {"bins", bins}};
}

nlohmann::json to_json(const TvRecord& r) {
  return {{"entropy", r.entropy}, {"tv", r.tv}, {"delta", r.delta}};
}

nlohmann::json to_json(const InterventionCell& c) {
  return {{"schema", kProbeSchema},
          {"probe", "intervention"},
          {"bucket", to_string(c.spec.bucket)},
          {"mode", to_string(c.spec.mode)},
          {"alpha", c.spec.alpha},
          {"threshold_quantile", c.spec.threshold_quantile},
          {"d_step_acc_pct", opt_json(c.d_step_acc)},
          {"d_e_density_pct", opt_json(c.d_e_density)},
          {"base_step_acc", c.base_step_acc},
          {"step_acc", c.step_acc},
          {"base_e_density", c.base_e_density},
          {"e_density", c.e_density},
          {"samples", c.samples},
          {"skipped", c.skipped},
          {"problems", c.problems},
          {"cluster_d_step_acc", c.cluster_d_step_acc},
          {"cluster_se_step_acc", c.cluster_se_step_acc},
          {"cluster_d_e_density", c.cluster_d_e_density},
          {"cluster_se_e_density", c.cluster_se_e_density}};
}

nlohmann::json to_json(const ForkResult& r) {
  return {{"schema", kProbeSchema},     {"probe", "fork"},
          {"samples", r.samples},       {"changed", r.changed},
          {"base_reward", r.base_reward}, {"reward", r.reward},
          {"base_rev_rate", r.base_rev_rate}, {"rev_rate", r.rev_rate},
          {"d_reward", r.d_reward},     {"d_rev_rate", r.d_rev_rate},
          {"warnings", r.warnings}};
}

nlohmann::json to_json(const RevisionResult& r) {
  return {{"schema", kProbeSchema},
          {"probe", "revision"},
          {"samples", r.samples},
          {"marker_prefixes", r.marker_prefixes},
          {"low_power", r.low_power},
          {"base_correct", r.base_correct},
          {"correct", r.correct},
          {"d_correct", r.d_correct}};
}

}  // namespace dasd
