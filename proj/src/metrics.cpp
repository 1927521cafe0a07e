#include "dasd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace dasd {

namespace {

constexpr std::uint64_t kTagEvalRollout = 0x65726f6cULL;

using Trigram = std::tuple<TokenId, TokenId, TokenId>;

std::vector<Trigram> trigrams(std::span<const TokenId> t) {
  std::vector<Trigram> out;
  for (std::size_t i = 0; i + 2 < t.size(); ++i) out.emplace_back(t[i], t[i + 1], t[i + 2]);
  return out;
}

void require_nonempty(const std::vector<EvalSample>& samples) {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.rollouts.size();
  if (n == 0) throw EmptyReportError("empty evaluation set");
}

}  // namespace

EvalRollout score_rollout(const TaskInstance& instance, const Trajectory& trajectory) {
  EvalRollout r;
  r.tokens = trajectory.tokens();
  for (const auto& s : trajectory.steps) r.entropies.push_back(s.entropy);
  const auto v = verify(instance, r.tokens);
  r.reward = v.reward;
  r.step_flags = v.step_flags;
  r.first_error_step = v.first_error_step;
  return r;
}

std::vector<EvalSample> evaluate(const Policy& policy, const std::vector<TaskInstance>& instances,
                                 int k, int max_len, std::uint64_t seed, Exec exec, int workers) {
  if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
  std::vector<EvalSample> out(instances.size());
  const auto n = static_cast<std::ptrdiff_t>(instances.size());
  auto run = [&](std::ptrdiff_t i) {
    const auto& inst = instances[static_cast<std::size_t>(i)];
    const TaskVocabulary vocab(inst.modulus);
    RolloutOptions opts{static_cast<std::size_t>(max_len), vocab.eos()};
    EvalSample s;
    s.instance_id = inst.id;
    for (int j = 0; j < k; ++j) {
      Rng rng = Rng::stream(seed, kTagEvalRollout, static_cast<std::uint64_t>(i),
                            static_cast<std::uint64_t>(j));
      s.rollouts.push_back(score_rollout(inst, sample_rollout(policy, inst.prompt, opts, rng)));
    }
    out[static_cast<std::size_t>(i)] = std::move(s);
  };
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) run(i);
  } else {
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (std::ptrdiff_t i = 0; i < n; ++i) run(i);
  }
  return out;
}

double avg_at_k(const std::vector<EvalSample>& samples, int k) {
  if (k <= 0) throw std::invalid_argument("avg_at_k: k must be positive");
  if (samples.empty()) throw EmptyReportError("avg_at_k: empty evaluation set");
  double total = 0.0;
  for (const auto& s : samples) {
    if (s.rollouts.size() < static_cast<std::size_t>(k)) {
      throw std::invalid_argument("avg_at_k: instance has fewer than k rollouts");
    }
    double c = 0.0;
    for (int j = 0; j < k; ++j) c += s.rollouts[static_cast<std::size_t>(j)].reward;
    total += c / k;
  }
  return 100.0 * total / static_cast<double>(samples.size());
}

double pass_at_k(int n, int c, int k) {
  if (k < 1 || k > n) throw std::invalid_argument("pass_at_k: need 1 <= k <= n");
  if (c < 0 || c > n) throw std::invalid_argument("pass_at_k: need 0 <= c <= n");
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k/i)
  double ratio = 1.0;
  for (int i = n - c + 1; i <= n; ++i) ratio *= 1.0 - static_cast<double>(k) / i;
  return 1.0 - ratio;
}

double mean_pass_at_k(const std::vector<EvalSample>& samples, int k) {
  if (samples.empty()) throw EmptyReportError("pass_at_k: empty evaluation set");
  double total = 0.0;
  for (const auto& s : samples) {
    int c = 0;
    for (const auto& r : s.rollouts) c += r.reward > 0.5 ? 1 : 0;
    total += pass_at_k(static_cast<int>(s.rollouts.size()), c, k);
  }
  return total / static_cast<double>(samples.size());
}

StepMetrics step_metrics(const std::vector<EvalSample>& samples) {
  require_nonempty(samples);
  StepMetrics m;
  double acc = 0.0, fes = 0.0;
  std::size_t pooled_ok = 0, pooled = 0;
  for (const auto& s : samples) {
    for (const auto& r : s.rollouts) {
      if (r.step_flags.empty()) {
        ++m.rollouts_without_steps;
        continue;
      }
      const auto ok = static_cast<std::size_t>(std::count(r.step_flags.begin(), r.step_flags.end(), true));
      acc += static_cast<double>(ok) / static_cast<double>(r.step_flags.size());
      fes += r.first_error_step ? static_cast<double>(*r.first_error_step + 1)
                                : static_cast<double>(r.step_flags.size() + 1);
      pooled_ok += ok;
      pooled += r.step_flags.size();
      ++m.rollouts_used;
    }
  }
  if (m.rollouts_used == 0) return m;
  const double n = static_cast<double>(m.rollouts_used);
  m.step_acc = 100.0 * acc / n;
  m.first_error_step = fes / n;
  m.correct_step_ratio = 100.0 * static_cast<double>(pooled_ok) / static_cast<double>(pooled);
  return m;
}

std::optional<double> trigram_overlap(std::span<const TokenId> pre, std::span<const TokenId> post) {
  const auto post_tri = trigrams(post);
  if (post_tri.empty()) return std::nullopt;
  const auto pre_list = trigrams(pre);
  const std::set<Trigram> pre_set(pre_list.begin(), pre_list.end());
  std::size_t shared = 0;
  for (const auto& t : post_tri) shared += pre_set.contains(t) ? 1 : 0;
  return static_cast<double>(shared) / static_cast<double>(post_tri.size());
}

bool has_revision(std::span<const TokenId> tokens, TokenId marker) {
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j] != marker) continue;
    const std::size_t lo = j > kRevisionWindow ? j - kRevisionWindow : 0;
    const std::size_t hi = std::min(tokens.size(), j + 1 + kRevisionWindow);
    const auto overlap = trigram_overlap(tokens.subspan(lo, j - lo), tokens.subspan(j + 1, hi - j - 1));
    if (overlap && *overlap <= kRevisionOverlap) return true;
  }
  return false;
}

ExplorationMetrics exploration_metrics(const std::vector<EvalSample>& samples, TokenId marker) {
  require_nonempty(samples);
  ExplorationMetrics m;
  std::size_t markers = 0, tokens = 0, rollouts = 0, revised = 0;
  double distinct_sum = 0.0;
  std::size_t distinct_n = 0;
  for (const auto& s : samples) {
    std::set<Trigram> unique;
    std::size_t total_tri = 0;
    for (const auto& r : s.rollouts) {
      ++rollouts;
      tokens += r.tokens.size();
      markers += static_cast<std::size_t>(std::count(r.tokens.begin(), r.tokens.end(), marker));
      if (has_revision(r.tokens, marker)) ++revised;
      for (const auto& t : trigrams(r.tokens)) {
        unique.insert(t);
        ++total_tri;
      }
    }
    if (total_tri > 0) {
      distinct_sum += static_cast<double>(unique.size()) / static_cast<double>(total_tri);
      ++distinct_n;
    }
  }
  m.e_density = tokens ? 100.0 * static_cast<double>(markers) / static_cast<double>(tokens) : 0.0;
  m.rev_rate = static_cast<double>(revised) / static_cast<double>(rollouts);
  m.distinct3 = distinct_n ? distinct_sum / static_cast<double>(distinct_n) : 0.0;
  return m;
}

EntropyHistogram entropy_histogram(std::span<const double> entropies, int vocab_size, int bins) {
  if (bins < 10) throw std::invalid_argument("entropy_histogram: bins must be >= 10");
  if (vocab_size < 2) throw std::invalid_argument("entropy_histogram: vocabulary too small");
  EntropyHistogram h;
  h.upper = std::log(static_cast<double>(vocab_size));
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = h.upper / bins;
  for (double e : entropies) {
    auto idx = static_cast<std::ptrdiff_t>(std::floor(e / width));
    idx = std::clamp<std::ptrdiff_t>(idx, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  for (auto c : h.counts) h.log_counts.push_back(std::log10(static_cast<double>(c) + 1.0));
  h.total = entropies.size();
  if (!entropies.empty()) {
    h.p50 = quantile(entropies, 0.50);
    h.p80 = quantile(entropies, 0.80);
    h.p95 = quantile(entropies, 0.95);
  }
  return h;
}

EntropyHistogram entropy_histogram(const std::vector<EvalSample>& samples, int vocab_size,
                                   int bins) {
  std::vector<double> pooled;
  for (const auto& s : samples) {
    for (const auto& r : s.rollouts) pooled.insert(pooled.end(), r.entropies.begin(), r.entropies.end());
  }
  return entropy_histogram(pooled, vocab_size, bins);
}

HealthReport health_report(const std::vector<EvalSample>& samples, TokenId marker,
                           int vocab_size) {
  require_nonempty(samples);
  HealthReport h;
  const auto st = step_metrics(samples);
  h.step_acc = st.step_acc;
  h.first_error_step = st.first_error_step;
  h.correct_step_ratio = st.correct_step_ratio;
  const auto ex = exploration_metrics(samples, marker);
  h.e_density = ex.e_density;
  h.rev_rate = ex.rev_rate;
  h.distinct3 = ex.distinct3;
  std::size_t k = samples.front().rollouts.size();
  for (const auto& s : samples) k = std::min(k, s.rollouts.size());
  h.avg_at_k = avg_at_k(samples, static_cast<int>(k));
  for (std::size_t j = 1; j <= k; j *= 2) {
    h.pass_at_k.emplace_back(static_cast<int>(j), mean_pass_at_k(samples, static_cast<int>(j)));
  }
  if (h.pass_at_k.back().first != static_cast<int>(k)) {
    h.pass_at_k.emplace_back(static_cast<int>(k), mean_pass_at_k(samples, static_cast<int>(k)));
  }
  double len = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    for (const auto& r : s.rollouts) {
      len += static_cast<double>(r.tokens.size());
      ++n;
    }
  }
  h.mean_length = len / static_cast<double>(n);
  h.entropy_p80 = entropy_histogram(samples, vocab_size, 10).p80;
  return h;
}

}  // namespace dasd
