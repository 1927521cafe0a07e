#include "dasd/credit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dasd {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument(std::string(what) + " must be finite");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

CategoricalDist::CategoricalDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw std::invalid_argument("empty distribution");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("distribution entries must be finite and >= 0");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kNormTolerance) {
    throw std::invalid_argument("distribution does not sum to 1 (sum=" +
                                std::to_string(total) + ")");
  }
}

CategoricalDist CategoricalDist::softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("empty logit row");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - top);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return CategoricalDist(std::move(probs));
}

std::string to_string(DirectionMap v) {
  switch (v) {
    case DirectionMap::tanh: return "tanh";
    case DirectionMap::hard_threshold: return "hard_threshold";
    case DirectionMap::linear_ramp: return "linear_ramp";
    case DirectionMap::const_plus: return "const_plus";
    case DirectionMap::const_minus: return "const_minus";
  }
  return "?";
}

std::string to_string(GateKind v) {
  switch (v) {
    case GateKind::sigmoid_gap: return "sigmoid_gap";
    case GateKind::none: return "none";
    case GateKind::fixed_threshold: return "fixed_threshold";
    case GateKind::magnitude_only: return "magnitude_only";
  }
  return "?";
}

std::string to_string(RouterSignal v) {
  switch (v) {
    case RouterSignal::entropy: return "entropy";
    case RouterSignal::position_proxy: return "position_proxy";
    case RouterSignal::token_frequency: return "token_frequency";
  }
  return "?";
}

DirectionMap parse_direction_map(const std::string& s) {
  for (auto v : {DirectionMap::tanh, DirectionMap::hard_threshold, DirectionMap::linear_ramp,
                 DirectionMap::const_plus, DirectionMap::const_minus}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown direction map '" + s + "'");
}

GateKind parse_gate_kind(const std::string& s) {
  for (auto v : {GateKind::sigmoid_gap, GateKind::none, GateKind::fixed_threshold,
                 GateKind::magnitude_only}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown gate '" + s + "'");
}

RouterSignal parse_router_signal(const std::string& s) {
  for (auto v : {RouterSignal::entropy, RouterSignal::position_proxy,
                 RouterSignal::token_frequency}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown router signal '" + s + "'");
}

double token_entropy(const CategoricalDist& dist) {
  double h = 0.0;
  for (double p : dist.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  // Rounding can push a near-deterministic row a hair below zero.
  return std::clamp(h, 0.0, std::log(static_cast<double>(dist.size())));
}

double log_evidence_gap(double teacher_logprob, double student_logprob) {
  require_finite(teacher_logprob, "teacher log-probability");
  require_finite(student_logprob, "student log-probability");
  return teacher_logprob - student_logprob;
}

double quantile(std::span<const double> values, double rho) {
  if (values.empty()) throw std::invalid_argument("quantile of empty set");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("quantile level outside [0,1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double index = rho * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(index));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = index - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean_abs_dev(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean absolute deviation of empty set");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return 0.0;  // exact for constant input despite rounding in the mean
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double dev = 0.0;
  for (double v : values) dev += std::abs(v - mean);
  return dev / n;
}

double median(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

TrajectoryScales trajectory_scales(std::span<const double> entropies,
                                   std::span<const double> deltas, double rho) {
  if (entropies.empty() || deltas.empty()) {
    throw std::invalid_argument("trajectory scales need a non-empty trajectory");
  }
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0,1)");
  std::vector<double> abs_deltas(deltas.size());
  std::transform(deltas.begin(), deltas.end(), abs_deltas.begin(),
                 [](double d) { return std::abs(d); });
  return TrajectoryScales{quantile(entropies, rho), mean_abs_dev(entropies),
                          median(abs_deltas)};
}

double entropy_router(double entropy, const TrajectoryScales& scales, double eps) {
  return std::tanh((scales.tau_rho - entropy) / (scales.sigma_hat_h + eps));
}

double gap_gate(double delta_bar) {
  require_finite(delta_bar, "normalized gap");
  return sigmoid(std::abs(delta_bar) - 1.0);
}

RoutedCredit routing_coefficient(double entropy, const TrajectoryScales& scales,
                                 double delta, const RoutingConfig& config,
                                 const RouterAux& aux) {
  RoutedCredit c;
  c.delta = delta;
  c.delta_bar = delta / (scales.delta_tilde + config.eps);
  if (config.clip_delta_bar) {
    c.delta_bar = std::clamp(c.delta_bar, -config.delta_bar_limit, config.delta_bar_limit);
  }

  // Signed argument of the direction map: positive means attract.
  double arg = 0.0;
  switch (config.signal) {
    case RouterSignal::entropy:
      arg = (scales.tau_rho - entropy) / (scales.sigma_hat_h + config.eps);
      break;
    case RouterSignal::position_proxy:
      if (aux.length == 0) throw std::invalid_argument("position proxy needs trajectory length");
      arg = std::sin(std::numbers::pi *
                     (0.5 - static_cast<double>(aux.position) / static_cast<double>(aux.length)));
      break;
    case RouterSignal::token_frequency:
      if (!aux.token_frequency_score) {
        throw std::invalid_argument("token frequency signal needs a frequency score");
      }
      arg = *aux.token_frequency_score;
      break;
  }

  switch (config.direction) {
    case DirectionMap::tanh: c.router = std::tanh(arg); break;
    case DirectionMap::hard_threshold: c.router = sign_of(arg); break;
    case DirectionMap::linear_ramp: c.router = std::clamp(arg, -1.0, 1.0); break;
    case DirectionMap::const_plus: c.router = 1.0; break;
    case DirectionMap::const_minus: c.router = -1.0; break;
  }

  switch (config.gate) {
    case GateKind::sigmoid_gap: c.gate = gap_gate(c.delta_bar); break;
    case GateKind::none: c.gate = 1.0; break;
    case GateKind::fixed_threshold: c.gate = std::abs(delta) > config.gate_threshold ? 1.0 : 0.0; break;
    case GateKind::magnitude_only: c.gate = std::min(std::abs(c.delta_bar), 1.0); break;
  }

  c.omega = c.router * c.gate;
  c.phi = c.omega * c.delta_bar;
  return c;
}

GroupAdvantage group_relative_advantage(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw std::invalid_argument("group needs at least two rollouts");
  GroupAdvantage g;
  g.rewards.assign(rewards.begin(), rewards.end());
  for (double r : g.rewards) require_finite(r, "reward");
  const double n = static_cast<double>(rewards.size());
  g.mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - g.mu) * (r - g.mu);
  g.sigma = std::sqrt(var / n);
  g.advantages.assign(rewards.size(), 0.0);
  const bool all_equal =
      std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
  if (all_equal) return g;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    g.advantages[i] = (rewards[i] - g.mu) / (g.sigma + eps);
  }
  return g;
}

double token_advantage(double a_group, double beta, double omega, double delta_bar) {
  return a_group + beta * (omega * delta_bar);
}

void finalize_credit(RoutedCredit& credit, double a_group, double beta) {
  credit.a_hat = a_group + beta * credit.phi;
}

double clipped_surrogate(double ratio, double a_hat, double eps_clip) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw std::invalid_argument("importance ratio must be positive and finite");
  }
  const double clipped = std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
  return std::min(ratio * a_hat, clipped * a_hat);
}

double clipped_surrogate_slope(double ratio, double a_hat, double eps_clip) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw std::invalid_argument("importance ratio must be positive and finite");
  }
  const double clipped = std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
  // Unclipped branch wins ties, so the on-policy point keeps its gradient.
  if (ratio * a_hat <= clipped * a_hat) return a_hat;
  return 0.0;
}

double kl_divergence(const CategoricalDist& p, const CategoricalDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("KL on mismatched vocabularies");
  double kl = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (p[v] == 0.0) continue;
    if (q[v] == 0.0) {
      throw SupportError("KL undefined: q has no mass at token " + std::to_string(v));
    }
    kl += p[v] * (std::log(p[v]) - std::log(q[v]));
  }
  return std::max(kl, 0.0);
}

double tv_distance(const CategoricalDist& p, const CategoricalDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("TV on mismatched vocabularies");
  double l1 = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) l1 += std::abs(p[v] - q[v]);
  return 0.5 * l1;
}

std::vector<double> token_frequency_scores(std::span<const std::size_t> counts) {
  std::vector<double> log_freq(counts.size());
  double total = 0.0;
  for (std::size_t c : counts) total += static_cast<double>(c) + 1.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    log_freq[i] = std::log((static_cast<double>(counts[i]) + 1.0) / total);
  }
  const double n = static_cast<double>(counts.size());
  const double mean = std::accumulate(log_freq.begin(), log_freq.end(), 0.0) / n;
  double var = 0.0;
  for (double x : log_freq) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> z(counts.size(), 0.0);
  if (sd == 0.0) return z;
  for (std::size_t i = 0; i < counts.size(); ++i) z[i] = (log_freq[i] - mean) / sd;
  return z;
}

}  // namespace dasd
