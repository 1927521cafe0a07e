#pragma once

// Token-level credit kernels: entropy, log-evidence gaps, entropy routing,
// gap gating, group-relative advantages, the clipped surrogate and the
// distribution distances used by the probes. Everything here is a pure
// function of its arguments.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dasd {

/// Numerical floor shared by all normalizing denominators.
inline constexpr double kDefaultEps = 1e-6;
/// Tolerance on the normalization of a categorical distribution.
inline constexpr double kNormTolerance = 1e-9;

using TokenId = int;

class SupportError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Probability vector over a vocabulary. Construction validates
/// non-negativity and normalization.
class CategoricalDist {
 public:
  CategoricalDist() = default;
  explicit CategoricalDist(std::vector<double> probs);

  /// Softmax of a logit row (max-shifted).
  static CategoricalDist softmax(std::span<const double> logits);

  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::size_t size() const { return probs_.size(); }

  friend bool operator==(const CategoricalDist&, const CategoricalDist&) = default;

 private:
  std::vector<double> probs_;
};

struct TokenEvidence {
  std::size_t position = 0;
  TokenId token_id = 0;
  double student_logprob = 0.0;
  double teacher_logprob = 0.0;
  double entropy = 0.0;
};

struct TrajectoryScales {
  double tau_rho = 0.0;
  double sigma_hat_h = 0.0;
  double delta_tilde = 0.0;
};

struct RoutedCredit {
  double delta = 0.0;
  double delta_bar = 0.0;
  double router = 0.0;
  double gate = 0.0;
  double omega = 0.0;
  double phi = 0.0;
  double a_hat = 0.0;
};

struct GroupAdvantage {
  std::vector<double> rewards;
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> advantages;
};

enum class DirectionMap { tanh, hard_threshold, linear_ramp, const_plus, const_minus };
enum class GateKind { sigmoid_gap, none, fixed_threshold, magnitude_only };
enum class RouterSignal { entropy, position_proxy, token_frequency };

struct RoutingConfig {
  DirectionMap direction = DirectionMap::tanh;
  GateKind gate = GateKind::sigmoid_gap;
  double gate_threshold = 0.5;  // nats, fixed_threshold only
  RouterSignal signal = RouterSignal::entropy;
  double rho = 0.20;
  double eps = kDefaultEps;
  bool clip_delta_bar = true;
  double delta_bar_limit = 10.0;

  friend bool operator==(const RoutingConfig&, const RoutingConfig&) = default;
};

/// Per-token side information needed by the non-entropy router signals.
struct RouterAux {
  std::size_t position = 0;
  std::size_t length = 0;
  std::optional<double> token_frequency_score;
};

std::string to_string(DirectionMap v);
std::string to_string(GateKind v);
std::string to_string(RouterSignal v);
DirectionMap parse_direction_map(const std::string& s);
GateKind parse_gate_kind(const std::string& s);
RouterSignal parse_router_signal(const std::string& s);

double token_entropy(const CategoricalDist& dist);

/// teacher minus student log-probability of the emitted token.
double log_evidence_gap(double teacher_logprob, double student_logprob);

/// Quantile with linear interpolation at sorted index rho*(n-1).
double quantile(std::span<const double> values, double rho);
/// Mean absolute deviation about the arithmetic mean.
double mean_abs_dev(std::span<const double> values);
/// Median with midpoint interpolation for even n.
double median(std::span<const double> values);

TrajectoryScales trajectory_scales(std::span<const double> entropies,
                                   std::span<const double> deltas, double rho);

double entropy_router(double entropy, const TrajectoryScales& scales,
                      double eps = kDefaultEps);

double gap_gate(double delta_bar);

/// Fills delta..phi of a RoutedCredit; a_hat is left for token_advantage.
RoutedCredit routing_coefficient(double entropy, const TrajectoryScales& scales,
                                 double delta, const RoutingConfig& config,
                                 const RouterAux& aux = {});

GroupAdvantage group_relative_advantage(std::span<const double> rewards,
                                        double eps = kDefaultEps);

double token_advantage(double a_group, double beta, double omega, double delta_bar);

/// Sets credit.a_hat = a_group + beta * credit.phi.
void finalize_credit(RoutedCredit& credit, double a_group, double beta);

double clipped_surrogate(double ratio, double a_hat, double eps_clip);

/// d/d(ratio) of clipped_surrogate; zero where the clipped branch is active.
double clipped_surrogate_slope(double ratio, double a_hat, double eps_clip);

double kl_divergence(const CategoricalDist& p, const CategoricalDist& q);
double tv_distance(const CategoricalDist& p, const CategoricalDist& q);

/// z-scores of ln(corpus frequency) per token; add-one smoothed counts.
/// Frequent tokens score positive.
std::vector<double> token_frequency_scores(std::span<const std::size_t> counts);

}  // namespace dasd
