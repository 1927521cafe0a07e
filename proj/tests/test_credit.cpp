#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dasd/credit.hpp"
#include "dasd/rng.hpp"
#include "oracles.hpp"

using namespace dasd;
using doctest::Approx;

namespace {

CategoricalDist random_dist(Rng& rng, int n) {
  std::vector<double> z(static_cast<std::size_t>(n));
  for (auto& x : z) x = 4.0 * rng.uniform() - 2.0;
  return CategoricalDist::softmax(z);
}

double entropy_oracle(const CategoricalDist& p) {
  double h = 0.0;
  for (double x : p.probs()) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace

TEST_CASE("categorical dist rejects invalid vectors") {
  CHECK_THROWS(CategoricalDist({0.5, 0.6}));
  CHECK_THROWS(CategoricalDist({-0.1, 1.1}));
  CHECK_NOTHROW(CategoricalDist({0.25, 0.75}));
}

TEST_CASE("token entropy") {
  CHECK(token_entropy(CategoricalDist({0.0, 1.0, 0.0})) == 0.0);
  CHECK(token_entropy(CategoricalDist({0.25, 0.25, 0.25, 0.25})) == Approx(1.3862944).epsilon(1e-7));
  CHECK(token_entropy(CategoricalDist({0.5, 0.5})) == Approx(0.6931472).epsilon(1e-7));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_dist(rng, 2 + i % 19);
    CHECK(std::abs(token_entropy(p) - entropy_oracle(p)) <= 1e-9);
    CHECK(token_entropy(p) <= std::log(static_cast<double>(p.size())) + 1e-12);
  }
}

TEST_CASE("log evidence gap") {
  CHECK(log_evidence_gap(-2.0, -2.0) == 0.0);
  CHECK(log_evidence_gap(-1.0, -2.0) == 1.0);
  CHECK(log_evidence_gap(-3.0, -1.5) == -1.5);
}

TEST_CASE("trajectory scales") {
  const std::vector<double> h{1, 2, 3, 4, 5};
  const std::vector<double> d{-2, 1, 3};
  CHECK(quantile(h, 0.2) == Approx(1.8).epsilon(1e-12));
  CHECK(trajectory_scales(h, d, 0.2).tau_rho == Approx(1.8).epsilon(1e-12));
  CHECK(trajectory_scales(h, d, 0.2).delta_tilde == Approx(2.0));
  const std::vector<double> c(6, 0.7);
  const auto s = trajectory_scales(c, c, 0.3);
  CHECK(s.tau_rho == Approx(0.7));
  CHECK(s.sigma_hat_h == 0.0);
  CHECK(median(std::vector<double>{4, 1, 3, 2}) == Approx(2.5));
  CHECK(mean_abs_dev(std::vector<double>{1, 2, 3, 6}) == Approx(1.5));
  CHECK_THROWS(trajectory_scales(std::vector<double>{}, std::vector<double>{}, 0.2));
}

TEST_CASE("quantile, median and MAD against sorted-array oracles") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> v(n);
    for (auto& x : v) x = 5.0 * rng.uniform();
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const double rho = rng.uniform();
    const double pos = rho * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double want = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    CHECK(std::abs(quantile(v, rho) - want) <= 1e-9);
    const double med = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    CHECK(std::abs(median(v) - med) <= 1e-9);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    double mad = 0.0;
    for (double x : v) mad += std::abs(x - mean);
    CHECK(std::abs(mean_abs_dev(v) - mad / static_cast<double>(n)) <= 1e-9);
  }
}

TEST_CASE("entropy router") {
  TrajectoryScales s{1.0, 0.5, 1.0};
  CHECK(entropy_router(1.0, s, 0.0) == 0.0);
  CHECK(entropy_router(0.5, s, 0.0) == Approx(0.7615942).epsilon(1e-7));
  CHECK(entropy_router(1e6, s, 0.0) == Approx(-1.0));
  double prev = 2.0;
  for (double h = 0.0; h < 2.0; h += 0.01) {
    const double z = entropy_router(h, s);
    CHECK(z < prev);
    prev = z;
  }
}

TEST_CASE("gap gate") {
  CHECK(gap_gate(1.0) == 0.5);
  CHECK(gap_gate(-1.0) == 0.5);
  CHECK(gap_gate(0.0) == Approx(0.2689414).epsilon(1e-7));
  CHECK(gap_gate(3.0) == Approx(0.8807971).epsilon(1e-7));
  CHECK(gap_gate(-3.0) == gap_gate(3.0));
}

TEST_CASE("routing coefficient variants") {
  const TrajectoryScales s{1.0, 0.5, 1.0};
  RoutingConfig cfg;
  CHECK(routing_coefficient(1.0, s, 2.5, cfg).omega == 0.0);

  cfg.eps = 0.0;
  const auto r = routing_coefficient(0.5, s, 1.0, cfg);
  CHECK(r.router == Approx(0.7615942).epsilon(1e-7));
  CHECK(r.gate == 0.5);
  CHECK(r.omega == Approx(0.3807971).epsilon(1e-7));

  RoutingConfig plus;
  plus.direction = DirectionMap::const_plus;
  plus.gate = GateKind::none;
  RoutingConfig minus = plus;
  minus.direction = DirectionMap::const_minus;
  for (double h : {0.0, 0.7, 1.0, 3.0}) {
    CHECK(routing_coefficient(h, s, -0.3, plus).omega == 1.0);
    CHECK(routing_coefficient(h, s, -0.3, minus).omega == -1.0);
  }

  RoutingConfig hard;
  hard.direction = DirectionMap::hard_threshold;
  CHECK(routing_coefficient(0.2, s, 1.0, hard).router == 1.0);
  CHECK(routing_coefficient(1.0, s, 1.0, hard).router == 0.0);
  CHECK(routing_coefficient(1.8, s, 1.0, hard).router == -1.0);

  RoutingConfig ramp;
  ramp.direction = DirectionMap::linear_ramp;
  ramp.eps = 0.0;
  CHECK(routing_coefficient(0.75, s, 1.0, ramp).router == Approx(0.5));
  CHECK(routing_coefficient(-5.0, s, 1.0, ramp).router == 1.0);

  RoutingConfig fixed;
  fixed.gate = GateKind::fixed_threshold;
  fixed.gate_threshold = 0.5;
  CHECK(routing_coefficient(0.5, s, 0.6, fixed).gate == 1.0);
  CHECK(routing_coefficient(0.5, s, -0.4, fixed).gate == 0.0);

  RoutingConfig mag;
  mag.gate = GateKind::magnitude_only;
  mag.eps = 0.0;
  CHECK(routing_coefficient(0.5, s, 0.25, mag).gate == Approx(0.25));
  CHECK(routing_coefficient(0.5, s, -4.0, mag).gate == 1.0);

  RoutingConfig pos;
  pos.signal = RouterSignal::position_proxy;
  CHECK_THROWS(routing_coefficient(0.5, s, 1.0, pos));
  const auto first = routing_coefficient(0.5, s, 1.0, pos, RouterAux{0, 10, std::nullopt});
  CHECK(first.router == Approx(std::tanh(std::sin(M_PI * 0.5))));

  RoutingConfig freq;
  freq.signal = RouterSignal::token_frequency;
  CHECK_THROWS(routing_coefficient(0.5, s, 1.0, freq, RouterAux{0, 10, std::nullopt}));
  const auto f = routing_coefficient(0.5, s, 1.0, freq, RouterAux{0, 10, 0.8});
  CHECK(f.router == Approx(std::tanh(0.8)));
}

TEST_CASE("delta bar clipping") {
  const TrajectoryScales s{1.0, 0.5, 0.01};
  RoutingConfig cfg;
  CHECK(routing_coefficient(0.5, s, 5.0, cfg).delta_bar == 10.0);
  CHECK(routing_coefficient(0.5, s, -5.0, cfg).delta_bar == -10.0);
  cfg.clip_delta_bar = false;
  CHECK(routing_coefficient(0.5, s, 5.0, cfg).delta_bar > 400.0);
}

TEST_CASE("group relative advantage") {
  const auto a = group_relative_advantage(std::vector<double>{1, 1, 1, 1});
  for (double x : a.advantages) CHECK(x == 0.0);
  const auto b = group_relative_advantage(std::vector<double>{1, 0, 0, 0}, 0.0);
  CHECK(b.advantages[0] == Approx(1.7320508).epsilon(1e-7));
  CHECK(b.advantages[1] == Approx(-0.5773503).epsilon(1e-7));
  const auto c = group_relative_advantage(std::vector<double>{1, 0}, 0.0);
  CHECK(c.advantages[0] == Approx(1.0));
  CHECK(c.advantages[1] == Approx(-1.0));
  CHECK_THROWS(group_relative_advantage(std::vector<double>{1}));
  const auto shifted = group_relative_advantage(std::vector<double>{3, 2, 2, 2}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(shifted.advantages[i] == Approx(b.advantages[i]));
}

TEST_CASE("token advantage") {
  CHECK(token_advantage(0.37, 0.0, -0.9, 8.0) == 0.37);
  CHECK(token_advantage(1.0, 0.5, -0.4, 2.0) == Approx(0.6));
  CHECK(token_advantage(-1.25, 2.0, 0.0, 3.0) == -1.25);
}

TEST_CASE("clipped surrogate") {
  CHECK(clipped_surrogate(1.0, 0.7, 0.2) == 0.7);
  CHECK(clipped_surrogate(1.5, 1.0, 0.2) == Approx(1.2));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == Approx(-0.8));
  CHECK(clipped_surrogate(1.1, -2.0, 0.2) == Approx(-2.2));
  CHECK_THROWS(clipped_surrogate(0.0, 1.0, 0.2));
  CHECK(clipped_surrogate_slope(1.5, 1.0, 0.2) == 0.0);
  CHECK(clipped_surrogate_slope(1.0, 1.0, 0.2) == 1.0);
}

TEST_CASE("KL and TV") {
  const CategoricalDist p({0.5, 0.5});
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(p, CategoricalDist({0.25, 0.75})) == Approx(0.1438410).epsilon(1e-7));
  CHECK(kl_divergence(CategoricalDist({1.0, 0.0}), p) == Approx(std::log(2.0)));
  CHECK_THROWS(kl_divergence(p, CategoricalDist({1.0, 0.0})));
  CHECK(tv_distance(p, p) == 0.0);
  CHECK(tv_distance(CategoricalDist({1.0, 0.0}), CategoricalDist({0.0, 1.0})) == 1.0);
  CHECK(tv_distance(p, CategoricalDist({0.75, 0.25})) == Approx(0.25));
  CHECK_THROWS(tv_distance(p, CategoricalDist({1.0, 0.0, 0.0})));

  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    const int n = 2 + static_cast<int>(rng.below(18));
    const auto a = random_dist(rng, n), b = random_dist(rng, n), c = random_dist(rng, n);
    double kl = 0.0, tv = 0.0;
    for (int v = 0; v < n; ++v) {
      kl += a[v] * std::log(a[v] / b[v]);
      tv += 0.5 * std::abs(a[v] - b[v]);
    }
    CHECK(std::abs(kl_divergence(a, b) - kl) <= 1e-9);
    CHECK(kl_divergence(a, b) >= 0.0);
    CHECK(std::abs(tv_distance(a, b) - tv) <= 1e-9);
    CHECK(tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-12);
  }
}

TEST_CASE("routing invariants on fuzzed trajectories") {
  Rng rng(21);
  const RoutingConfig base;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<double> h(n), d(n);
    for (auto& x : h) x = 3.0 * rng.uniform();
    for (auto& x : d) x = 6.0 * rng.uniform() - 3.0;
    const double rho = 0.05 + 0.9 * rng.uniform();
    const auto s = trajectory_scales(h, d, rho);
    const double a = 4.0 * rng.uniform() - 2.0;
    const double beta = 2.0 * rng.uniform();
    for (std::size_t t = 0; t < n; ++t) {
      auto c = routing_coefficient(h[t], s, d[t], base);
      finalize_credit(c, a, beta);
      CHECK(std::abs(c.omega) <= 1.0);
      CHECK(std::abs(c.omega) <= std::abs(c.router));
      CHECK(c.omega == c.router * c.gate);
      if (h[t] < s.tau_rho) CHECK(c.omega >= 0.0);
      if (h[t] > s.tau_rho) CHECK(c.omega <= 0.0);
      CHECK(gap_gate(c.delta_bar) == gap_gate(-c.delta_bar));
      CHECK(c.a_hat == a + beta * c.phi);
    }
  }
}

TEST_CASE("group advantage on fuzzed groups") {
  Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t g = 2 + rng.below(15);
    std::vector<double> r(g);
    for (auto& x : r) x = rng.below(2) ? 1.0 : 0.0;
    const auto adv = group_relative_advantage(r, 0.0);
    const bool degenerate = std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; });
    double mean = 0.0, var = 0.0;
    for (double x : adv.advantages) mean += x;
    mean /= static_cast<double>(g);
    for (double x : adv.advantages) var += (x - mean) * (x - mean);
    var /= static_cast<double>(g);
    if (degenerate) {
      for (double x : adv.advantages) CHECK(x == 0.0);
    } else {
      CHECK(std::abs(mean) <= 1e-9);
      CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("score-form estimator matches the signed KL gradient") {
  const auto r = oracle::proposition_one(12, 0.8, 1.0, -0.6, 400000, 17, false);
  for (std::size_t j = 0; j < r.analytic.size(); ++j) {
    CHECK(std::abs(r.monte_carlo[j] - r.analytic[j]) <= 4.0 * r.standard_error[j] + 1e-12);
  }
  const auto s = oracle::proposition_one(12, 0.8, 1.0, -0.6, 100000, 17, true);
  CHECK(s.checked > 0);
  CHECK(s.max_rel_error <= 0.01);
}

TEST_CASE("token frequency scores") {
  const std::vector<std::size_t> counts{100, 10, 1, 0};
  const auto z = token_frequency_scores(counts);
  CHECK(z[0] > z[1]);
  CHECK(z[1] > z[2]);
  CHECK(std::abs(std::accumulate(z.begin(), z.end(), 0.0)) <= 1e-9);
}

TEST_CASE("variant names round trip") {
  for (auto d : {DirectionMap::tanh, DirectionMap::hard_threshold, DirectionMap::linear_ramp,
                 DirectionMap::const_plus, DirectionMap::const_minus}) {
    CHECK(parse_direction_map(to_string(d)) == d);
  }
  for (auto g : {GateKind::sigmoid_gap, GateKind::none, GateKind::fixed_threshold,
                 GateKind::magnitude_only}) {
    CHECK(parse_gate_kind(to_string(g)) == g);
  }
  for (auto s : {RouterSignal::entropy, RouterSignal::position_proxy, RouterSignal::token_frequency}) {
    CHECK(parse_router_signal(to_string(s)) == s);
  }
  CHECK_THROWS(parse_gate_kind("sometimes"));
}
