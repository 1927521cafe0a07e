#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dasd/probes.hpp"
#include "oracles.hpp"

using namespace dasd;
using doctest::Approx;

namespace {

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.updates = 4;
  c.batch_prompts = 8;
  c.warmup_examples = 4000;
  c.eval_instances = 16;
  c.eval_k = 4;
  c.eval_every = 2;
  c.checkpoint_every = 0;
  return c;
}

// Every student row puts +1000 on `token`: all other probabilities underflow to 0.
Policy always_emits(const TaskVocabulary& v, TokenId token) {
  Policy p(v.size(), 1, v.bos());
  for (TokenId t = 0; t < v.size(); ++t) {
    p.mutable_row(p.key(std::vector<TokenId>{t}, std::nullopt))[static_cast<std::size_t>(token)] = 1000.0;
  }
  return p;
}

std::vector<TaskInstance> small_eval_set(int n, int modulus) {
  Rng rng(17);
  std::vector<TaskInstance> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_instance(rng, 2 + i % 3, modulus));
  return out;
}

}  // namespace

TEST_CASE("novelty distribution") {
  const CategoricalDist p({0.6, 0.4});
  const CategoricalDist q({0.9, 0.1});
  const auto n = novelty_distribution(p, q, 0.5);
  CHECK(n[0] == Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(n[1] == Approx(2.0 / 3.0).epsilon(1e-12));
  const auto same = novelty_distribution(p, q, 0.0);
  CHECK(same[0] == Approx(0.6).epsilon(1e-15));
  const auto tiny = novelty_distribution(p, q, 1e-12);
  CHECK(tiny[0] == Approx(0.6).epsilon(1e-9));
  const auto flat = novelty_distribution(p, p, 1.0);
  CHECK(flat[0] == Approx(0.5));
  const auto zero_q = novelty_distribution(CategoricalDist({0.5, 0.5}), CategoricalDist({1.0, 0.0}), 0.5);
  CHECK(zero_q[0] == Approx(0.5));
}

TEST_CASE("mask token") {
  const auto m = mask_token(CategoricalDist({0.2, 0.3, 0.5}), 2);
  CHECK(m[2] == 0.0);
  CHECK(m[0] == Approx(0.4));
  CHECK(m[1] == Approx(0.6));
  const auto corner = mask_token(CategoricalDist({0.7, 0.3}), 0);
  CHECK(corner[0] == 0.0);
  CHECK(corner[1] == 1.0);
  const auto all = mask_token(CategoricalDist({0.0, 1.0, 0.0}), 1);
  CHECK(all[0] == Approx(0.5));
  CHECK(all[1] == 0.0);
}

TEST_CASE("spearman against the pairwise oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(10));
      y[i] = x[i] + 3.0 * rng.uniform();
    }
    const auto rho = spearman(x, y);
    if (!rho) continue;
    CHECK(*rho == Approx(oracle::spearman_pairwise(x, y)).epsilon(1e-12));
  }
  std::vector<double> h(300), d(300);
  for (std::size_t i = 0; i < h.size(); ++i) {
    h[i] = static_cast<double>(i) * 0.01;
    d[i] = std::exp(h[i]);
  }
  CHECK(*spearman(h, d) == Approx(1.0).epsilon(1e-15));
  const std::vector<double> c(300, 2.0);
  CHECK_FALSE(spearman(h, c).has_value());
  CHECK(average_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
}

TEST_CASE("spearman permutation null") {
  Rng rng(43);
  std::vector<double> x(10000), y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = static_cast<double>(i);
  }
  for (std::size_t i = y.size() - 1; i > 0; --i) std::swap(y[i], y[rng.below(i + 1)]);
  CHECK(std::abs(*spearman(x, y)) < 0.1);
}

TEST_CASE("pressure report") {
  std::vector<TokenRecord> few(99, TokenRecord{1.0, 1.0});
  CHECK_THROWS_AS(pressure_vs_entropy(few), std::invalid_argument);
  std::vector<TokenRecord> recs;
  for (int i = 0; i < 500; ++i) recs.push_back({i * 0.01, -i * 0.5});
  const auto r = pressure_vs_entropy(recs);
  CHECK(r.tokens == 500);
  CHECK(r.bins.size() == 10);
  CHECK(*r.spearman == Approx(-1.0));
  std::size_t total = 0;
  for (const auto& b : r.bins) total += b.count;
  CHECK(total == 500);
}

TEST_CASE("one-step TV shift") {
  const auto inst = make_instance({2, 3}, {Op::add}, 7);
  const TaskVocabulary v(7);
  Policy policy(v.size(), 3, v.bos());
  auto& row = policy.mutable_row(policy.key(inst.prompt, std::nullopt));
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = 0.05 * static_cast<double>(i % 7);
  const auto p = policy.next_distribution(inst.prompt);

  RolloutGroup g;
  g.instance = inst;
  for (auto [tok, a] : {std::pair<TokenId, double>{4, 1.0}, {11, -0.5}}) {
    ScoredRollout r;
    r.tokens = {tok};
    TokenEvidence ev;
    ev.token_id = tok;
    ev.student_logprob = std::log(p[static_cast<std::size_t>(tok)]);
    ev.teacher_logprob = ev.student_logprob + 0.25;
    ev.entropy = token_entropy(p);
    r.evidence = {ev};
    RoutedCredit c;
    c.a_hat = a;
    r.credits = {c};
    g.rollouts.push_back(r);
  }
  const auto config = small_config(TrainMode::grpo);
  const auto hash = parameter_hash(policy);

  const auto zero = tv_shift_groups(policy, {g}, config, 0.0);
  for (const auto& rec : zero.records) CHECK(rec.tv == 0.0);

  const double lr = 0.7;
  const auto out = tv_shift_groups(policy, {g}, config, lr);
  CHECK(parameter_hash(policy) == hash);
  REQUIRE(out.records.size() == 2);
  std::vector<double> z(row.begin(), row.end());
  for (std::size_t k = 0; k < z.size(); ++k) {
    z[k] += lr * (1.0 * ((k == 4) - p[k]) - 0.5 * ((k == 11) - p[k])) / 2.0;
  }
  const auto after = CategoricalDist::softmax(z);
  double tv = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) tv += 0.5 * std::abs(after[k] - p[k]);
  for (const auto& rec : out.records) {
    CHECK(rec.tv == Approx(tv).epsilon(1e-9));
    CHECK(rec.delta == Approx(0.25));
  }

  Policy single(1, 1, 0);
  TaskInstance one = inst;
  one.prompt = {0};
  RolloutGroup sg;
  sg.instance = one;
  ScoredRollout sr;
  sr.tokens = {0, 0};
  TokenEvidence ev;
  sr.evidence = {ev, ev};
  RoutedCredit c;
  c.a_hat = 1.0;
  sr.credits = {c, c};
  sg.rollouts = {sr, sr};
  for (const auto& rec : tv_shift_groups(single, {sg}, config, 5.0).records) CHECK(rec.tv == 0.0);
}

TEST_CASE("conformity on identical branches changes nothing") {
  const TaskVocabulary v(5);
  Policy policy(v.size(), 3, v.bos());
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<TokenId> w{static_cast<TokenId>(rng.below(20)), static_cast<TokenId>(rng.below(20)),
                           static_cast<TokenId>(rng.below(20))};
    for (auto& x : policy.mutable_row(policy.key(w, std::nullopt))) x = 3.0 * rng.uniform();
  }
  const auto set = small_eval_set(12, 5);
  const auto report = intervention_report(policy, set, standard_intervention_grid(), 200, 20, 9);
  REQUIRE(report.cells.size() == 6);
  for (const auto& c : report.cells) {
    CHECK(c.samples == 200);
    if (c.spec.mode != InterventionMode::conformity) continue;
    CHECK(c.step_acc == c.base_step_acc);
    CHECK(c.e_density == c.base_e_density);
    if (c.d_step_acc) CHECK(*c.d_step_acc == 0.0);
  }
  CHECK_THROWS_AS(intervention_report(policy, set, standard_intervention_grid(), 50, 20, 9),
                  std::invalid_argument);
}

TEST_CASE("an intervention changes only the chosen position's distribution") {
  const auto config = small_config(TrainMode::dasd);
  const auto eval_set = make_eval_set(config);
  const auto context = make_context(config, eval_set);
  const Policy policy = warmup_policy(config, context);
  std::size_t compared = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    for (const auto& spec : standard_intervention_grid()) {
      const auto& inst = eval_set[s % eval_set.size()];
      const auto out = intervene_rollout(policy, inst, spec, config.max_len, s);
      if (!out.position) {
        CHECK(out.intervened.tokens() == out.baseline.tokens());
        continue;
      }
      const std::size_t pos = *out.position;
      REQUIRE(pos < out.baseline.steps.size());
      for (std::size_t t = 0; t < pos; ++t) {
        CHECK(out.intervened.steps[t].token_id == out.baseline.steps[t].token_id);
      }
      ++compared;
    }
  }
  CHECK(compared > 100);
}

TEST_CASE("sign-flip probe equals the constant-direction modes") {
  const auto plus = signflip_probe(small_config(TrainMode::dasd), +1);
  const auto opsd = train_run(small_config(TrainMode::opsd_sampled));
  CHECK(plus.stats == opsd.stats);
  CHECK(plus.final_checkpoint.policy == opsd.final_checkpoint.policy);
  const auto minus = signflip_probe(small_config(TrainMode::dasd), -1);
  const auto nov = train_run(small_config(TrainMode::novelty));
  CHECK(minus.stats == nov.stats);
  CHECK_THROWS(signflip_probe(small_config(TrainMode::dasd), 0));
}

TEST_CASE("arm flips") {
  const auto config = small_config(TrainMode::dasd);
  const auto plain = train_run(config);
  const auto late = arm_flip_run(config, FlipArm::both, config.updates);
  CHECK(late.stats == plain.stats);
  CHECK(late.final_checkpoint.policy == plain.final_checkpoint.policy);
  CHECK_THROWS(arm_flip_run(config, FlipArm::low_h, config.updates + 1));

  const auto eval_set = make_eval_set(config);
  const auto context = make_context(config, eval_set);
  const Policy policy = warmup_policy(config, context);
  auto both = config;
  both.flip_arm = FlipArm::both;
  both.flip_step = 0;
  auto low = both;
  low.flip_arm = FlipArm::low_h;
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const auto inst = sample_training_instance(rng, config, context);
    const auto a = collect_group(policy, inst, config, context, 100 + i, 0);
    const auto b = collect_group(policy, inst, both, context, 100 + i, 0);
    const auto l = collect_group(policy, inst, low, context, 100 + i, 0);
    for (std::size_t r = 0; r < a.rollouts.size(); ++r) {
      const auto& ra = a.rollouts[r];
      for (std::size_t t = 0; t < ra.credits.size(); ++t) {
        CHECK(b.rollouts[r].credits[t].omega == -ra.credits[t].omega);
        const bool is_low = ra.evidence[t].entropy < ra.scales.tau_rho;
        CHECK(l.rollouts[r].credits[t].omega == (is_low ? -ra.credits[t].omega : ra.credits[t].omega));
      }
    }
  }
}

TEST_CASE("fork intervention on a deterministic policy") {
  const TaskVocabulary v(5);
  const Policy policy = always_emits(v, v.digit(1));
  const auto set = small_eval_set(8, 5);
  const auto r = causal_fork_intervention(policy, set, Bucket::high_H, 40, 12, 3);
  CHECK(r.samples == 40);
  CHECK(r.changed == 0);
  CHECK(r.d_reward == 0.0);
  CHECK(r.d_rev_rate == 0.0);
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("revision intervention") {
  const TaskVocabulary v(5);
  const Policy quiet = always_emits(v, v.digit(2));
  const auto set = small_eval_set(8, 5);
  const auto none = revision_intervention(quiet, set, RevisionAction::suppress, 60, 12, 4);
  CHECK(none.marker_prefixes == 0);
  CHECK(none.low_power);

  const auto config = small_config(TrainMode::dasd);
  const auto eval_set = make_eval_set(config);
  const Policy policy = warmup_policy(config, make_context(config, eval_set));
  const auto keep = revision_intervention(policy, eval_set, RevisionAction::preserve, 400, config.max_len, 5);
  CHECK(keep.d_correct == 0.0);
  CHECK(keep.correct == keep.base_correct);
  CHECK(parse_revision_action(to_string(RevisionAction::teacher_force)) == RevisionAction::teacher_force);
}
