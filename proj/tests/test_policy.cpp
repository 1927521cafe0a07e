#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dasd/policy.hpp"
#include "oracles.hpp"

using namespace dasd;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dasd_policy_tests";
  fs::create_directories(dir);
  return dir / name;
}

Policy random_policy(Rng& rng, int vocab, int window, int rows) {
  Policy p(vocab, window, 0);
  for (int r = 0; r < rows; ++r) {
    std::vector<TokenId> prefix;
    for (int i = 0; i < window; ++i) prefix.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
    std::optional<TokenId> priv;
    if (rng.below(2)) priv = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    auto& row = p.mutable_row(p.key(prefix, priv));
    for (auto& x : row) x = 4.0 * rng.uniform() - 2.0;
  }
  return p;
}

}  // namespace

TEST_CASE("fresh policy is uniform and deterministic") {
  const Policy p(6, 3, 0);
  const std::vector<TokenId> prefix{1, 2, 3, 4};
  const auto d = p.next_distribution(prefix);
  for (double x : d.probs()) CHECK(x == Approx(1.0 / 6.0));
  CHECK(p.next_distribution(prefix) == d);
}

TEST_CASE("softmax of a one-hot logit row") {
  Policy p(4, 2, 0);
  const std::vector<TokenId> prefix{1, 2};
  p.mutable_row(p.key(prefix, std::nullopt))[0] = 1.0;
  const auto d = p.next_distribution(prefix);
  const double e = std::exp(1.0);
  CHECK(d[0] == Approx(e / (e + 3.0)).epsilon(1e-12));
  CHECK(d[0] == Approx(0.4753668).epsilon(1e-7));
  for (int v = 1; v < 4; ++v) CHECK(d[static_cast<std::size_t>(v)] == Approx(1.0 / (e + 3.0)).epsilon(1e-12));
}

TEST_CASE("keys: window, padding and privileged slot") {
  const Policy p(10, 3, 9);
  const std::vector<TokenId> a{5, 1, 2, 3};
  const std::vector<TokenId> b{7, 1, 2, 3};
  CHECK(p.key(a, std::nullopt) == p.key(b, std::nullopt));
  const std::vector<TokenId> short_prefix{2};
  CHECK(p.window_of(p.key(short_prefix, std::nullopt)) == std::vector<TokenId>{9, 9, 2});
  const auto k = p.key(a, TokenId{4});
  CHECK(p.is_privileged(k));
  CHECK(p.privileged_of(k) == TokenId{4});
  CHECK(p.student_key(k) == p.key(a, std::nullopt));
  const std::vector<TokenId> bad{1, 10};
  CHECK_THROWS(p.next_distribution(bad));
}

TEST_CASE("privileged branch adds a residual and matches the student without one") {
  Policy p(5, 2, 0);
  const std::vector<TokenId> prefix{3, 4};
  auto& row = p.mutable_row(p.key(prefix, std::nullopt));
  row = {0.5, -0.2, 1.0, 0.0, 0.3};
  CHECK(p.next_distribution(prefix, TokenId{2}) == p.next_distribution(prefix));
  p.mutable_row(p.key(prefix, TokenId{2}))[1] = 2.0;
  const auto teacher = p.next_distribution(prefix, TokenId{2});
  const std::vector<double> sum{0.5, 1.8, 1.0, 0.0, 0.3};
  const auto want = CategoricalDist::softmax(sum);
  for (std::size_t v = 0; v < 5; ++v) CHECK(teacher[v] == Approx(want[v]).epsilon(1e-12));
  CHECK(p.next_distribution(prefix, TokenId{1}) == p.next_distribution(prefix));
}

TEST_CASE("rollouts: determinism, collapse and uniform entropy") {
  Policy p(4, 1, 0);
  const std::vector<TokenId> prompt{1};
  RolloutOptions opt{6, std::nullopt};
  Rng r1(42), r2(42);
  CHECK(sample_rollout(p, prompt, opt, r1).tokens() == sample_rollout(p, prompt, opt, r2).tokens());

  Rng r3(1);
  const auto one = sample_rollout(p, prompt, RolloutOptions{1, std::nullopt}, r3);
  CHECK(one.steps.size() == 1);
  CHECK(one.steps[0].entropy == Approx(1.3862944).epsilon(1e-7));

  Policy det(4, 1, 0);
  for (TokenId t = 0; t < 4; ++t) det.mutable_row(det.key(std::vector<TokenId>{t}, std::nullopt))[2] = 100.0;
  Rng r4(9);
  const auto traj = sample_rollout(det, prompt, RolloutOptions{5, std::nullopt}, r4);
  CHECK(traj.steps.size() == 5);
  for (const auto& s : traj.steps) {
    CHECK(s.token_id == 2);
    CHECK(std::abs(s.logprob) < 1e-12);
    CHECK(s.entropy < 1e-12);
  }
  Rng r5(9);
  CHECK(sample_rollout(det, prompt, RolloutOptions{5, TokenId{2}}, r5).steps.size() == 1);
  CHECK_THROWS(sample_rollout(det, prompt, RolloutOptions{0, std::nullopt}, r5));
}

TEST_CASE("inverse-CDF sampling frequencies") {
  const CategoricalDist d({0.1, 0.25, 0.05, 0.6});
  Rng rng(123);
  const int n = 200000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_index(d, rng.uniform()))];
  for (std::size_t v = 0; v < 4; ++v) {
    const double se = std::sqrt(d[v] * (1.0 - d[v]) / n);
    CHECK(std::abs(counts[v] / static_cast<double>(n) - d[v]) <= 3.0 * se);
  }
}

TEST_CASE("logprob gradient") {
  const Policy p(4, 1, 0);
  const std::vector<TokenId> prefix{2};
  const auto g = logprob_grad(p, prefix, std::nullopt, 0);
  REQUIRE(g.size() == 1);
  const auto& row = g.begin()->second;
  CHECK(row[0] == Approx(0.75));
  for (int v = 1; v < 4; ++v) CHECK(row[static_cast<std::size_t>(v)] == Approx(-0.25));
}

TEST_CASE("logprob gradient against central differences") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.below(20));
    const Policy p = random_policy(rng, vocab, 2, 8);
    std::vector<TokenId> prefix;
    for (int i = 0; i < 3; ++i) prefix.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
    const auto token = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    const auto g = logprob_grad(p, prefix, std::nullopt, token);
    const auto logits = p.logits(p.key(prefix, std::nullopt));
    const auto fd = oracle::logprob_grad_fd(logits, static_cast<std::size_t>(token), 1e-5);
    const auto& row = g.begin()->second;
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      sum += row[j];
      CHECK(std::abs(row[j] - fd[j]) <= 1e-6 * std::max(1.0, std::abs(fd[j])));
    }
    CHECK(std::abs(sum) <= 1e-12);
  }
}

TEST_CASE("apply update") {
  Policy p(4, 1, 0);
  const ContextKey k = p.key(std::vector<TokenId>{1}, std::nullopt);
  p.mutable_row(k) = {0.1, 0.2, 0.3, 0.4};
  const Policy before = p;
  SparseGradient zero;
  accumulate(zero, k, std::vector<double>{0, 0, 0, 0}, 1.0);
  apply_update(p, zero, 0.5);
  CHECK(p == before);
  SparseGradient g;
  accumulate(g, k, std::vector<double>{1, 0, 0, 0}, 1.0);
  apply_update(p, g, 0.0);
  CHECK(p == before);
  apply_update(p, g, 0.1);
  CHECK(p.find_row(k)->at(0) == Approx(0.2));
  SparseGradient bad;
  accumulate(bad, k, std::vector<double>{NAN, 0, 0, 0}, 1.0);
  CHECK_THROWS(apply_update(p, bad, 0.1));
}

TEST_CASE("checkpoint round trip") {
  Rng rng(5);
  PolicyCheckpoint ck;
  ck.policy = random_policy(rng, 12, 3, 40);
  ck.step = 17;
  ck.vocabulary = "test vocabulary";
  Rng state(99);
  state.next();
  ck.rng_state = state.state();
  const auto path = temp_path("round.ckpt");
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  CHECK(back.policy == ck.policy);
  CHECK(back.step == 17);
  CHECK(back.vocabulary == ck.vocabulary);
  CHECK(parameter_hash(back.policy) == parameter_hash(ck.policy));
  Rng restored;
  restored.set_state(back.rng_state);
  CHECK(restored == state);

  PolicyCheckpoint fresh;
  fresh.policy = Policy(5, 2, 0);
  save_checkpoint(fresh, temp_path("fresh.ckpt"));
  const auto f = load_checkpoint(temp_path("fresh.ckpt"));
  const auto fd = f.policy.next_distribution(std::vector<TokenId>{1, 2});
  for (double x : fd.probs()) CHECK(x == Approx(0.2));
}

TEST_CASE("checkpoint errors are distinct") {
  Rng rng(6);
  PolicyCheckpoint ck;
  ck.policy = random_policy(rng, 8, 2, 10);
  const auto path = temp_path("corrupt.ckpt");
  save_checkpoint(ck, path);
  std::string text;
  {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  auto corrupt = text;
  const auto pos = corrupt.find_last_of("0123456789", corrupt.size() - 40);
  corrupt[pos] = corrupt[pos] == '1' ? '2' : '1';
  std::ofstream(path, std::ios::trunc) << corrupt;
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointCorruptError);

  std::ofstream(path, std::ios::trunc) << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  auto versioned = text;
  const auto v = versioned.find("version 1\n");
  REQUIRE(v != std::string::npos);
  versioned.replace(v, 10, "version 9\n");
  std::ofstream(path, std::ios::trunc) << versioned;
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), CheckpointError);
}
