#include <filesystem>
#include <set>

#include "doctest.h"
#include "dasd/taskenv.hpp"
#include "oracles.hpp"

using namespace dasd;

TEST_CASE("vocabulary layout") {
  const TaskVocabulary v(7);
  CHECK(v.size() == 29);
  std::set<TokenId> ids;
  for (int d = 0; d < 7; ++d) {
    ids.insert(v.digit(d));
    ids.insert(v.op_token(Op::add, d));
    ids.insert(v.op_token(Op::mul, d));
  }
  for (int r = 0; r < TaskVocabulary::kMaxSteps; ++r) ids.insert(v.sep(r));
  ids.insert({v.eq(), v.marker(), v.bos(), v.eos(), v.priv_sep()});
  CHECK(ids.size() == 29);
  CHECK(*ids.rbegin() == 28);
  CHECK_THROWS(v.digit(7));
  CHECK_THROWS(v.sep(3));
}

TEST_CASE("instances: values, orders and difficulty") {
  const auto inst = make_instance({3, 4, 2}, {Op::add, Op::mul}, 7);
  CHECK(inst.answer == (3 + 4 * 2) % 7);
  CHECK(inst.valid_orders.size() >= 1);
  for (const auto& order : inst.valid_orders) CHECK(order.back() == inst.answer);

  const auto two = make_instance({5, 6}, {Op::add}, 7);
  CHECK(two.valid_orders.size() == 1);
  CHECK(two.valid_orders[0] == std::vector<int>{4});

  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto d3 = generate_instance(rng, 3, 7);
    CHECK(d3.difficulty == 3);
    CHECK(d3.valid_orders.size() >= 2);
    const auto d2 = generate_instance(rng, 2, 7);
    CHECK(d2.valid_orders.size() == 1);
    CHECK(d2.valid_orders[0].size() == 1);
  }
}

TEST_CASE("canonical trace self-verifies") {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto inst = generate_instance(rng, 2 + static_cast<int>(rng.below(3)), 7);
    const auto r = verify(inst, inst.trace);
    CHECK(r.reward == 1.0);
    CHECK(r.parsed);
    CHECK(r.terminated);
    CHECK_FALSE(r.first_error_step.has_value());
    for (bool f : r.step_flags) CHECK(f);
    for (std::size_t o = 0; o < inst.valid_orders.size(); ++o) {
      CHECK(verify(inst, solution_tokens(inst, o)).reward == 1.0);
    }
  }
}

TEST_CASE("wrong final symbol scores zero") {
  const TaskVocabulary v(7);
  const auto inst = make_instance({3, 4, 2}, {Op::add, Op::mul}, 7);
  auto tokens = inst.trace;
  tokens[tokens.size() - 2] = v.digit((inst.answer + 1) % 7);
  const auto r = verify(inst, tokens);
  CHECK(r.reward == 0.0);
  CHECK(r.final_answer == (inst.answer + 1) % 7);

  auto unterminated = inst.trace;
  unterminated.pop_back();
  CHECK(verify(inst, unterminated).reward == 0.0);
  CHECK_FALSE(verify(inst, unterminated).terminated);
}

TEST_CASE("revised step: marker cancels the pending value") {
  const TaskVocabulary v(7);
  const auto inst = make_instance({3, 4, 2}, {Op::add, Op::mul}, 7);
  const auto& order = inst.valid_orders[0];
  REQUIRE(order.size() == 2);
  const int wrong = (order[0] + 3) % 7;
  const std::vector<TokenId> tokens{v.digit(wrong), v.marker(), v.digit(order[0]), v.sep(1),
                                    v.digit(order[1]), v.sep(0), v.eq(), v.digit(inst.answer), v.eos()};
  const auto r = verify(inst, tokens);
  CHECK(r.reward == 1.0);
  CHECK(r.marker_count == 1);
  CHECK(r.step_flags == std::vector<bool>{true, true});
  CHECK_FALSE(r.first_error_step.has_value());
  CHECK(solution_tokens(inst, 0, 0, wrong) == tokens);
  CHECK(oracle::accepted_rollouts(inst, tokens.size()).count(tokens) == 1);

  const std::vector<TokenId> uncancelled{v.digit(wrong), v.sep(1), v.digit(order[1]), v.sep(0),
                                         v.eq(), v.digit(inst.answer), v.eos()};
  const auto u = verify(inst, uncancelled);
  CHECK(u.reward == 1.0);
  CHECK(u.first_error_step == std::size_t{0});
}

TEST_CASE("privileged context is the answer symbol and never in the prompt") {
  const TaskVocabulary v(7);
  const auto a = make_instance({1, 2}, {Op::add}, 7);
  const auto b = make_instance({2, 1}, {Op::add}, 7);
  CHECK(privileged_context(a) == v.digit(3));
  CHECK(privileged_context(a) == privileged_context(b));
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto inst = generate_instance(rng, 3, 7);
    for (TokenId t : inst.prompt) {
      CHECK(t != v.priv_sep());
    }
    CHECK(inst.prompt.size() == 3);
    CHECK(v.is_digit(inst.prompt[0]));
    CHECK(v.is_op_token(inst.prompt[1]));
    CHECK(v.is_op_token(inst.prompt[2]));
  }
}

TEST_CASE("instance serialization round trip") {
  Rng rng(21);
  std::vector<TaskInstance> all;
  for (int i = 0; i < 50; ++i) {
    auto inst = generate_instance(rng, 2 + i % 3, 7);
    inst.id = static_cast<std::uint64_t>(i);
    const auto back = parse_instance(serialize_instance(inst));
    CHECK(back.operands == inst.operands);
    CHECK(back.ops == inst.ops);
    CHECK(back.answer == inst.answer);
    CHECK(back.trace == inst.trace);
    CHECK(back.valid_orders == inst.valid_orders);
    CHECK(back.id == inst.id);
    all.push_back(inst);
  }
  const auto path = std::filesystem::temp_directory_path() / "dasd_instances.txt";
  save_instances(all, path);
  const auto loaded = load_instances(path);
  REQUIRE(loaded.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(serialize_instance(loaded[i]) == serialize_instance(all[i]));
  CHECK_THROWS(parse_instance("garbage"));
}

TEST_CASE("verifier agrees with the grammar oracle on short sequences") {
  const int m = 5;
  const auto alphabet = oracle::response_alphabet(m);
  for (int answer = 0; answer < m; ++answer) {
    const auto inst = make_instance({answer, 0}, {Op::add}, m);
    const auto s = oracle::sweep_verifier(inst, alphabet, 5);
    CHECK(s.mismatches == 0);
    CHECK(s.accepted > 0);
  }
  const auto inst = make_instance({1, 2, 3}, {Op::mul, Op::add}, m);
  const auto full = oracle::sweep_verifier(inst, oracle::full_alphabet(m), 4);
  CHECK(full.mismatches == 0);
}
