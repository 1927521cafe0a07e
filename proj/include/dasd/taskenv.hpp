#pragma once

// Synthetic verifiable tasks: modular arithmetic chains "a o b o c (mod m)"
// with + and x under the usual precedence.
//
// Token layout for modulus m:
//   [0, m)        digits (operands, step values, answers)
//   [m, 2m)       "+d" fused operator/operand tokens
//   [2m, 3m)      "xd" fused operator/operand tokens
//   [3m, 3m+3)    step separators ";0" ";1" ";2", the digit after ';' being
//                 the number of steps still to come
//   then EQ ("="), MARKER ("~", the hesitation/revision token), BOS, EOS,
//   PRIV_SEP.
//
// A prompt "3 + 4 x 2" is encoded as the three tokens [3, +4, x2]. A rollout
// is a sequence of step values, each closed by a separator, followed by
// "= answer EOS". MARKER cancels a pending (not yet closed) step value. The
// verifier accepts any separator; the count only helps a short-window policy
// tell a finished chain from an unfinished one.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dasd/credit.hpp"
#include "dasd/rng.hpp"

namespace dasd {

enum class Op { add, mul };

class TaskVocabulary {
 public:
  explicit TaskVocabulary(int modulus = 7);

  int modulus() const { return modulus_; }
  static constexpr int kMaxSteps = 3;

  int size() const { return 3 * modulus_ + kMaxSteps + 5; }

  TokenId digit(int value) const;
  TokenId op_token(Op op, int operand) const;
  /// Separator closing a step with `remaining` steps still to come.
  TokenId sep(int remaining) const;
  TokenId eq() const { return 3 * modulus_ + kMaxSteps; }
  TokenId marker() const { return eq() + 1; }
  TokenId bos() const { return eq() + 2; }
  TokenId eos() const { return eq() + 3; }
  TokenId priv_sep() const { return eq() + 4; }

  bool is_digit(TokenId t) const { return t >= 0 && t < modulus_; }
  bool is_op_token(TokenId t) const { return t >= modulus_ && t < 3 * modulus_; }
  bool is_sep(TokenId t) const { return t >= 3 * modulus_ && t < eq(); }

  std::string name(TokenId t) const;
  std::string render(std::span<const TokenId> tokens) const;
  /// One-line description stored in checkpoints.
  std::string describe() const;

 private:
  int modulus_;
};

struct TaskInstance {
  std::uint64_t id = 0;
  int modulus = 7;
  std::vector<int> operands;
  std::vector<Op> ops;  // ops[i] joins operands[i] and operands[i+1]
  int answer = 0;
  /// Distinct sequences of intermediate step values; each ends at the answer.
  std::vector<std::vector<int>> valid_orders;
  std::vector<TokenId> prompt;
  std::vector<TokenId> trace;  // canonical solution, ends with EOS
  int difficulty = 0;          // number of operands
};

struct VerifierResult {
  double reward = 0.0;
  std::vector<bool> step_flags;
  std::optional<std::size_t> first_error_step;
  bool parsed = false;
  bool terminated = false;
  std::optional<int> final_answer;
  std::size_t marker_count = 0;
};

/// Builds a fully described instance from operands and operators.
TaskInstance make_instance(std::vector<int> operands, std::vector<Op> ops, int modulus,
                           std::uint64_t id = 0);

/// All distinct step-value sequences that evaluate the expression.
std::vector<std::vector<int>> enumerate_valid_orders(std::span<const int> operands,
                                                     std::span<const Op> ops, int modulus);

/// Operands and operators drawn uniformly; chains of three or more operands
/// are redrawn until at least two distinct orders exist.
TaskInstance generate_instance(Rng& rng, int difficulty, int modulus = 7);

VerifierResult verify(const TaskInstance& instance, std::span<const TokenId> tokens);

/// Privileged symbol for the teacher branch: the answer digit.
TokenId privileged_context(const TaskInstance& instance);

/// A solution following a chosen valid order, optionally with one revised
/// step (wrong digit, MARKER, correct digit) at `revise_step`.
std::vector<TokenId> solution_tokens(const TaskInstance& instance, std::size_t order_index,
                                     std::optional<std::size_t> revise_step = std::nullopt,
                                     int wrong_digit = 0);

// Line-delimited instance files: "id modulus a o b o c ... | trace-tokens".
std::string serialize_instance(const TaskInstance& instance);
TaskInstance parse_instance(const std::string& line);
void save_instances(const std::vector<TaskInstance>& instances, const std::filesystem::path& path);
std::vector<TaskInstance> load_instances(const std::filesystem::path& path);

}  // namespace dasd
