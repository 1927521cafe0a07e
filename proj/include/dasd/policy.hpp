#pragma once

// Tabular autoregressive softmax policy.
//
// A row of logits is addressed by the last `window` tokens of the prefix
// (left-padded with the pad token). The privileged branch adds a residual row
// addressed by (window, privileged symbol) on top of the student row, so the
// two branches share every student parameter and differ only through the
// residual. Unseen rows read as zero logits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dasd/credit.hpp"
#include "dasd/rng.hpp"

namespace dasd {

inline constexpr int kMaxVocabulary = 64;
inline constexpr int kMaxWindow = 8;

/// Packed (window, privileged slot) address of a logit row.
struct ContextKey {
  std::uint64_t code = 0;

  friend auto operator<=>(const ContextKey&, const ContextKey&) = default;
};

using SparseGradient = std::map<ContextKey, std::vector<double>>;

struct SampledToken {
  TokenId token_id = 0;
  double logprob = 0.0;
  double entropy = 0.0;
};

struct Trajectory {
  std::vector<SampledToken> steps;

  std::vector<TokenId> tokens() const;
};

class Policy {
 public:
  Policy(int vocab_size, int window, TokenId pad_id);

  int vocab_size() const { return vocab_size_; }
  int window() const { return window_; }
  TokenId pad_id() const { return pad_id_; }

  ContextKey key(std::span<const TokenId> prefix, std::optional<TokenId> privileged) const;
  bool is_privileged(ContextKey key) const;
  std::vector<TokenId> window_of(ContextKey key) const;
  std::optional<TokenId> privileged_of(ContextKey key) const;
  /// Student key sharing the window of a privileged key.
  ContextKey student_key(ContextKey key) const;

  /// Effective logits: the student row, plus the residual row when privileged.
  std::vector<double> logits(ContextKey key) const;

  CategoricalDist next_distribution(std::span<const TokenId> prefix,
                                    std::optional<TokenId> privileged = std::nullopt) const;
  CategoricalDist distribution(ContextKey key) const;

  /// Stored row (student logits or privileged residual); nullptr if unseen.
  const std::vector<double>* find_row(ContextKey key) const;
  const std::map<ContextKey, std::vector<double>>& rows() const { return rows_; }
  std::vector<double>& mutable_row(ContextKey key);

  void validate_token(TokenId id) const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  int vocab_size_;
  int window_;
  TokenId pad_id_;
  std::map<ContextKey, std::vector<double>> rows_;
};

struct RolloutOptions {
  std::size_t max_len = 48;
  std::optional<TokenId> stop_token;
};

/// Draws one token by inverse-CDF sampling with a single uniform variate.
TokenId sample_index(const CategoricalDist& dist, double u);

/// Samples until the stop token or max_len. Logprob and entropy of each token
/// come from the distribution it was drawn from.
Trajectory sample_rollout(const Policy& policy, std::span<const TokenId> prompt,
                          const RolloutOptions& options, Rng& rng,
                          std::optional<TokenId> privileged = std::nullopt);

/// e(token) - softmax on the addressed row. For a privileged branch the row is
/// the residual, whose logit gradient has the same closed form.
SparseGradient logprob_grad(const Policy& policy, std::span<const TokenId> prefix,
                            std::optional<TokenId> privileged, TokenId token_id);

/// Adds `scale * row` into the gradient entry for `key`.
void accumulate(SparseGradient& into, ContextKey key, std::span<const double> row, double scale);

/// logits += learning_rate * gradient.
void apply_update(Policy& policy, const SparseGradient& gradient, double learning_rate);

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr int kCheckpointVersion = 1;

struct PolicyCheckpoint {
  int version = kCheckpointVersion;
  std::string vocabulary;  // free-form description, one line
  std::uint64_t step = 0;
  std::string rng_state;
  Policy policy{1, 1, 0};
};

void save_checkpoint(const PolicyCheckpoint& checkpoint, const std::filesystem::path& path);
PolicyCheckpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a digest of the parameter table; cheap equality fingerprint.
std::uint64_t parameter_hash(const Policy& policy);

}  // namespace dasd
