#include "dasd/policy.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dasd {

namespace {

constexpr int kTokenBits = 6;
constexpr int kPrivShift = kTokenBits * kMaxWindow;
constexpr std::uint64_t kTokenMask = (1ULL << kTokenBits) - 1;

constexpr const char* kMagic = "DASD-POLICY-CHECKPOINT";

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

}  // namespace

std::vector<TokenId> Trajectory::tokens() const {
  std::vector<TokenId> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token_id);
  return out;
}

Policy::Policy(int vocab_size, int window, TokenId pad_id)
    : vocab_size_(vocab_size), window_(window), pad_id_(pad_id) {
  if (vocab_size < 1 || vocab_size > kMaxVocabulary) {
    throw std::invalid_argument("vocabulary size must be in [1, 64]");
  }
  if (window < 1 || window > kMaxWindow) throw std::invalid_argument("window must be in [1, 8]");
  validate_token(pad_id);
}

void Policy::validate_token(TokenId id) const {
  if (id < 0 || id >= vocab_size_) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
}

ContextKey Policy::key(std::span<const TokenId> prefix, std::optional<TokenId> privileged) const {
  std::uint64_t code = 0;
  const std::size_t n = prefix.size();
  for (int slot = 0; slot < window_; ++slot) {
    // slot 0 is the oldest token of the window
    const std::ptrdiff_t idx =
        static_cast<std::ptrdiff_t>(n) - window_ + static_cast<std::ptrdiff_t>(slot);
    TokenId t = pad_id_;
    if (idx >= 0) {
      t = prefix[static_cast<std::size_t>(idx)];
      validate_token(t);
    }
    code |= static_cast<std::uint64_t>(t) << (kTokenBits * slot);
  }
  if (privileged) {
    validate_token(*privileged);
    code |= static_cast<std::uint64_t>(*privileged + 1) << kPrivShift;
  }
  return ContextKey{code};
}

bool Policy::is_privileged(ContextKey key) const { return (key.code >> kPrivShift) != 0; }

std::vector<TokenId> Policy::window_of(ContextKey key) const {
  std::vector<TokenId> w(static_cast<std::size_t>(window_));
  for (int slot = 0; slot < window_; ++slot) {
    w[static_cast<std::size_t>(slot)] =
        static_cast<TokenId>((key.code >> (kTokenBits * slot)) & kTokenMask);
  }
  return w;
}

std::optional<TokenId> Policy::privileged_of(ContextKey key) const {
  const std::uint64_t p = key.code >> kPrivShift;
  if (p == 0) return std::nullopt;
  return static_cast<TokenId>(p - 1);
}

ContextKey Policy::student_key(ContextKey key) const {
  return ContextKey{key.code & ((1ULL << kPrivShift) - 1)};
}

const std::vector<double>* Policy::find_row(ContextKey key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? nullptr : &it->second;
}

std::vector<double>& Policy::mutable_row(ContextKey key) {
  auto [it, inserted] = rows_.try_emplace(key);
  if (inserted) it->second.assign(static_cast<std::size_t>(vocab_size_), 0.0);
  return it->second;
}

std::vector<double> Policy::logits(ContextKey key) const {
  std::vector<double> out(static_cast<std::size_t>(vocab_size_), 0.0);
  if (const auto* base = find_row(student_key(key))) out = *base;
  if (is_privileged(key)) {
    if (const auto* residual = find_row(key)) {
      for (std::size_t v = 0; v < out.size(); ++v) out[v] += (*residual)[v];
    }
  }
  return out;
}

CategoricalDist Policy::distribution(ContextKey key) const {
  const auto z = logits(key);
  return CategoricalDist::softmax(z);
}

CategoricalDist Policy::next_distribution(std::span<const TokenId> prefix,
                                          std::optional<TokenId> privileged) const {
  return distribution(key(prefix, privileged));
}

TokenId sample_index(const CategoricalDist& dist, double u) {
  double cum = 0.0;
  TokenId last_positive = 0;
  for (std::size_t v = 0; v < dist.size(); ++v) {
    if (dist[v] <= 0.0) continue;
    last_positive = static_cast<TokenId>(v);
    cum += dist[v];
    if (u < cum) return static_cast<TokenId>(v);
  }
  return last_positive;
}

Trajectory sample_rollout(const Policy& policy, std::span<const TokenId> prompt,
                          const RolloutOptions& options, Rng& rng,
                          std::optional<TokenId> privileged) {
  if (options.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  Trajectory traj;
  traj.steps.reserve(options.max_len);
  for (std::size_t t = 0; t < options.max_len; ++t) {
    const auto dist = policy.next_distribution(prefix, privileged);
    const TokenId tok = sample_index(dist, rng.uniform());
    traj.steps.push_back({tok, std::log(dist[static_cast<std::size_t>(tok)]), token_entropy(dist)});
    prefix.push_back(tok);
    if (options.stop_token && tok == *options.stop_token) break;
  }
  return traj;
}

SparseGradient logprob_grad(const Policy& policy, std::span<const TokenId> prefix,
                            std::optional<TokenId> privileged, TokenId token_id) {
  policy.validate_token(token_id);
  const ContextKey k = policy.key(prefix, privileged);
  const auto dist = policy.distribution(k);
  std::vector<double> g(dist.probs().begin(), dist.probs().end());
  for (double& x : g) x = -x;
  g[static_cast<std::size_t>(token_id)] += 1.0;
  SparseGradient out;
  out.emplace(k, std::move(g));
  return out;
}

void accumulate(SparseGradient& into, ContextKey key, std::span<const double> row, double scale) {
  auto [it, inserted] = into.try_emplace(key);
  if (inserted) it->second.assign(row.size(), 0.0);
  for (std::size_t v = 0; v < row.size(); ++v) it->second[v] += scale * row[v];
}

void apply_update(Policy& policy, const SparseGradient& gradient, double learning_rate) {
  if (!std::isfinite(learning_rate)) throw std::invalid_argument("non-finite learning rate");
  for (const auto& [key, g] : gradient) {
    if (g.size() != static_cast<std::size_t>(policy.vocab_size())) {
      throw std::invalid_argument("gradient row has wrong length");
    }
    for (double x : g) {
      if (!std::isfinite(x)) throw std::invalid_argument("non-finite gradient entry");
    }
  }
  if (learning_rate == 0.0) return;
  for (const auto& [key, g] : gradient) {
    bool any = false;
    for (double x : g) any = any || x != 0.0;
    if (!any) continue;
    auto& row = policy.mutable_row(key);
    for (std::size_t v = 0; v < g.size(); ++v) {
      if (g[v] != 0.0) row[v] += learning_rate * g[v];
    }
  }
}

std::uint64_t parameter_hash(const Policy& policy) {
  std::uint64_t h = fnv1a(std::to_string(policy.vocab_size()) + "/" +
                          std::to_string(policy.window()) + "/" +
                          std::to_string(policy.pad_id()));
  for (const auto& [key, row] : policy.rows()) {
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(&key.code), sizeof key.code), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(row.data()),
                               row.size() * sizeof(double)),
              h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint text format. Every line up to the trailer is covered by an
// FNV-1a checksum; doubles are written as C99 hex floats so they round-trip
// bit-exactly.

void save_checkpoint(const PolicyCheckpoint& ck, const std::filesystem::path& path) {
  std::ostringstream body;
  const Policy& p = ck.policy;
  body << kMagic << "\n";
  body << "version " << kCheckpointVersion << "\n";
  body << "vocabulary " << ck.vocabulary << "\n";
  body << "vocab_size " << p.vocab_size() << "\n";
  body << "window " << p.window() << "\n";
  body << "pad " << p.pad_id() << "\n";
  body << "step " << ck.step << "\n";
  body << "rng " << ck.rng_state << "\n";
  body << "rows " << p.rows().size() << "\n";
  for (const auto& [key, row] : p.rows()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, key.code);
    body << "row " << buf;
    for (double x : row) body << ' ' << hex_double(x);
    body << "\n";
  }
  const std::string text = body.str();
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016" PRIx64, fnv1a(text));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out << text << "checksum " << sum << "\n";
    if (!out) throw CheckpointError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

PolicyCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.empty() || lines[0] != kMagic) {
    throw CheckpointCorruptError("missing checkpoint header in " + path.string());
  }
  // Version is checked before the checksum so an older or newer writer is
  // reported as such rather than as damage.
  if (lines.size() < 2 || lines[1].rfind("version ", 0) != 0) {
    throw CheckpointCorruptError("missing version line in " + path.string());
  }
  const int version = std::atoi(lines[1].c_str() + 8);
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                 " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const std::string& trailer = lines.back();
  if (trailer.rfind("checksum ", 0) != 0) {
    throw CheckpointCorruptError("missing checksum trailer in " + path.string());
  }
  std::string text;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) text += lines[i] + "\n";
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016" PRIx64, fnv1a(text));
  if (trailer.substr(9) != sum) throw CheckpointCorruptError("checksum mismatch in " + path.string());

  auto field = [&](std::size_t idx, const std::string& name) -> std::string {
    if (idx >= lines.size() || lines[idx].rfind(name + " ", 0) != 0) {
      throw CheckpointCorruptError("expected '" + name + "' at line " + std::to_string(idx + 1));
    }
    return lines[idx].substr(name.size() + 1);
  };
  try {
    PolicyCheckpoint ck;
    ck.version = version;
    ck.vocabulary = field(2, "vocabulary");
    const int vocab = std::stoi(field(3, "vocab_size"));
    const int window = std::stoi(field(4, "window"));
    const int pad = std::stoi(field(5, "pad"));
    ck.step = std::stoull(field(6, "step"));
    ck.rng_state = field(7, "rng");
    const std::size_t nrows = std::stoull(field(8, "rows"));
    ck.policy = Policy(vocab, window, pad);
    if (lines.size() != 9 + nrows + 1) throw CheckpointCorruptError("row count mismatch");
    for (std::size_t r = 0; r < nrows; ++r) {
      std::istringstream ls(field(9 + r, "row"));
      std::string code_hex;
      ls >> code_hex;
      ContextKey key{std::stoull(code_hex, nullptr, 16)};
      auto& row = ck.policy.mutable_row(key);
      for (int v = 0; v < vocab; ++v) {
        std::string tok;
        if (!(ls >> tok)) throw CheckpointCorruptError("short row " + std::to_string(r));
        char* end = nullptr;
        row[static_cast<std::size_t>(v)] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') throw CheckpointCorruptError("bad number " + tok);
      }
    }
    return ck;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointCorruptError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace dasd
