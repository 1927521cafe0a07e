#include "dasd/taskenv.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dasd {

TaskVocabulary::TaskVocabulary(int modulus) : modulus_(modulus) {
  if (modulus < 2 || size() > 64) throw std::invalid_argument("modulus must be in [2, 18]");
}

TokenId TaskVocabulary::sep(int remaining) const {
  if (remaining < 0 || remaining >= kMaxSteps) throw std::out_of_range("separator count");
  return 3 * modulus_ + remaining;
}

TokenId TaskVocabulary::digit(int value) const {
  if (value < 0 || value >= modulus_) throw std::out_of_range("digit outside modulus");
  return value;
}

TokenId TaskVocabulary::op_token(Op op, int operand) const {
  return (op == Op::add ? modulus_ : 2 * modulus_) + digit(operand);
}

std::string TaskVocabulary::name(TokenId t) const {
  if (is_digit(t)) return std::to_string(t);
  if (t >= modulus_ && t < 2 * modulus_) return "+" + std::to_string(t - modulus_);
  if (t >= 2 * modulus_ && t < 3 * modulus_) return "*" + std::to_string(t - 2 * modulus_);
  if (is_sep(t)) return ";" + std::to_string(t - 3 * modulus_);
  if (t == eq()) return "=";
  if (t == marker()) return "~";
  if (t == bos()) return "<bos>";
  if (t == eos()) return "<eos>";
  if (t == priv_sep()) return "<priv>";
  return "<?" + std::to_string(t) + ">";
}

std::string TaskVocabulary::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += name(tokens[i]);
  }
  return out;
}

std::string TaskVocabulary::describe() const {
  return "modarith modulus=" + std::to_string(modulus_) + " size=" + std::to_string(size());
}

namespace {

// Sum of products: each group is the multiset of factors of one product term.
using Groups = std::vector<std::vector<int>>;

Groups split_groups(std::span<const int> operands, std::span<const Op> ops) {
  Groups groups{{operands[0]}};
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i] == Op::mul) {
      groups.back().push_back(operands[i + 1]);
    } else {
      groups.push_back({operands[i + 1]});
    }
  }
  return groups;
}

void reduce_all(const Groups& groups, int m, std::vector<int>& path,
                std::set<std::vector<int>>& out) {
  if (groups.size() == 1 && groups[0].size() == 1) {
    out.insert(path);
    return;
  }
  // multiply any two factors inside one product term
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& f = groups[g];
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = i + 1; j < f.size(); ++j) {
        Groups next = groups;
        auto& nf = next[g];
        const int v = (f[i] * f[j]) % m;
        nf.erase(nf.begin() + static_cast<std::ptrdiff_t>(j));
        nf[i] = v;
        path.push_back(v);
        reduce_all(next, m, path, out);
        path.pop_back();
      }
    }
  }
  // add any two fully reduced terms
  for (std::size_t a = 0; a < groups.size(); ++a) {
    if (groups[a].size() != 1) continue;
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      if (groups[b].size() != 1) continue;
      Groups next = groups;
      const int v = (groups[a][0] + groups[b][0]) % m;
      next[a] = {v};
      next.erase(next.begin() + static_cast<std::ptrdiff_t>(b));
      path.push_back(v);
      reduce_all(next, m, path, out);
      path.pop_back();
    }
  }
}

// Left-to-right evaluation: each product term folded in order, then the
// terms summed in order.
std::vector<int> canonical_order(std::span<const int> operands, std::span<const Op> ops, int m) {
  std::vector<int> steps;
  std::vector<int> terms;
  for (const auto& g : split_groups(operands, ops)) {
    int acc = g[0];
    for (std::size_t i = 1; i < g.size(); ++i) {
      acc = (acc * g[i]) % m;
      steps.push_back(acc);
    }
    terms.push_back(acc);
  }
  int acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) {
    acc = (acc + terms[i]) % m;
    steps.push_back(acc);
  }
  return steps;
}

}  // namespace

std::vector<std::vector<int>> enumerate_valid_orders(std::span<const int> operands,
                                                     std::span<const Op> ops, int modulus) {
  std::set<std::vector<int>> found;
  std::vector<int> path;
  reduce_all(split_groups(operands, ops), modulus, path, found);
  return {found.begin(), found.end()};
}

TaskInstance make_instance(std::vector<int> operands, std::vector<Op> ops, int modulus,
                           std::uint64_t id) {
  if (operands.size() < 2) throw std::invalid_argument("a chain needs at least two operands");
  if (ops.size() + 1 != operands.size()) throw std::invalid_argument("operator count mismatch");
  const TaskVocabulary vocab(modulus);
  for (int v : operands) vocab.digit(v);

  TaskInstance inst;
  inst.id = id;
  inst.modulus = modulus;
  inst.operands = std::move(operands);
  inst.ops = std::move(ops);
  inst.difficulty = static_cast<int>(inst.operands.size());
  inst.valid_orders = enumerate_valid_orders(inst.operands, inst.ops, modulus);
  const auto canon = canonical_order(inst.operands, inst.ops, modulus);
  inst.answer = canon.back();

  inst.prompt.push_back(vocab.digit(inst.operands[0]));
  for (std::size_t i = 0; i < inst.ops.size(); ++i) {
    inst.prompt.push_back(vocab.op_token(inst.ops[i], inst.operands[i + 1]));
  }
  for (std::size_t s = 0; s < canon.size(); ++s) {
    inst.trace.push_back(vocab.digit(canon[s]));
    inst.trace.push_back(vocab.sep(static_cast<int>(canon.size() - 1 - s)));
  }
  inst.trace.push_back(vocab.eq());
  inst.trace.push_back(vocab.digit(inst.answer));
  inst.trace.push_back(vocab.eos());
  return inst;
}

TaskInstance generate_instance(Rng& rng, int difficulty, int modulus) {
  if (difficulty < 2 || difficulty > 4) throw std::invalid_argument("difficulty must be 2, 3 or 4");
  const auto m = static_cast<std::uint64_t>(modulus);
  for (;;) {
    std::vector<int> operands;
    std::vector<Op> ops;
    for (int i = 0; i < difficulty; ++i) operands.push_back(static_cast<int>(rng.below(m)));
    for (int i = 0; i + 1 < difficulty; ++i) ops.push_back(rng.below(2) ? Op::mul : Op::add);
    auto inst = make_instance(std::move(operands), std::move(ops), modulus);
    if (difficulty == 2 || inst.valid_orders.size() >= 2) return inst;
  }
}

TokenId privileged_context(const TaskInstance& instance) {
  return TaskVocabulary(instance.modulus).digit(instance.answer);
}

VerifierResult verify(const TaskInstance& instance, std::span<const TokenId> tokens) {
  const TaskVocabulary vocab(instance.modulus);
  VerifierResult res;

  enum class State { steps, answer, after_answer, done };
  State state = State::steps;
  std::optional<int> pending;
  std::vector<int> steps;
  bool ok = true;

  for (TokenId t : tokens) {
    if (t == vocab.marker()) ++res.marker_count;
    if (state == State::done) {
      ok = false;
      break;
    }
    if (state == State::steps) {
      if (vocab.is_digit(t)) {
        if (pending) { ok = false; break; }
        pending = t;
      } else if (vocab.is_sep(t)) {
        if (!pending) { ok = false; break; }
        steps.push_back(*pending);
        pending.reset();
      } else if (t == vocab.marker()) {
        pending.reset();
      } else if (t == vocab.eq()) {
        if (pending) { ok = false; break; }
        state = State::answer;
      } else {
        ok = false;
        break;
      }
    } else if (state == State::answer) {
      if (!vocab.is_digit(t)) { ok = false; break; }
      res.final_answer = t;
      state = State::after_answer;
    } else if (state == State::after_answer) {
      if (t != vocab.eos()) { ok = false; break; }
      state = State::done;
    }
  }
  if (!ok) {
    res.final_answer.reset();
    return res;
  }
  res.parsed = true;
  res.terminated = state == State::done;

  // Orders still consistent with the accepted steps; a step is correct when
  // some consistent order continues with its value.
  std::vector<const std::vector<int>*> live;
  for (const auto& o : instance.valid_orders) live.push_back(&o);
  std::size_t accepted = 0;
  for (int v : steps) {
    std::vector<const std::vector<int>*> next;
    for (const auto* o : live) {
      if (accepted < o->size() && (*o)[accepted] == v) next.push_back(o);
    }
    const bool correct = !next.empty();
    res.step_flags.push_back(correct);
    if (correct) {
      live = std::move(next);
      ++accepted;
    } else if (!res.first_error_step) {
      res.first_error_step = res.step_flags.size() - 1;
    }
  }
  res.reward = (res.terminated && res.final_answer && *res.final_answer == instance.answer) ? 1.0 : 0.0;
  return res;
}

std::vector<TokenId> solution_tokens(const TaskInstance& instance, std::size_t order_index,
                                     std::optional<std::size_t> revise_step, int wrong_digit) {
  const TaskVocabulary vocab(instance.modulus);
  const auto& order = instance.valid_orders.at(order_index);
  std::vector<TokenId> out;
  for (std::size_t s = 0; s < order.size(); ++s) {
    if (revise_step && *revise_step == s) {
      out.push_back(vocab.digit(wrong_digit));
      out.push_back(vocab.marker());
    }
    out.push_back(vocab.digit(order[s]));
    out.push_back(vocab.sep(static_cast<int>(order.size() - 1 - s)));
  }
  out.push_back(vocab.eq());
  out.push_back(vocab.digit(instance.answer));
  out.push_back(vocab.eos());
  return out;
}

std::string serialize_instance(const TaskInstance& inst) {
  const TaskVocabulary vocab(inst.modulus);
  std::ostringstream out;
  out << inst.id << ' ' << inst.modulus << ' ' << inst.operands[0];
  for (std::size_t i = 0; i < inst.ops.size(); ++i) {
    out << ' ' << (inst.ops[i] == Op::add ? '+' : '*') << ' ' << inst.operands[i + 1];
  }
  out << " | " << vocab.render(inst.trace);
  return out.str();
}

TaskInstance parse_instance(const std::string& line) {
  const auto bar = line.find('|');
  if (bar == std::string::npos) throw std::invalid_argument("instance line lacks trace: " + line);
  std::istringstream in(line.substr(0, bar));
  std::uint64_t id = 0;
  int modulus = 0;
  if (!(in >> id >> modulus)) throw std::invalid_argument("instance line lacks id/modulus: " + line);
  std::vector<int> operands;
  std::vector<Op> ops;
  int a = 0;
  if (!(in >> a)) throw std::invalid_argument("instance line lacks operands: " + line);
  operands.push_back(a);
  std::string op;
  while (in >> op) {
    if (op != "+" && op != "*") throw std::invalid_argument("bad operator '" + op + "'");
    if (!(in >> a)) throw std::invalid_argument("dangling operator: " + line);
    ops.push_back(op == "+" ? Op::add : Op::mul);
    operands.push_back(a);
  }
  auto inst = make_instance(std::move(operands), std::move(ops), modulus, id);
  std::string trace = line.substr(bar + 1);
  trace.erase(0, trace.find_first_not_of(' '));
  if (trace != TaskVocabulary(modulus).render(inst.trace)) {
    throw std::invalid_argument("trace does not match instance: " + line);
  }
  return inst;
}

void save_instances(const std::vector<TaskInstance>& instances, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# dasd.instances/1\n";
  for (const auto& inst : instances) out << serialize_instance(inst) << "\n";
}

std::vector<TaskInstance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TaskInstance> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_instance(line));
  }
  return out;
}

}  // namespace dasd
