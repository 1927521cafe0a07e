#include "dasd/run.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dasd/config.hpp"

namespace dasd {

namespace fs = std::filesystem;
using nlohmann::json;

EvalSnapshot snapshot(const Policy& policy, const TrainConfig& config,
                      const std::vector<TaskInstance>& eval_set, std::uint64_t step) {
  const TaskVocabulary vocab(config.modulus);
  const auto samples = evaluate(policy, eval_set, config.eval_k, config.max_len, config.eval_seed,
                                config.workers > 1 ? Exec::parallel : Exec::serial,
                                config.workers);
  return EvalSnapshot{step, health_report(samples, vocab.marker(), vocab.size())};
}

RunResult train_run(const TrainConfig& config, const RunHooks& hooks,
                    const std::optional<PolicyCheckpoint>& resume) {
  Trainer trainer(config);
  if (resume) trainer.restore(*resume);
  RunResult result;
  result.eval_set = trainer.eval_set();

  auto eval_now = [&] {
    auto s = snapshot(trainer.policy(), config, trainer.eval_set(), trainer.step());
    if (hooks.on_eval) hooks.on_eval(s);
    result.snapshots.push_back(std::move(s));
  };
  const auto total = static_cast<std::uint64_t>(config.updates);
  if (config.eval_every > 0 && trainer.step() == 0) eval_now();
  while (trainer.step() < total) {
    auto stats = trainer.update();
    if (hooks.on_stats) hooks.on_stats(stats);
    result.stats.push_back(stats);
    const auto step = trainer.step();
    if (config.eval_every > 0 && step % static_cast<std::uint64_t>(config.eval_every) == 0) {
      eval_now();
    }
    if (config.checkpoint_every > 0 && step < total &&
        step % static_cast<std::uint64_t>(config.checkpoint_every) == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(trainer.checkpoint());
    }
  }
  if (config.eval_every > 0 &&
      (result.snapshots.empty() || result.snapshots.back().step != trainer.step())) {
    eval_now();
  }
  result.final_checkpoint = trainer.checkpoint();
  return result;
}

json to_json(const UpdateStats& s) {
  return json{{"schema", kStatsSchema},
              {"step", s.step},
              {"mean_reward", s.mean_reward},
              {"mean_length", s.mean_length},
              {"mean_entropy", s.mean_entropy},
              {"entropy_p80", s.entropy_p80},
              {"mean_abs_omega", s.mean_abs_omega},
              {"frac_omega_positive", s.frac_omega_positive},
              {"surrogate", s.surrogate},
              {"max_ratio_deviation", s.max_ratio_deviation},
              {"learning_rate", s.learning_rate},
              {"marker_rate", s.marker_rate}};
}

json to_json(const HealthReport& h) {
  json pass = json::array();
  for (const auto& [k, v] : h.pass_at_k) pass.push_back({k, v});
  return json{{"step_acc", h.step_acc},
              {"first_error_step", h.first_error_step},
              {"correct_step_ratio", h.correct_step_ratio},
              {"e_density", h.e_density},
              {"rev_rate", h.rev_rate},
              {"distinct3", h.distinct3},
              {"avg_at_k", h.avg_at_k},
              {"pass_at_k", pass},
              {"mean_length", h.mean_length},
              {"entropy_p80", h.entropy_p80}};
}

json to_json(const EvalSnapshot& s) {
  json j = to_json(s.health);
  j["schema"] = kEvalSchema;
  j["step"] = s.step;
  return j;
}

HealthReport health_from_json(const json& j) {
  HealthReport h;
  h.step_acc = j.at("step_acc").get<double>();
  h.first_error_step = j.at("first_error_step").get<double>();
  h.correct_step_ratio = j.at("correct_step_ratio").get<double>();
  h.e_density = j.at("e_density").get<double>();
  h.rev_rate = j.at("rev_rate").get<double>();
  h.distinct3 = j.at("distinct3").get<double>();
  h.avg_at_k = j.at("avg_at_k").get<double>();
  for (const auto& p : j.at("pass_at_k")) h.pass_at_k.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  h.mean_length = j.at("mean_length").get<double>();
  h.entropy_p80 = j.at("entropy_p80").get<double>();
  return h;
}

std::vector<AblationRun> ablation_plan(const TrainConfig& base, const std::string& panel) {
  const bool all = panel == "all";
  if (!all && panel != "A" && panel != "B" && panel != "C" && panel != "rho" && panel != "beta") {
    throw std::invalid_argument("unknown ablation panel '" + panel + "'");
  }
  std::vector<AblationRun> out;
  auto variant = [&](const std::string& name, auto edit) {
    TrainConfig c = base;
    c.mode = TrainMode::ablation;
    c.routing.direction = DirectionMap::tanh;
    c.routing.gate = GateKind::sigmoid_gap;
    c.routing.signal = RouterSignal::entropy;
    edit(c);
    out.push_back({name, c});
  };
  if (all || panel == "A") {
    for (auto s : {RouterSignal::entropy, RouterSignal::position_proxy, RouterSignal::token_frequency}) {
      variant("A-" + to_string(s), [&](TrainConfig& c) { c.routing.signal = s; });
    }
  }
  if (all || panel == "B") {
    for (auto d : {DirectionMap::tanh, DirectionMap::hard_threshold, DirectionMap::linear_ramp,
                   DirectionMap::const_plus, DirectionMap::const_minus}) {
      variant("B-" + to_string(d), [&](TrainConfig& c) { c.routing.direction = d; });
    }
  }
  if (all || panel == "C") {
    for (auto g : {GateKind::sigmoid_gap, GateKind::none, GateKind::fixed_threshold,
                   GateKind::magnitude_only}) {
      variant("C-" + to_string(g), [&](TrainConfig& c) { c.routing.gate = g; });
    }
  }
  if (all || panel == "rho") {
    for (double rho : {0.05, 0.20, 0.50, 0.75, 0.95}) {
      TrainConfig c = base;
      c.mode = TrainMode::dasd;
      c.routing.rho = rho;
      std::ostringstream name;
      name << "rho-" << rho;
      out.push_back({name.str(), c});
    }
  }
  if (all || panel == "beta") {
    for (double beta : {0.25, 0.5, 1.0, 2.0}) {
      TrainConfig c = base;
      c.mode = TrainMode::dasd;
      c.beta = beta;
      std::ostringstream name;
      name << "beta-" << beta;
      out.push_back({name.str(), c});
    }
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_json_line(const fs::path& path, const json& record) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  out << record.dump() << '\n';
}

std::vector<json> read_json_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

RunDirectory RunDirectory::create(const fs::path& root, const TrainConfig& config,
                                  const std::vector<TaskInstance>& eval_set) {
  if (fs::exists(root / "config.copy")) {
    throw std::runtime_error("run directory " + root.string() + " already holds a run");
  }
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "eval");
  fs::create_directories(root / "probes");
  write_file_atomic(root / "config.copy", config_to_text(config));
  save_instances(eval_set, root / "instances.txt");
  return RunDirectory(root);
}

RunDirectory RunDirectory::open(const fs::path& root) {
  if (!fs::exists(root / "config.copy")) {
    throw std::runtime_error(root.string() + " is not a run directory");
  }
  return RunDirectory(root);
}

fs::path RunDirectory::checkpoint_path(std::uint64_t step) const {
  std::ostringstream name;
  name << "step-" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return root_ / "checkpoints" / name.str();
}

fs::path RunDirectory::final_checkpoint_path() const { return root_ / "checkpoints" / "final.ckpt"; }

fs::path RunDirectory::latest_checkpoint() const {
  if (fs::exists(final_checkpoint_path())) return final_checkpoint_path();
  fs::path best;
  for (const auto& e : fs::directory_iterator(root_ / "checkpoints")) {
    const auto name = e.path().filename().string();
    if (name.starts_with("step-") && name.ends_with(".ckpt") && e.path() > best) best = e.path();
  }
  if (best.empty()) throw std::runtime_error("no checkpoint in " + root_.string());
  return best;
}

void RunDirectory::append_stats(const UpdateStats& s) const {
  append_json_line(root_ / "stats.jsonl", to_json(s));
}

void RunDirectory::append_eval(const EvalSnapshot& s) const {
  append_json_line(root_ / "eval.jsonl", to_json(s));
}

void RunDirectory::write_checkpoint(const PolicyCheckpoint& ck) const {
  save_checkpoint(ck, checkpoint_path(ck.step));
}

void RunDirectory::write_final(const PolicyCheckpoint& ck) const {
  save_checkpoint(ck, final_checkpoint_path());
}

RunHooks RunDirectory::hooks() const {
  RunHooks h;
  h.on_stats = [dir = *this](const UpdateStats& s) { dir.append_stats(s); };
  h.on_eval = [dir = *this](const EvalSnapshot& s) { dir.append_eval(s); };
  h.on_checkpoint = [dir = *this](const PolicyCheckpoint& ck) { dir.write_checkpoint(ck); };
  return h;
}

TrainConfig RunDirectory::config() const { return load_config(root_ / "config.copy"); }

std::vector<EvalSnapshot> RunDirectory::eval_records() const {
  std::vector<EvalSnapshot> out;
  for (const auto& j : read_json_lines(root_ / "eval.jsonl")) {
    if (j.at("schema").get<std::string>() != kEvalSchema) {
      throw std::runtime_error("unsupported eval record schema");
    }
    out.push_back(EvalSnapshot{j.at("step").get<std::uint64_t>(), health_from_json(j)});
  }
  return out;
}

void RunDirectory::truncate_after(std::uint64_t step) const {
  // Stats records carry the step index before their update; eval records the
  // number of completed updates.
  const std::pair<const char*, std::uint64_t> files[] = {{"stats.jsonl", step},
                                                         {"eval.jsonl", step + 1}};
  for (const auto& [name, limit] : files) {
    const fs::path path = root_ / name;
    if (!fs::exists(path)) continue;
    std::string kept;
    for (const auto& j : read_json_lines(path)) {
      if (j.at("step").get<std::uint64_t>() < limit) kept += j.dump() + "\n";
    }
    write_file_atomic(path, kept);
  }
}

RunSummary summarize_run(const fs::path& root) {
  const auto dir = RunDirectory::open(root);
  const auto records = dir.eval_records();
  if (records.empty()) throw std::runtime_error("run " + root.string() + " has no evaluation");
  return RunSummary{root.filename().string(), dir.config(), records.back()};
}

namespace {

struct Column {
  std::string name;
  std::function<std::string(const RunSummary&)> value;
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::vector<Column> report_columns(const std::vector<RunSummary>& runs) {
  std::vector<Column> cols{
      {"run", [](const RunSummary& r) { return r.name; }},
      {"mode", [](const RunSummary& r) { return to_string(r.config.mode); }},
      {"beta", [](const RunSummary& r) { return num(effective_beta(r.config)); }},
      {"step", [](const RunSummary& r) { return std::to_string(r.final_eval.step); }},
      {"avg_at_k", [](const RunSummary& r) { return num(r.final_eval.health.avg_at_k); }},
      {"step_acc", [](const RunSummary& r) { return num(r.final_eval.health.step_acc); }},
      {"fes", [](const RunSummary& r) { return num(r.final_eval.health.first_error_step); }},
      {"csr", [](const RunSummary& r) { return num(r.final_eval.health.correct_step_ratio); }},
      {"e_density", [](const RunSummary& r) { return num(r.final_eval.health.e_density); }},
      {"rev_rate", [](const RunSummary& r) { return num(r.final_eval.health.rev_rate); }},
      {"distinct3", [](const RunSummary& r) { return num(r.final_eval.health.distinct3); }},
      {"mean_length", [](const RunSummary& r) { return num(r.final_eval.health.mean_length); }},
      {"entropy_p80", [](const RunSummary& r) { return num(r.final_eval.health.entropy_p80); }},
  };
  // Pass@k columns follow the k grid of the first run.
  if (!runs.empty()) {
    for (std::size_t i = 0; i < runs.front().final_eval.health.pass_at_k.size(); ++i) {
      const int k = runs.front().final_eval.health.pass_at_k[i].first;
      cols.push_back({"pass_at_" + std::to_string(k), [i](const RunSummary& r) {
                        const auto& p = r.final_eval.health.pass_at_k;
                        return i < p.size() ? num(p[i].second) : std::string("NA");
                      }});
    }
  }
  return cols;
}

}  // namespace

std::string render_report_text(const std::vector<RunSummary>& runs) {
  const auto cols = report_columns(runs);
  std::vector<std::size_t> width(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    width[c] = cols[c].name.size();
    for (const auto& r : runs) width[c] = std::max(width[c], cols[c].value(r).size());
  }
  std::ostringstream out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << cols[c].name;
  }
  out << '\n';
  for (const auto& r : runs) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out << (c ? "  " : "") << std::left << std::setw(static_cast<int>(width[c])) << cols[c].value(r);
    }
    out << '\n';
  }
  return out.str();
}

std::string render_report_csv(const std::vector<RunSummary>& runs) {
  const auto cols = report_columns(runs);
  std::ostringstream out;
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c].name;
  out << '\n';
  for (const auto& r : runs) {
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c].value(r);
    out << '\n';
  }
  return out.str();
}

}  // namespace dasd
