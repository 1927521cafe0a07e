// Command-line front end: train, eval, probe, intervene, ablate, report.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 validation error,
// 4 runtime error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dasd/config.hpp"
#include "dasd/probes.hpp"
#include "dasd/run.hpp"

namespace fs = std::filesystem;
using namespace dasd;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

TrainConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  TrainConfig config = load_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

void print_health(const HealthReport& h) {
  std::cout << "avg_at_k " << h.avg_at_k << "  step_acc " << h.step_acc << "  fes "
            << h.first_error_step << "  csr " << h.correct_step_ratio << "  e_density "
            << h.e_density << "  rev_rate " << h.rev_rate << "  distinct3 " << h.distinct3
            << "  entropy_p80 " << h.entropy_p80 << "\n";
  for (const auto& [k, v] : h.pass_at_k) std::cout << "pass@" << k << " " << v << "  ";
  std::cout << "\n";
}

// Trains into a fresh run directory; the config is checked before anything
// touches the filesystem.
RunResult train_into(const fs::path& out, const TrainConfig& config,
                     const std::function<RunResult(const TrainConfig&, const RunHooks&)>& run) {
  const auto eval_set = make_eval_set(config);
  const auto dir = RunDirectory::create(out, config, eval_set);
  auto result = run(config, dir.hooks());
  dir.write_final(result.final_checkpoint);
  write_file_atomic(out / "report.txt", render_report_text({summarize_run(out)}));
  write_file_atomic(out / "report.csv", render_report_csv({summarize_run(out)}));
  return result;
}

struct RunState {
  RunDirectory dir;
  TrainConfig config;
  std::vector<TaskInstance> eval_set;
  PolicyCheckpoint checkpoint;
};

RunState open_run(const fs::path& root, const std::string& checkpoint) {
  auto dir = RunDirectory::open(root);
  auto config = dir.config();
  auto eval_set = load_instances(root / "instances.txt");
  auto ck = load_checkpoint(checkpoint.empty() ? dir.latest_checkpoint() : fs::path(checkpoint));
  return RunState{dir, config, eval_set, ck};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direction-adaptive self-distillation testbed"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, checkpoint, kind, panel, target = "high_H",
                                                                       action = "preserve",
                                                                       arm = "low_H";
  std::vector<std::string> sets, runs;
  bool resume = false;
  int k = 0, n = 400, sign = 1, flip_step = 150;
  double alpha = 0.5, threshold = 0.5;
  std::uint64_t seed = 7;

  auto* train = app.add_subcommand("train", "train one run into a run directory");
  train->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--set", sets, "override key=value");
  train->add_flag("--resume", resume, "continue from the latest checkpoint in --out");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the pinned eval set");
  eval->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--checkpoint", checkpoint, "checkpoint (default: latest)");
  eval->add_option("--k", k, "rollouts per instance (default: eval_k)");

  auto* probe = app.add_subcommand("probe", "signflip, pressure, tv_shift or arm_flip");
  probe->add_option("--kind", kind, "probe")
      ->required()
      ->check(CLI::IsMember({"signflip", "pressure", "tv_shift", "arm_flip"}));
  probe->add_option("--config", config_path, "config file (signflip, arm_flip)");
  probe->add_option("--out", out_dir, "new run directory (signflip, arm_flip)");
  probe->add_option("--set", sets, "override key=value");
  probe->add_option("--run", run_dir, "trained run directory (pressure, tv_shift)");
  probe->add_option("--checkpoint", checkpoint, "checkpoint (default: latest)");
  probe->add_option("--sign", sign, "+1 conformity, -1 novelty")->check(CLI::IsMember({-1, 1}));
  probe->add_option("--arm", arm, "arm to flip")->check(CLI::IsMember({"low_H", "high_H"}));
  probe->add_option("--flip-step", flip_step, "update at which the arm flips");

  auto* intervene = app.add_subcommand("intervene", "prefix, fork or revision interventions");
  intervene->add_option("--kind", kind, "intervention")
      ->required()
      ->check(CLI::IsMember({"prefix", "fork", "revision"}));
  intervene->add_option("--run", run_dir, "trained run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  intervene->add_option("--checkpoint", checkpoint, "checkpoint (default: latest)");
  intervene->add_option("--n", n, "samples (per cell for prefix)");
  intervene->add_option("--alpha", alpha, "novelty exponent");
  intervene->add_option("--threshold", threshold, "bucket entropy quantile");
  intervene->add_option("--target", target, "fork target")
      ->check(CLI::IsMember({"high_H", "low_H", "random"}));
  intervene->add_option("--action", action, "revision action")
      ->check(CLI::IsMember({"preserve", "suppress", "teacher_force"}));
  intervene->add_option("--seed", seed, "probe seed");

  auto* ablate = app.add_subcommand("ablate", "design-space and sensitivity sweeps");
  ablate->add_option("--config", config_path, "base config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", out_dir, "sweep directory")->required();
  ablate->add_option("--panel", panel, "A, B, C, rho, beta or all")
      ->required()
      ->check(CLI::IsMember({"A", "B", "C", "rho", "beta", "all"}));
  ablate->add_option("--set", sets, "override key=value");

  auto* report = app.add_subcommand("report", "compare the final evaluation of runs");
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", out_dir, "directory for report.txt and report.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      const auto config = load_with_overrides(config_path, sets);
      if (resume) {
        const auto dir = RunDirectory::open(out_dir);
        if (load_config(fs::path(out_dir) / "config.copy") != config) {
          throw ConfigError("config differs from the one stored in " + out_dir);
        }
        const auto ck = load_checkpoint(dir.latest_checkpoint());
        dir.truncate_after(ck.step);
        const auto result = train_run(config, dir.hooks(), ck);
        dir.write_final(result.final_checkpoint);
        write_file_atomic(fs::path(out_dir) / "report.txt",
                          render_report_text({summarize_run(out_dir)}));
        write_file_atomic(fs::path(out_dir) / "report.csv",
                          render_report_csv({summarize_run(out_dir)}));
        if (!result.snapshots.empty()) print_health(result.snapshots.back().health);
      } else {
        const auto result = train_into(out_dir, config, [](const TrainConfig& c, const RunHooks& h) {
          return train_run(c, h);
        });
        if (!result.snapshots.empty()) print_health(result.snapshots.back().health);
      }
    } else if (*eval) {
      const auto st = open_run(run_dir, checkpoint);
      const int kk = k > 0 ? k : st.config.eval_k;
      const TaskVocabulary vocab(st.config.modulus);
      const auto samples =
          evaluate(st.checkpoint.policy, st.eval_set, kk, st.config.max_len, st.config.eval_seed,
                   st.config.workers > 1 ? Exec::parallel : Exec::serial, st.config.workers);
      const auto health = health_report(samples, vocab.marker(), vocab.size());
      json curve = json::array();
      for (int j = 1; j <= kk; ++j) curve.push_back({j, mean_pass_at_k(samples, j)});
      json record = to_json(EvalSnapshot{st.checkpoint.step, health});
      record["pass_at_k_curve"] = curve;
      record["k"] = kk;
      write_file_atomic(fs::path(run_dir) / "eval" /
                            ("step-" + std::to_string(st.checkpoint.step) + ".json"),
                        record.dump(2) + "\n");
      print_health(health);
    } else if (*probe) {
      if (kind == "signflip" || kind == "arm_flip") {
        if (config_path.empty() || out_dir.empty()) {
          throw ConfigError(kind + " needs --config and --out");
        }
        const auto config = load_with_overrides(config_path, sets);
        const auto result = train_into(out_dir, config, [&](const TrainConfig& c, const RunHooks& h) {
          if (kind == "signflip") return signflip_probe(c, sign, h);
          return arm_flip_run(c, arm == "low_H" ? FlipArm::low_h : FlipArm::high_h, flip_step, h);
        });
        if (!result.snapshots.empty()) print_health(result.snapshots.back().health);
      } else {
        if (run_dir.empty()) throw ConfigError(kind + " needs --run");
        const auto st = open_run(run_dir, checkpoint);
        const auto context = make_context(st.config, st.eval_set);
        const auto probes = fs::path(run_dir) / "probes";
        if (kind == "pressure") {
          TrainConfig c = st.config;
          c.mode = TrainMode::dasd;
          const auto groups = collect_batch(st.checkpoint.policy, st.eval_set, c, context, 0,
                                            Exec::serial);
          const auto records = token_records(groups);
          const auto rep = pressure_vs_entropy(records);
          write_file_atomic(probes / "pressure.json", to_json(rep).dump(2) + "\n");
          std::cout << "tokens " << rep.tokens << "  spearman "
                    << (rep.spearman ? std::to_string(*rep.spearman) : "undefined") << "\n";
        } else {
          const auto res = tv_shift(st.checkpoint.policy, sign, st.eval_set, st.config, context);
          const auto path = probes / (sign > 0 ? "tv_shift_conformity.jsonl" : "tv_shift_novelty.jsonl");
          std::string lines;
          for (const auto& r : res.records) {
            json j = to_json(r);
            j["schema"] = kProbeSchema;
            j["sign"] = res.sign;
            j["learning_rate"] = res.learning_rate;
            lines += j.dump() + "\n";
          }
          write_file_atomic(path, lines);
          std::cout << res.records.size() << " records written to " << path.string() << "\n";
        }
      }
    } else if (*intervene) {
      const auto st = open_run(run_dir, checkpoint);
      const auto probes = fs::path(run_dir) / "probes";
      const int max_len = st.config.max_len;
      if (kind == "prefix") {
        const auto rep = intervention_report(
            st.checkpoint.policy, st.eval_set, standard_intervention_grid(alpha, threshold), n,
            max_len, seed, st.config.workers > 1 ? Exec::parallel : Exec::serial,
            st.config.workers);
        std::string lines;
        for (const auto& c : rep.cells) {
          lines += to_json(c).dump() + "\n";
          auto pct = [](const std::optional<double>& x) {
            return x ? std::to_string(*x) : std::string("undefined");
          };
          std::cout << to_string(c.spec.bucket) << " " << to_string(c.spec.mode)
                    << "  d_step_acc% " << pct(c.d_step_acc) << "  d_e_density% "
                    << pct(c.d_e_density) << "  skipped " << c.skipped << "/" << c.samples
                    << "\n";
        }
        write_file_atomic(probes / "prefix_interventions.jsonl", lines);
      } else if (kind == "fork") {
        const Bucket b = target == "random" ? Bucket::random_control : parse_bucket(target);
        const auto res = causal_fork_intervention(st.checkpoint.policy, st.eval_set, b, n, max_len, seed);
        for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
        json j = to_json(res);
        j["target"] = target;
        write_file_atomic(probes / ("fork_" + target + ".json"), j.dump(2) + "\n");
        std::cout << "d_reward " << res.d_reward << "  d_rev_rate " << res.d_rev_rate << "\n";
      } else {
        const auto res = revision_intervention(st.checkpoint.policy, st.eval_set,
                                               parse_revision_action(action), n, max_len, seed);
        json j = to_json(res);
        j["action"] = action;
        write_file_atomic(probes / ("revision_" + action + ".json"), j.dump(2) + "\n");
        std::cout << "marker_prefixes " << res.marker_prefixes << "  d_correct " << res.d_correct
                  << (res.low_power ? "  (low power)" : "") << "\n";
      }
    } else if (*ablate) {
      const auto base = load_with_overrides(config_path, sets);
      const auto plan = ablation_plan(base, panel);
      for (const auto& r : plan) r.config.validate();
      std::vector<RunSummary> summaries;
      for (const auto& r : plan) {
        const fs::path dir = fs::path(out_dir) / r.name;
        std::cerr << "ablate: " << r.name << "\n";
        train_into(dir, r.config, [](const TrainConfig& c, const RunHooks& h) {
          return train_run(c, h);
        });
        summaries.push_back(summarize_run(dir));
      }
      write_file_atomic(fs::path(out_dir) / "report.txt", render_report_text(summaries));
      write_file_atomic(fs::path(out_dir) / "report.csv", render_report_csv(summaries));
      std::cout << render_report_text(summaries);
    } else if (*report) {
      std::vector<RunSummary> summaries;
      for (const auto& r : runs) summaries.push_back(summarize_run(r));
      const auto text = render_report_text(summaries);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file_atomic(fs::path(out_dir) / "report.txt", text);
        write_file_atomic(fs::path(out_dir) / "report.csv", render_report_csv(summaries));
      }
      std::cout << text;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
