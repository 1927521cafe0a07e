#pragma once

// Outer training loop with evaluation snapshots, and the on-disk run
// directory:
//
//   config.copy          effective config, every key
//   instances.txt        pinned evaluation instances
//   stats.jsonl          one UpdateStats record per update
//   eval.jsonl           one snapshot per evaluation
//   checkpoints/         step-NNNNNN.ckpt and final.ckpt
//   eval/ probes/        subcommand outputs
//   report.txt report.csv

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dasd/metrics.hpp"
#include "dasd/trainer.hpp"
#include "json.hpp"

namespace dasd {

inline constexpr const char* kStatsSchema = "dasd.stats/1";
inline constexpr const char* kEvalSchema = "dasd.eval/1";

struct EvalSnapshot {
  std::uint64_t step = 0;
  HealthReport health;

  friend bool operator==(const EvalSnapshot&, const EvalSnapshot&) = default;
};

EvalSnapshot snapshot(const Policy& policy, const TrainConfig& config,
                      const std::vector<TaskInstance>& eval_set, std::uint64_t step);

struct RunHooks {
  std::function<void(const UpdateStats&)> on_stats;
  std::function<void(const EvalSnapshot&)> on_eval;
  std::function<void(const PolicyCheckpoint&)> on_checkpoint;
};

struct RunResult {
  std::vector<UpdateStats> stats;
  std::vector<EvalSnapshot> snapshots;
  PolicyCheckpoint final_checkpoint;
  std::vector<TaskInstance> eval_set;
};

/// Runs until config.updates; evaluates at step 0, every eval_every steps
/// and at the end. A resumed run continues from the checkpoint's step.
RunResult train_run(const TrainConfig& config, const RunHooks& hooks = {},
                    const std::optional<PolicyCheckpoint>& resume = std::nullopt);

nlohmann::json to_json(const UpdateStats& s);
nlohmann::json to_json(const HealthReport& h);
nlohmann::json to_json(const EvalSnapshot& s);
HealthReport health_from_json(const nlohmann::json& j);

class RunDirectory {
 public:
  /// Creates the layout; refuses a directory that already holds a run.
  static RunDirectory create(const std::filesystem::path& root, const TrainConfig& config,
                             const std::vector<TaskInstance>& eval_set);
  static RunDirectory open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoint_path(std::uint64_t step) const;
  std::filesystem::path final_checkpoint_path() const;
  std::filesystem::path latest_checkpoint() const;

  void append_stats(const UpdateStats& s) const;
  void append_eval(const EvalSnapshot& s) const;
  void write_checkpoint(const PolicyCheckpoint& ck) const;
  void write_final(const PolicyCheckpoint& ck) const;

  /// RunHooks that persist everything into this directory.
  RunHooks hooks() const;

  TrainConfig config() const;
  std::vector<EvalSnapshot> eval_records() const;

  /// Drops records of updates after checkpoint `step`, before resuming.
  void truncate_after(std::uint64_t step) const;

 private:
  explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}
  std::filesystem::path root_;
};

void append_json_line(const std::filesystem::path& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);

/// Plain-text and CSV comparison of the final evaluation of several runs.
struct RunSummary {
  std::string name;
  TrainConfig config;
  EvalSnapshot final_eval;
};

RunSummary summarize_run(const std::filesystem::path& root);
std::string render_report_text(const std::vector<RunSummary>& runs);
std::string render_report_csv(const std::vector<RunSummary>& runs);

/// One named training run of an ablation sweep.
struct AblationRun {
  std::string name;
  TrainConfig config;
};

/// Panels: "A" routing signal, "B" direction map, "C" gate, "rho" router
/// quantile grid, "beta" coupling strength, "all" every panel.
std::vector<AblationRun> ablation_plan(const TrainConfig& base, const std::string& panel);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace dasd
