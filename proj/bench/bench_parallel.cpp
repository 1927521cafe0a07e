// Serial vs OpenMP timing for rollout collection, evaluation and the
// intervention grid. Each pair is also checked for identical output.

#include <chrono>
#include <cstdio>
#include <omp.h>

#include "CLI11.hpp"
#include "dasd/probes.hpp"

using namespace dasd;

namespace {

template <typename F>
double seconds(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

bool same_groups(const std::vector<RolloutGroup>& a, const std::vector<RolloutGroup>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].advantage.advantages != b[i].advantage.advantages) return false;
    for (std::size_t j = 0; j < a[i].rollouts.size(); ++j) {
      if (a[i].rollouts[j].tokens != b[i].rollouts[j].tokens) return false;
    }
  }
  return true;
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-14s serial %9.4f s  parallel %9.4f s  speedup %5.2fx  %s\n", name, serial,
              parallel, serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs parallel kernels"};
  int workers = omp_get_max_threads();
  int reps = 3;
  int prompts = 64;
  app.add_option("--workers", workers, "OpenMP threads");
  app.add_option("--reps", reps, "repetitions per timing");
  app.add_option("--prompts", prompts, "prompts per batch");
  CLI11_PARSE(app, argc, argv);

  TrainConfig config;
  config.workers = workers;
  config.batch_prompts = prompts;
  const auto eval_set = make_eval_set(config);
  const auto context = make_context(config, eval_set);
  const Policy policy = warmup_policy(config, context);

  Rng rng = Rng::stream(config.seed, 99);
  std::vector<TaskInstance> batch;
  for (int i = 0; i < prompts; ++i) batch.push_back(sample_training_instance(rng, config, context));

  std::printf("workers %d, prompts %d, group %d, eval %zu x %d\n", workers, prompts,
              config.group_size, eval_set.size(), config.eval_k);

  std::vector<RolloutGroup> gs, gp;
  const double cs = seconds([&] { gs = collect_batch(policy, batch, config, context, 0, Exec::serial); }, reps);
  const double cp = seconds([&] { gp = collect_batch(policy, batch, config, context, 0, Exec::parallel); }, reps);
  row("collect_batch", cs, cp, same_groups(gs, gp));

  std::vector<EvalSample> es, ep;
  const TaskVocabulary vocab(config.modulus);
  const double ts = seconds([&] {
    es = evaluate(policy, eval_set, config.eval_k, config.max_len, config.eval_seed, Exec::serial);
  }, reps);
  const double tp = seconds([&] {
    ep = evaluate(policy, eval_set, config.eval_k, config.max_len, config.eval_seed, Exec::parallel,
                  workers);
  }, reps);
  row("evaluate", ts, tp,
      health_report(es, vocab.marker(), vocab.size()) == health_report(ep, vocab.marker(), vocab.size()));

  InterventionReport rs, rp;
  const auto grid = standard_intervention_grid();
  const double is = seconds([&] {
    rs = intervention_report(policy, eval_set, grid, 400, config.max_len, 5, Exec::serial);
  }, reps);
  const double ip = seconds([&] {
    rp = intervention_report(policy, eval_set, grid, 400, config.max_len, 5, Exec::parallel, workers);
  }, reps);
  bool same = rs.cells.size() == rp.cells.size();
  for (std::size_t i = 0; same && i < rs.cells.size(); ++i) {
    same = rs.cells[i].step_acc == rp.cells[i].step_acc && rs.cells[i].e_density == rp.cells[i].e_density;
  }
  row("interventions", is, ip, same);
  return 0;
}
