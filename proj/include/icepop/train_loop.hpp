#ifndef ICEPOP_TRAIN_LOOP_HPP_
#define ICEPOP_TRAIN_LOOP_HPP_

#include <cstdint>
#include <functional>
#include <vector>

#include "icepop/objective.hpp"
#include "icepop/policy.hpp"
#include "icepop/probe.hpp"
#include "icepop/scheduler.hpp"
#include "icepop/tasks.hpp"

namespace icepop {

enum class SchedulerMode { C3PO, Baseline };
enum class OptimizerKind { SGD, Moment };

struct TrainConfig {
  Vocabulary vocab;
  FeatureConfig features;
  TaskSpace tasks;  // tasks.vocab is overwritten with `vocab`
  ObjectiveConfig objective;
  MaskingBounds bounds;
  BudgetConfig budget;
  SchedulerMode scheduler = SchedulerMode::C3PO;
  double mismatch_scale = 0.1;
  std::uint64_t mismatch_seed = 7;
  double lr = 30.0;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double init_scale = 0.0;
  int probe_count = 256;
  std::uint64_t seed = 1;
  int iterations = 30;

  void validate() const;
  Engine infer_engine() const { return Engine::infer(mismatch_scale, mismatch_seed); }
  TaskSpace task_space() const;
  Policy make_policy() const { return Policy(vocab, features); }
};

struct TrainStep {
  StepReport report;
  LossBreakdown loss;
  DiscrepancySample sample;
};

struct TrainResult {
  std::vector<TrainStep> steps;
  PolicyParams final_params;
};

using StepCallback = std::function<void(const TrainStep&)>;

// Generate (budgeted or baseline) -> record train log-probs at the synced
// snapshot -> objective and gradient -> update -> simulated weight sync.
// The discrepancy sample of step t is taken at theta_t, before its update.
TrainResult train_loop(const TrainConfig& cfg, const StepCallback& on_step = {});

}  // namespace icepop

#endif  // ICEPOP_TRAIN_LOOP_HPP_
