#ifndef ICEPOP_SCHEDULER_HPP_
#define ICEPOP_SCHEDULER_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "icepop/objective.hpp"
#include "icepop/policy.hpp"
#include "icepop/rollout.hpp"
#include "icepop/tasks.hpp"

namespace icepop {

inline constexpr std::int64_t kUnlimited = std::numeric_limits<std::int64_t>::max();

struct BudgetConfig {
  std::int64_t token_budget = 2000;        // Phi
  int infer_capacity = 96;                 // Omega_infer
  std::int64_t retention_threshold = 3;    // sigma; kUnlimited disables purging
  std::optional<int> train_capacity;       // Omega_train; recorded, not enforced
  std::int64_t sync_cost_ticks = 0;
  std::int64_t tick_cap = 1'000'000;       // per iteration
  // Caps new prompts admitted per budgeted iteration. Unset in the standard
  // algorithm; with an unbounded budget it turns an iteration into one batch.
  std::optional<int> prompts_per_iteration;
  int batch_prompts = 12;                  // prompts per synchronous baseline step

  void validate() const;
};

struct StepReport {
  std::int64_t iteration = 0;
  std::int64_t rollout_ticks = 0;
  std::int64_t trained_tokens = 0;
  std::int64_t purged_rollouts = 0;
  std::int64_t resumed_rollouts = 0;
  std::int64_t completed_rollouts = 0;
  double stale_token_fraction = 0.0;
  std::int64_t budget_counter = 0;   // C when generation stopped
  std::int64_t trained_rollouts = 0;
  std::int64_t end_to_end_ticks = 0; // rollout ticks plus weight sync
};

// Per-tick observation for tracing and invariant audits.
struct TickEvent {
  std::int64_t iteration = 0;
  std::int64_t tick = 0;            // 1-based within the iteration
  std::int64_t occupancy = 0;       // |P_infer| after refill, before generation
  std::int64_t completed = 0;       // rollouts that turned terminal on this tick
  std::int64_t completed_tokens = 0;
  std::int64_t longest_completed = 0;
  std::int64_t counter = 0;         // C after the tick
  std::int64_t max_retention_generating = 0;
};

using TickObserver = std::function<void(const TickEvent&)>;

// Produces tokens for rollouts. Implementations own no scheduler state.
class RolloutGenerator {
 public:
  virtual ~RolloutGenerator() = default;
  // Called once when a rollout is spawned.
  virtual void start(Rollout& rollout) { (void)rollout; }
  virtual TokenRecord next_token(Rollout& rollout) = 0;
  virtual std::int64_t version() const = 0;
};

// Samples from the inference engine at a fixed parameter snapshot.
class PolicyGenerator : public RolloutGenerator {
 public:
  PolicyGenerator(const Policy& policy, const PolicyParams& params, Engine engine, double temperature)
      : policy_(policy), params_(params), engine_(engine), temperature_(temperature) {}

  TokenRecord next_token(Rollout& rollout) override;
  std::int64_t version() const override { return params_.version_id; }

 private:
  const Policy& policy_;
  const PolicyParams& params_;
  Engine engine_;
  double temperature_;
};

struct LengthSpec {
  enum class Kind { Constant, LogNormal, Cycle };
  Kind kind = Kind::LogNormal;
  int value = 32;                 // Constant
  double median = 32.0;           // LogNormal
  double sigma = 0.9;             // LogNormal, log-space std
  std::vector<int> cycle;         // Cycle: length of sibling k is cycle[k % size]

  void validate() const;
  // Expected length after clamping to [1, max_len].
  double expected_length(int max_len) const;
};

// Emits filler tokens and an EOS at a pre-drawn target length.
class ScriptedLengthGenerator : public RolloutGenerator {
 public:
  ScriptedLengthGenerator(LengthSpec spec, Vocabulary vocab, std::int64_t version = 0)
      : spec_(std::move(spec)), vocab_(vocab), version_(version) {}

  void start(Rollout& rollout) override;
  TokenRecord next_token(Rollout& rollout) override;
  std::int64_t version() const override { return version_; }
  void set_version(std::int64_t v) { version_ = v; }

 private:
  LengthSpec spec_;
  Vocabulary vocab_;
  std::int64_t version_;
};

struct SchedulerState {
  std::vector<Rollout> infer_pool;
  std::vector<Rollout> train_pool;
  std::deque<Rollout> pending;   // spawned siblings waiting for a pool slot
  std::int64_t counter = 0;
  std::int64_t iteration = 0;
  std::int64_t tick_clock = 0;

  TaskSpace tasks;
  std::uint64_t seed = 0;
  RandomStream prompt_stream;
  std::uint64_t next_rollout_id = 0;
  std::uint64_t next_group_id = 0;

  // Fate audit.
  std::vector<std::uint64_t> trained_ids;
  std::vector<std::uint64_t> purged_ids;
};

SchedulerState make_scheduler_state(const TaskSpace& tasks, std::uint64_t seed);

struct IterationResult {
  StepReport report;
  std::vector<PromptGroup> groups;
};

// One budget-controlled iteration: age and purge carried-over rollouts, then
// generate in parallel ticks until completed tokens reach the budget, then
// emit every prompt group whose siblings are all terminal.
IterationResult run_iteration(SchedulerState& state, RolloutGenerator& gen, const BudgetConfig& cfg,
                              int group_size, const TickObserver& observer = {});

// Synchronous baseline: a fresh batch of prompts, every rollout run to
// termination in static waves of at most infer_capacity rollouts.
IterationResult run_iteration_baseline(SchedulerState& state, RolloutGenerator& gen,
                                       const BudgetConfig& cfg, int group_size);

struct ScheduleTotals {
  std::int64_t rollout_ticks = 0;
  std::int64_t end_to_end_ticks = 0;
  std::int64_t trained_tokens = 0;
  std::int64_t trained_rollouts = 0;
  std::int64_t purged_rollouts = 0;

  double rollout_ticks_per_token() const;
  double end_to_end_ticks_per_token() const;
};

struct ScheduleComparison {
  ScheduleTotals budgeted;
  ScheduleTotals baseline;
  // Baseline cost per trained token over budgeted cost per trained token.
  double speedup_rollout = 0.0;
  double speedup_end_to_end = 0.0;
};

// Runs both schedulers on identical seeds with scripted rollout lengths.
ScheduleComparison compare_schedules(const TaskSpace& tasks, const LengthSpec& lengths,
                                     const BudgetConfig& cfg, int group_size, int iterations,
                                     std::uint64_t seed);

}  // namespace icepop

#endif  // ICEPOP_SCHEDULER_HPP_
