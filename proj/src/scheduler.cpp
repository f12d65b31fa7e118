#include "icepop/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "icepop/errors.hpp"

namespace icepop {

void BudgetConfig::validate() const {
  if (token_budget < 1) throw std::invalid_argument("token_budget must be at least 1");
  if (infer_capacity < 1) throw std::invalid_argument("infer_capacity must be at least 1");
  if (retention_threshold < 0) throw std::invalid_argument("retention_threshold must be >= 0");
  if (train_capacity && *train_capacity < 1) throw std::invalid_argument("train_capacity must be positive");
  if (sync_cost_ticks < 0) throw std::invalid_argument("sync_cost_ticks must be >= 0");
  if (tick_cap < 1) throw std::invalid_argument("tick_cap must be positive");
  if (prompts_per_iteration && *prompts_per_iteration < 0)
    throw std::invalid_argument("prompts_per_iteration must be >= 0");
}

TokenRecord PolicyGenerator::next_token(Rollout& rollout) {
  const std::vector<int> ids = rollout.token_ids();
  const Context ctx{rollout.task.prompt_id, ids};
  const Vector<double> log_p = log_distribution(policy_, params_, ctx, engine_, temperature_);
  TokenDistribution dist{log_p.array().exp()};
  const int token = sample_from(dist, rollout.stream);
  TokenRecord rec;
  rec.token = token;
  rec.logp_infer_old = log_p[token];
  rec.gen_version = params_.version_id;
  return rec;
}

void LengthSpec::validate() const {
  switch (kind) {
    case Kind::Constant:
      if (value < 1) throw std::invalid_argument("constant length must be at least 1");
      break;
    case Kind::LogNormal:
      if (!(median >= 1.0) || !(sigma >= 0.0)) throw std::invalid_argument("lognormal needs median >= 1, sigma >= 0");
      break;
    case Kind::Cycle:
      if (cycle.empty()) throw std::invalid_argument("cycle lengths must be non-empty");
      for (int v : cycle)
        if (v < 1) throw std::invalid_argument("cycle lengths must be at least 1");
      break;
  }
}

double LengthSpec::expected_length(int max_len) const {
  switch (kind) {
    case Kind::Constant: return std::clamp(value, 1, max_len);
    case Kind::Cycle: {
      double sum = 0.0;
      for (int v : cycle) sum += std::clamp(v, 1, max_len);
      return sum / static_cast<double>(cycle.size());
    }
    case Kind::LogNormal: {
      // E[len] = sum_{k>=1} P(len >= k), with len = clamp(round(X), 1, max_len).
      double e = 1.0;
      const double mu = std::log(median);
      for (int k = 2; k <= max_len; ++k) {
        if (sigma == 0.0) {
          e += (median >= k - 0.5) ? 1.0 : 0.0;
          continue;
        }
        const double z = (std::log(k - 0.5) - mu) / sigma;
        e += 0.5 * std::erfc(z / std::sqrt(2.0));
      }
      return e;
    }
  }
  return 0.0;
}

void ScriptedLengthGenerator::start(Rollout& rollout) {
  int len = 1;
  switch (spec_.kind) {
    case LengthSpec::Kind::Constant: len = spec_.value; break;
    case LengthSpec::Kind::Cycle:
      len = spec_.cycle[static_cast<std::size_t>(rollout.sibling) % spec_.cycle.size()];
      break;
    case LengthSpec::Kind::LogNormal:
      len = static_cast<int>(std::lround(
          std::min(1e9, std::exp(std::log(spec_.median) + spec_.sigma * rollout.stream.normal()))));
      break;
  }
  rollout.target_length = std::clamp(len, 1, rollout.task.max_len);
}

TokenRecord ScriptedLengthGenerator::next_token(Rollout& rollout) {
  TokenRecord rec;
  const int filler = vocab_.eos_id == 1 ? 2 % vocab_.size : 1;
  rec.token = rollout.length() + 1 >= rollout.target_length ? vocab_.eos_id : filler;
  rec.gen_version = version_;
  return rec;
}

SchedulerState make_scheduler_state(const TaskSpace& tasks, std::uint64_t seed) {
  tasks.validate();
  SchedulerState state;
  state.tasks = tasks;
  state.seed = seed;
  state.prompt_stream = RandomStream(hash_key({0x9a0, seed}));
  return state;
}

namespace {

bool is_terminal(const Rollout& r, int eos_id) {
  return !r.tokens.empty() && (r.tokens.back().token == eos_id || r.length() >= r.task.max_len);
}

// Samples one prompt and appends its siblings to the pending queue.
void spawn_prompt(SchedulerState& state, RolloutGenerator& gen, int group_size) {
  const TaskSpec task = sample_prompt(state.tasks, state.prompt_stream);
  const std::uint64_t gid = state.next_group_id++;
  for (int k = 0; k < group_size; ++k) {
    Rollout r;
    r.id = state.next_rollout_id++;
    r.group_id = gid;
    r.sibling = k;
    r.task = task;
    r.stream = RandomStream(hash_key({0x7011, state.seed, r.id}));
    gen.start(r);
    state.pending.push_back(std::move(r));
  }
}

template <typename Container>
std::int64_t erase_group(Container& c, std::uint64_t gid, std::vector<std::uint64_t>& purged) {
  std::int64_t n = 0;
  for (auto it = c.begin(); it != c.end();) {
    if (it->group_id == gid) {
      purged.push_back(it->id);
      it = c.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

PromptGroup assemble_group(const SchedulerState& state, std::vector<Rollout> siblings) {
  std::sort(siblings.begin(), siblings.end(),
            [](const Rollout& a, const Rollout& b) { return a.sibling < b.sibling; });
  PromptGroup group;
  group.task = siblings.front().task;
  for (const Rollout& r : siblings) {
    const std::vector<int> ids = r.token_ids();
    group.rewards.push_back(verify(state.tasks, r.task, ids).value);
  }
  group.advantages = group.rewards.size() >= 2 ? group_advantages(group.rewards)
                                               : std::vector<double>(group.rewards.size(), 0.0);
  group.rollouts = std::move(siblings);
  return group;
}

void fill_training_stats(IterationResult& result, std::int64_t version) {
  std::int64_t tokens = 0, stale = 0, rollouts = 0;
  for (const PromptGroup& g : result.groups) {
    for (const Rollout& r : g.rollouts) {
      ++rollouts;
      tokens += r.length();
      for (const TokenRecord& t : r.tokens)
        if (t.gen_version < version) ++stale;
    }
  }
  result.report.trained_tokens = tokens;
  result.report.trained_rollouts = rollouts;
  result.report.stale_token_fraction = tokens > 0 ? static_cast<double>(stale) / static_cast<double>(tokens) : 0.0;
}

}  // namespace

IterationResult run_iteration(SchedulerState& state, RolloutGenerator& gen, const BudgetConfig& cfg,
                              int group_size, const TickObserver& observer) {
  cfg.validate();
  if (group_size < 1) throw std::invalid_argument("group_size must be positive");
  const int eos = state.tasks.vocab.eos_id;
  IterationResult result;
  StepReport& report = result.report;
  report.iteration = state.iteration;
  state.counter = 0;

  // Age every carried-over rollout; a group with any member past the
  // retention threshold can never be trained and is purged as a whole.
  std::vector<std::uint64_t> doomed;
  for (Rollout& r : state.infer_pool) {
    ++r.retention_period;
    if (r.retention_period > cfg.retention_threshold) doomed.push_back(r.group_id);
  }
  std::sort(doomed.begin(), doomed.end());
  doomed.erase(std::unique(doomed.begin(), doomed.end()), doomed.end());
  for (std::uint64_t gid : doomed) {
    report.purged_rollouts += erase_group(state.infer_pool, gid, state.purged_ids);
    report.purged_rollouts += erase_group(state.train_pool, gid, state.purged_ids);
    report.purged_rollouts += erase_group(state.pending, gid, state.purged_ids);
  }
  report.resumed_rollouts = static_cast<std::int64_t>(state.infer_pool.size());

  int prompts_sampled = 0;
  const auto capacity = static_cast<std::size_t>(cfg.infer_capacity);
  while (state.counter < cfg.token_budget) {
    while (state.infer_pool.size() < capacity) {
      if (state.pending.empty()) {
        if (cfg.prompts_per_iteration && prompts_sampled >= *cfg.prompts_per_iteration) break;
        spawn_prompt(state, gen, group_size);
        ++prompts_sampled;
      }
      state.infer_pool.push_back(std::move(state.pending.front()));
      state.pending.pop_front();
    }
    if (state.infer_pool.empty()) break;  // prompt quota exhausted and nothing left to generate
    if (report.rollout_ticks >= cfg.tick_cap)
      throw TickCapExceeded("token budget not reached within " + std::to_string(cfg.tick_cap) + " ticks");

    TickEvent ev;
    ev.iteration = state.iteration;
    ev.occupancy = static_cast<std::int64_t>(state.infer_pool.size());
    for (Rollout& r : state.infer_pool) {
      ev.max_retention_generating = std::max<std::int64_t>(ev.max_retention_generating, r.retention_period);
      r.tokens.push_back(gen.next_token(r));
      r.terminal = is_terminal(r, eos);
    }
    std::vector<Rollout> still_active;
    still_active.reserve(state.infer_pool.size());
    for (Rollout& r : state.infer_pool) {
      if (r.terminal) {
        state.counter += r.length();
        ++report.completed_rollouts;
        ++ev.completed;
        ev.completed_tokens += r.length();
        ev.longest_completed = std::max<std::int64_t>(ev.longest_completed, r.length());
        state.train_pool.push_back(std::move(r));
      } else {
        still_active.push_back(std::move(r));
      }
    }
    state.infer_pool = std::move(still_active);
    ++report.rollout_ticks;
    ++state.tick_clock;
    ev.tick = report.rollout_ticks;
    ev.counter = state.counter;
    if (observer) observer(ev);
  }
  report.budget_counter = state.counter;

  // Emit complete groups in group-id order; partial groups stay in the pool.
  std::map<std::uint64_t, std::vector<Rollout>> by_group;
  for (Rollout& r : state.train_pool) by_group[r.group_id].push_back(std::move(r));
  state.train_pool.clear();
  for (auto& [gid, members] : by_group) {
    if (static_cast<int>(members.size()) == group_size) {
      for (const Rollout& r : members) state.trained_ids.push_back(r.id);
      result.groups.push_back(assemble_group(state, std::move(members)));
    } else {
      for (Rollout& r : members) state.train_pool.push_back(std::move(r));
    }
  }
  fill_training_stats(result, gen.version());
  report.end_to_end_ticks = report.rollout_ticks + cfg.sync_cost_ticks;
  ++state.iteration;
  return result;
}

IterationResult run_iteration_baseline(SchedulerState& state, RolloutGenerator& gen,
                                       const BudgetConfig& cfg, int group_size) {
  cfg.validate();
  if (cfg.batch_prompts < 1) throw std::invalid_argument("baseline needs a non-empty prompt set");
  if (group_size < 1) throw std::invalid_argument("group_size must be positive");
  const int eos = state.tasks.vocab.eos_id;
  IterationResult result;
  StepReport& report = result.report;
  report.iteration = state.iteration;

  std::deque<Rollout> saved_pending;
  std::swap(saved_pending, state.pending);
  for (int p = 0; p < cfg.batch_prompts; ++p) spawn_prompt(state, gen, group_size);
  std::vector<Rollout> batch(std::make_move_iterator(state.pending.begin()),
                             std::make_move_iterator(state.pending.end()));
  state.pending = std::move(saved_pending);

  const auto capacity = static_cast<std::size_t>(cfg.infer_capacity);
  for (std::size_t begin = 0; begin < batch.size(); begin += capacity) {
    const std::size_t end = std::min(batch.size(), begin + capacity);
    std::int64_t wave_ticks = 0;
    bool active = true;
    while (active) {
      if (wave_ticks >= cfg.tick_cap)
        throw TickCapExceeded("baseline wave exceeded " + std::to_string(cfg.tick_cap) + " ticks");
      active = false;
      for (std::size_t i = begin; i < end; ++i) {
        Rollout& r = batch[i];
        if (r.terminal) continue;
        r.tokens.push_back(gen.next_token(r));
        r.terminal = is_terminal(r, eos);
        if (r.terminal) {
          ++report.completed_rollouts;
          report.budget_counter += r.length();
        } else {
          active = true;
        }
      }
      ++wave_ticks;
    }
    report.rollout_ticks += wave_ticks;
  }
  state.tick_clock += report.rollout_ticks;

  std::map<std::uint64_t, std::vector<Rollout>> by_group;
  for (Rollout& r : batch) by_group[r.group_id].push_back(std::move(r));
  for (auto& [gid, members] : by_group) {
    for (const Rollout& r : members) state.trained_ids.push_back(r.id);
    result.groups.push_back(assemble_group(state, std::move(members)));
  }
  fill_training_stats(result, gen.version());
  report.end_to_end_ticks = report.rollout_ticks + cfg.sync_cost_ticks;
  ++state.iteration;
  return result;
}

double ScheduleTotals::rollout_ticks_per_token() const {
  return trained_tokens > 0 ? static_cast<double>(rollout_ticks) / static_cast<double>(trained_tokens) : 0.0;
}

double ScheduleTotals::end_to_end_ticks_per_token() const {
  return trained_tokens > 0 ? static_cast<double>(end_to_end_ticks) / static_cast<double>(trained_tokens)
                            : 0.0;
}

namespace {

void accumulate(ScheduleTotals& totals, const StepReport& r) {
  totals.rollout_ticks += r.rollout_ticks;
  totals.end_to_end_ticks += r.end_to_end_ticks;
  totals.trained_tokens += r.trained_tokens;
  totals.trained_rollouts += r.trained_rollouts;
  totals.purged_rollouts += r.purged_rollouts;
}

}  // namespace

ScheduleComparison compare_schedules(const TaskSpace& tasks, const LengthSpec& lengths,
                                     const BudgetConfig& cfg, int group_size, int iterations,
                                     std::uint64_t seed) {
  lengths.validate();
  if (iterations < 1) throw std::invalid_argument("iterations must be positive");
  ScheduleComparison out;
  {
    SchedulerState state = make_scheduler_state(tasks, seed);
    ScriptedLengthGenerator gen(lengths, tasks.vocab);
    for (int it = 0; it < iterations; ++it) {
      gen.set_version(it);
      accumulate(out.budgeted, run_iteration(state, gen, cfg, group_size).report);
    }
  }
  {
    SchedulerState state = make_scheduler_state(tasks, seed);
    ScriptedLengthGenerator gen(lengths, tasks.vocab);
    for (int it = 0; it < iterations; ++it) {
      gen.set_version(it);
      accumulate(out.baseline, run_iteration_baseline(state, gen, cfg, group_size).report);
    }
  }
  const double b = out.budgeted.rollout_ticks_per_token();
  const double be = out.budgeted.end_to_end_ticks_per_token();
  out.speedup_rollout = b > 0.0 ? out.baseline.rollout_ticks_per_token() / b : 0.0;
  out.speedup_end_to_end = be > 0.0 ? out.baseline.end_to_end_ticks_per_token() / be : 0.0;
  return out;
}

}  // namespace icepop
