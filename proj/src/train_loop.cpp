#include "icepop/train_loop.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace icepop {

void TrainConfig::validate() const {
  vocab.validate();
  features.validate();
  task_space().validate();
  objective.validate();
  bounds.validate();
  budget.validate();
  if (!(mismatch_scale >= 0.0)) throw std::invalid_argument("mismatch scale must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be >= 0");
  if (probe_count < 1) throw std::invalid_argument("probe_count must be positive");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
}

TaskSpace TrainConfig::task_space() const {
  TaskSpace t = tasks;
  t.vocab = vocab;
  return t;
}

TrainResult train_loop(const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  const Policy policy = cfg.make_policy();
  const TaskSpace tasks = cfg.task_space();
  const Engine infer = cfg.infer_engine();
  const Engine train = Engine::train();
  const double temp = cfg.objective.temperature;

  TrainResult result;
  PolicyParams params = cfg.init_scale > 0.0
                            ? policy.random_params(cfg.init_scale, hash_key({0x1417, cfg.seed}))
                            : policy.zero_params();
  const PolicyParams ref = params;
  const ProbeSet probes = ProbeSet::sample(policy, tasks, cfg.probe_count, cfg.seed);
  SchedulerState state = make_scheduler_state(tasks, cfg.seed);
  MomentOptimizer moments;
  std::map<std::int64_t, PolicyParams> snapshots;

  for (int it = 0; it < cfg.iterations; ++it) {
    TrainStep step;
    step.sample = measure(policy, params, probes, infer, temp);
    step.sample.step = it;

    PolicyGenerator gen(policy, params, infer, temp);
    IterationResult iter = cfg.scheduler == SchedulerMode::C3PO
                               ? run_iteration(state, gen, cfg.budget, cfg.objective.group_size)
                               : run_iteration_baseline(state, gen, cfg.budget, cfg.objective.group_size);

    // The calibration ratio compares both engines at the generating version;
    // staleness then shows up only in r.
    snapshots.insert_or_assign(params.version_id, params);
    for (PromptGroup& g : iter.groups) {
      for (Rollout& r : g.rollouts) {
        const std::vector<int> ids = r.token_ids();
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
          const Context ctx{r.task.prompt_id, std::span<const int>(ids.data(), t)};
          const PolicyParams& old = snapshots.at(r.tokens[t].gen_version);
          r.tokens[t].logp_train_old = log_prob(policy, old, ctx, r.tokens[t].token, train, temp);
          r.tokens[t].logp_train_cur = log_prob(policy, params, ctx, r.tokens[t].token, train, temp);
        }
      }
    }
    std::int64_t oldest = params.version_id;
    for (const auto* pool : {&state.infer_pool, &state.train_pool})
      for (const Rollout& r : *pool)
        for (const TokenRecord& tok : r.tokens) oldest = std::min(oldest, tok.gen_version);
    std::erase_if(snapshots, [&](const auto& kv) { return kv.first < oldest; });

    step.loss = objective_and_grad(policy, iter.groups, params, params, ref, cfg.objective, cfg.bounds);
    step.sample.mean_logp = step.loss.mean_logp;
    step.sample.grad_norm = step.loss.grad_norm();
    step.sample.clipped_fraction = step.loss.clipped_fraction;
    step.sample.entropy_all = step.loss.entropy_all;
    step.sample.entropy_clipped = step.loss.entropy_clipped;

    params = cfg.optimizer == OptimizerKind::SGD ? sgd_update(params, step.loss.grad, cfg.lr)
                                                 : moments.step(params, step.loss.grad, cfg.lr);
    state.tick_clock += cfg.budget.sync_cost_ticks;
    step.report = iter.report;

    if (on_step) on_step(step);
    result.steps.push_back(std::move(step));
  }
  result.final_params = std::move(params);
  return result;
}

}  // namespace icepop
