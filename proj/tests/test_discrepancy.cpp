#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "icepop/discrepancy.hpp"
#include "icepop/objective.hpp"
#include "icepop/probe.hpp"
#include "icepop/scheduler.hpp"
#include "icepop/train_loop.hpp"

using namespace icepop;

namespace {

// A batch sampled from the inference engine at `params`, with train
// log-probabilities stamped at the same snapshot.
std::vector<PromptGroup> sampled_batch(const Policy& policy, const PolicyParams& params, const TaskSpace& tasks,
                                       double scale, int prompts, std::uint64_t seed) {
  SchedulerState state = make_scheduler_state(tasks, seed);
  PolicyGenerator gen(policy, params, Engine::infer(scale, 7), 1.0);
  BudgetConfig b;
  b.batch_prompts = prompts;
  std::vector<PromptGroup> groups = run_iteration_baseline(state, gen, b, 8).groups;
  for (PromptGroup& g : groups)
    for (Rollout& r : g.rollouts) {
      const std::vector<int> ids = r.token_ids();
      for (std::size_t t = 0; t < r.tokens.size(); ++t)
        r.tokens[t].logp_train_old = log_prob(policy, params, Context{r.task.prompt_id, std::span<const int>(ids.data(), t)},
                                              r.tokens[t].token, Engine::train(), 1.0);
    }
  return groups;
}

}  // namespace

TEST_CASE("categorical KL matches the closed form") {
  TokenDistribution p{Vector<double>(3)}, q{Vector<double>(3)};
  p.probs << 0.5, 0.3, 0.2;
  q.probs << 0.25, 0.25, 0.5;
  const double want = 0.5 * std::log(2.0) + 0.3 * std::log(0.3 / 0.25) + 0.2 * std::log(0.4);
  CHECK(categorical_kl(p, q) == doctest::Approx(want).epsilon(1e-14));
  CHECK(categorical_kl(p, p) == 0.0);
}

TEST_CASE("discrepancy is zero without mismatch and never negative") {
  const Policy policy;
  const TaskSpace tasks;
  const ProbeSet probes = ProbeSet::sample(policy, tasks, 8, 2);
  RandomStream s(31);
  for (int i = 0; i < 1000; ++i) {
    const PolicyParams params = policy.random_params(3.0 * s.uniform(), i + 1);
    const DiscrepancySample zero = measure(policy, params, probes, Engine::infer(0.0, i), 1.0);
    CHECK(zero.delta == 0.0);
    CHECK(zero.max_token_gap == 0.0);
    const double d = measure(policy, params, probes, Engine::infer(0.5 * s.uniform(), i), 0.5 + s.uniform()).delta;
    CHECK(d >= 0.0);
  }
}

TEST_CASE("discrepancy gradient matches central differences") {
  const Policy policy(Vocabulary{6, 0}, FeatureConfig{32, 2});
  const TaskSpace tasks{Vocabulary{6, 0}};
  const ProbeSet probes = ProbeSet::sample(policy, tasks, 12, 5);
  const Engine infer = Engine::infer(0.2, 3);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PolicyParams params = policy.random_params(0.9, seed);
    const DiscrepancyGradient g = discrepancy_with_gradient(policy, params, probes, infer, 0.8);
    CHECK(g.delta == doctest::Approx(measure(policy, params, probes, infer, 0.8).delta).epsilon(1e-12));
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < params.weights.size(); ++i) {
      const double w = params.weights.data()[i];
      params.weights.data()[i] = w + h;
      const double up = measure(policy, params, probes, infer, 0.8).delta;
      params.weights.data()[i] = w - h;
      const double down = measure(policy, params, probes, infer, 0.8).delta;
      params.weights.data()[i] = w;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.grad.data()[i]) / std::max(1e-3, std::abs(fd)));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("aligned bias compounds the discrepancy") {
  const Policy policy;
  const TaskSpace tasks;
  CompoundingConfig cfg;
  cfg.steps = 60;
  cfg.probe_count = 64;
  const CompoundingResult r = compounding_experiment(policy, policy.zero_params(), tasks, cfg);
  REQUIRE(r.trace.size() == 61);
  CHECK_FALSE(r.fit.vacuous);
  CHECK(r.fit.growth_holds);
  CHECK(r.fit.eta_hat > 0.0);
  CHECK(r.trace.back().delta > r.trace.front().delta);
  CHECK(r.fit.growth_rate > 0.0);
}

TEST_CASE("without mismatch the growth claim is vacuous") {
  const Policy policy;
  const TaskSpace tasks;
  CompoundingConfig cfg;
  cfg.steps = 10;
  cfg.probe_count = 32;
  cfg.mismatch_scale = 0.0;
  const CompoundingResult r = compounding_experiment(policy, policy.zero_params(), tasks, cfg);
  CHECK(r.fit.vacuous);
  for (const DiscrepancySample& s : r.trace) CHECK(s.delta == 0.0);
  cfg.mu = 0.0;
  CHECK_THROWS_AS(compounding_experiment(policy, policy.zero_params(), tasks, cfg), std::invalid_argument);
  cfg.mu = -1.0;
  CHECK_THROWS_AS(compounding_experiment(policy, policy.zero_params(), tasks, cfg), std::invalid_argument);
}

TEST_CASE("geometric growth fit") {
  std::vector<double> d;
  for (int t = 0; t < 20; ++t) d.push_back(0.01 * std::pow(1.05, t));
  CHECK(fit_geometric_growth(d) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(fit_geometric_growth({0.0, 0.0, 1.0}) == 0.0);
}

TEST_CASE("sensitivity sweep runs one row per setting on shared seeds") {
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.probe_count = 16;
  cfg.budget.batch_prompts = 4;
  cfg.budget.token_budget = 400;
  const std::vector<SweepRow> rows = sensitivity_sweep(cfg, {{0.5, 5.0}, {0.5, 2.0}, {0.4, 5.0}});
  REQUIRE(rows.size() == 3);
  for (const SweepRow& r : rows) {
    CHECK(r.delta.size() == 3);
    CHECK(r.clipped_fraction.size() == 3);
  }
  // Step 0 is measured before any update, so every row starts from the same point.
  CHECK(rows[0].delta[0] == rows[1].delta[0]);

  const std::vector<SweepRow> same = sensitivity_sweep(cfg, {{0.5, 2.0}, {0.5, 2.0}});
  CHECK(same[0].delta == same[1].delta);
  CHECK(same[0].reward_mean == same[1].reward_mean);
  CHECK_THROWS_AS(sensitivity_sweep(cfg, {{0.5, 2.0}}), std::invalid_argument);
}

TEST_CASE("narrower bounds mask a superset of tokens on the same batch") {
  const Policy policy;
  const TaskSpace tasks;
  const PolicyParams params = policy.random_params(1.0, 4);
  const std::vector<PromptGroup> batch = sampled_batch(policy, params, tasks, 0.3, 12, 9);
  ObjectiveConfig cfg;
  const LossBreakdown wide = objective_and_grad(policy, batch, params, params, params, cfg, {0.5, 5.0});
  const LossBreakdown narrow = objective_and_grad(policy, batch, params, params, params, cfg, {0.5, 2.0});
  const LossBreakdown low = objective_and_grad(policy, batch, params, params, params, cfg, {0.4, 5.0});
  REQUIRE(wide.per_token_mask_kept.size() == narrow.per_token_mask_kept.size());
  for (std::size_t i = 0; i < wide.per_token_mask_kept.size(); ++i) {
    if (narrow.per_token_mask_kept[i]) CHECK(wide.per_token_mask_kept[i]);
    if (wide.per_token_mask_kept[i]) CHECK(low.per_token_mask_kept[i]);
  }
  CHECK(narrow.clipped_fraction >= wide.clipped_fraction);
  CHECK(wide.clipped_fraction >= low.clipped_fraction);
  CHECK(narrow.clipped_fraction > 0.0);
}

TEST_CASE("masked tokens sit at higher entropy than all tokens at the default config") {
  TrainConfig cfg;
  cfg.iterations = 100;
  double s = 0, ss = 0, n = 0;
  train_loop(cfg, [&](const TrainStep& st) {
    if (st.loss.clipped_count == 0) return;
    const double d = st.loss.entropy_clipped - st.loss.entropy_all;
    s += d;
    ss += d * d;
    n += 1;
  });
  REQUIRE(n >= 10);
  const double m = s / n;
  const double t = m / std::sqrt((ss - n * m * m) / (n - 1) / n);
  CAPTURE(m);
  CAPTURE(n);
  CHECK(t > 1.66);  // paired, one-sided, 5% level
}
