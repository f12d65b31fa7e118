#include "icepop/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace icepop {

std::string_view to_string(BiasMode mode) {
  return mode == BiasMode::TheoremAligned ? "theorem_aligned" : "rl_loop";
}

BiasMode parse_bias_mode(std::string_view name) {
  if (name == "theorem_aligned") return BiasMode::TheoremAligned;
  if (name == "rl_loop") return BiasMode::RLLoop;
  throw std::invalid_argument("unknown bias mode '" + std::string(name) +
                              "' (expected theorem_aligned or rl_loop)");
}

void CompoundingConfig::validate() const {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  if (steps < 1) throw std::invalid_argument("steps must be positive");
  if (!(align_target > 0.0)) throw std::invalid_argument("align_target must be positive");
  if (!(advantage_scale >= 0.0)) throw std::invalid_argument("advantage_scale must be >= 0");
  if (!(mismatch_scale >= 0.0)) throw std::invalid_argument("mismatch scale must be >= 0");
  if (probe_count < 1) throw std::invalid_argument("probe_count must be positive");
}

namespace {

double frob(const Matrix<double>& a, const Matrix<double>& b) { return (a.array() * b.array()).sum(); }

// Exact on-train-policy gradient g* and infer-sampled gradient g over the
// probes, for a fixed advantage table A(ctx, a) centred under pi_train.
struct ExpectedGradients {
  Matrix<double> on_policy;
  Matrix<double> infer_sampled;
};

ExpectedGradients expected_gradients(const Policy& policy, const PolicyParams& params,
                                     const ProbeSet& probes, const Engine& infer, double temperature,
                                     double advantage_scale, std::uint64_t seed) {
  const int vocab = policy.vocab_size();
  const double n = static_cast<double>(probes.size());
  ExpectedGradients out{Matrix<double>::Zero(params.weights.rows(), params.weights.cols()),
                        Matrix<double>::Zero(params.weights.rows(), params.weights.cols())};
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Context ctx = probes.at(i);
    const Vector<double> p = distribution(policy, params, ctx, Engine::train(), temperature).probs;
    const Vector<double> q = distribution(policy, params, ctx, infer, temperature).probs;
    Vector<double> reward(vocab);
    const std::uint64_t key = hash_key({0xad7, seed, policy.context_key(ctx)});
    for (int v = 0; v < vocab; ++v)
      reward[v] = bits_to_open_unit(hash_key({key, static_cast<std::uint64_t>(v)}));
    const Vector<double> adv = advantage_scale * (reward.array() - p.dot(reward));
    // E_{a~d}[A(a) grad log p(a)] w.r.t. logits is (d.*A - p (d.A)) / T.
    const Vector<double> g_star = (p.array() * adv.array() - p.array() * p.dot(adv)) / temperature;
    const Vector<double> g_inf = (q.array() * adv.array() - p.array() * q.dot(adv)) / temperature;
    policy.accumulate_grad(ctx, g_star / n, out.on_policy);
    policy.accumulate_grad(ctx, g_inf / n, out.infer_sampled);
  }
  return out;
}

double max_gap(const Policy& policy, const PolicyParams& params, const ProbeSet& probes,
               const Engine& infer, double temperature) {
  return measure(policy, params, probes, infer, temperature).max_token_gap;
}

}  // namespace

double fit_geometric_growth(const std::vector<double>& deltas) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    if (!(deltas[t] > 0.0)) continue;
    const double x = static_cast<double>(t), y = std::log(deltas[t]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  if (n < 2) return 0.0;
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return std::expm1(slope);
}

CompoundingResult compounding_experiment(const Policy& policy, const PolicyParams& theta0,
                                         const TaskSpace& tasks, const CompoundingConfig& cfg) {
  cfg.validate();
  if (cfg.mode != BiasMode::TheoremAligned)
    throw std::invalid_argument("this overload runs the theorem-aligned construction");
  const Engine infer = Engine::infer(cfg.mismatch_scale, cfg.mismatch_seed);
  const ProbeSet probes = ProbeSet::sample(policy, tasks, cfg.probe_count, cfg.seed);
  const double mu = cfg.mu;

  // version_id stays fixed so the perturbation draws do not change along the path.
  PolicyParams theta = theta0;
  std::vector<double> deltas, align, drift, step_norm, lin;
  CompoundingResult result;

  for (int t = 0; t <= cfg.steps; ++t) {
    const DiscrepancyGradient dg = discrepancy_with_gradient(policy, theta, probes, infer, cfg.temperature);
    DiscrepancySample s;
    s.step = t;
    s.delta = dg.delta;
    s.max_token_gap = max_gap(policy, theta, probes, infer, cfg.temperature);
    deltas.push_back(dg.delta);
    if (t == cfg.steps) {
      result.trace.push_back(s);
      break;
    }

    const ExpectedGradients eg = expected_gradients(policy, theta, probes, infer, cfg.temperature,
                                                    cfg.advantage_scale, cfg.seed);
    Matrix<double> bias = eg.infer_sampled - eg.on_policy;
    const double norm2 = dg.grad.squaredNorm();
    if (norm2 > 0.0) {
      const double lift = std::max(0.0, cfg.align_target * dg.delta - frob(dg.grad, bias)) / norm2;
      bias += lift * dg.grad;
    }
    const Matrix<double> g = eg.on_policy + bias;
    align.push_back(frob(dg.grad, bias));
    drift.push_back(frob(dg.grad, eg.on_policy));
    step_norm.push_back(g.norm());
    lin.push_back(frob(dg.grad, g));
    s.grad_norm = g.norm();
    result.trace.push_back(s);
    theta.weights += mu * g;
  }

  DiscrepancyFit& fit = result.fit;
  fit.step_size = mu;
  fit.growth_rate = fit_geometric_growth(deltas);
  const bool all_zero = std::all_of(deltas.begin(), deltas.end(), [](double d) { return d == 0.0; });
  if (all_zero) {
    fit.vacuous = true;
    return result;
  }

  fit.align_const = std::numeric_limits<double>::infinity();
  for (int t = 0; t < cfg.steps; ++t) {
    if (deltas[t] > 0.0) fit.align_const = std::min(fit.align_const, align[t] / deltas[t]);
    fit.drift_bound = std::max(fit.drift_bound, std::abs(drift[t]));
    fit.grad_bound = std::max(fit.grad_bound, step_norm[t]);
    const double step2 = mu * mu * step_norm[t] * step_norm[t];
    if (step2 > 0.0) {
      const double remainder = std::abs(deltas[t + 1] - deltas[t] - mu * lin[t]);
      fit.smoothness = std::max(fit.smoothness, 2.0 * remainder / step2);
    }
  }
  fit.eta_hat = fit.align_const;
  fit.kappa_hat = fit.drift_bound + 0.5 * fit.smoothness * mu * fit.grad_bound * fit.grad_bound;
  if (!(fit.eta_hat > 0.0)) {
    fit.vacuous = true;
    return result;
  }
  fit.delta_c = 2.0 * fit.kappa_hat / fit.eta_hat;

  int strict = 0;
  for (int t = 0; t < cfg.steps; ++t) {
    if (deltas[t + 1] < (1.0 + fit.eta_hat * mu) * deltas[t] - fit.kappa_hat * mu)
      fit.one_step_bound_holds = false;
    if (deltas[t] >= fit.delta_c) {
      ++fit.post_threshold_steps;
      if (deltas[t + 1] < (1.0 + 0.5 * fit.eta_hat * mu) * deltas[t]) fit.growth_holds = false;
      if (deltas[t + 1] > deltas[t]) ++strict;
    }
  }
  fit.strict_growth_fraction =
      fit.post_threshold_steps > 0 ? static_cast<double>(strict) / fit.post_threshold_steps : 0.0;
  return result;
}

CompoundingResult compounding_experiment(const TrainConfig& train, const CompoundingConfig& cfg) {
  cfg.validate();
  if (cfg.mode != BiasMode::RLLoop) {
    const Policy policy = train.make_policy();
    const PolicyParams theta0 = cfg.init_scale > 0.0
                                    ? policy.random_params(cfg.init_scale, hash_key({0x1417, cfg.seed}))
                                    : policy.zero_params();
    return compounding_experiment(policy, theta0, train.task_space(), cfg);
  }
  TrainConfig run = train;
  run.lr = cfg.mu;
  run.iterations = cfg.steps;
  const TrainResult tr = train_loop(run);

  CompoundingResult result;
  std::vector<double> deltas;
  for (const TrainStep& s : tr.steps) {
    result.trace.push_back(s.sample);
    deltas.push_back(s.sample.delta);
  }
  DiscrepancyFit& fit = result.fit;
  fit.step_size = cfg.mu;
  fit.vacuous = std::all_of(deltas.begin(), deltas.end(), [](double d) { return d == 0.0; });
  fit.growth_rate = fit_geometric_growth(deltas);
  fit.growth_holds = fit.vacuous || fit.growth_rate > 0.0;
  fit.eta_hat = fit.growth_rate > 0.0 ? 2.0 * fit.growth_rate / cfg.mu : 0.0;
  for (const TrainStep& s : tr.steps) fit.grad_bound = std::max(fit.grad_bound, s.sample.grad_norm);
  return result;
}

std::vector<SweepRow> sensitivity_sweep(const TrainConfig& base, const std::vector<MaskingBounds>& settings) {
  if (settings.size() < 2) throw std::invalid_argument("sensitivity sweep needs at least two settings");
  std::vector<SweepRow> rows;
  for (const MaskingBounds& b : settings) {
    b.validate();
    TrainConfig cfg = base;
    cfg.objective.algo = Algo::IcePop;
    cfg.bounds = b;
    const TrainResult tr = train_loop(cfg);
    SweepRow row;
    row.bounds = b;
    for (const TrainStep& s : tr.steps) {
      row.delta.push_back(s.sample.delta);
      row.grad_norm.push_back(s.sample.grad_norm);
      row.clipped_fraction.push_back(s.sample.clipped_fraction);
      row.reward_mean.push_back(s.loss.reward_mean);
      row.max_token_gap.push_back(s.sample.max_token_gap);
    }
    row.final_reward_mean = row.reward_mean.empty() ? 0.0 : row.reward_mean.back();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace icepop
