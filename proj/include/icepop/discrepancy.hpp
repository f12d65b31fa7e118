#ifndef ICEPOP_DISCREPANCY_HPP_
#define ICEPOP_DISCREPANCY_HPP_

#include <cstdint>
#include <string_view>
#include <vector>

#include "icepop/probe.hpp"
#include "icepop/train_loop.hpp"

namespace icepop {

enum class BiasMode { TheoremAligned, RLLoop };

std::string_view to_string(BiasMode mode);
BiasMode parse_bias_mode(std::string_view name);

// Constants of the compounding bound, fitted on one trajectory:
//   delta_{t+1} >= (1 + eta mu) delta_t - kappa mu,
//   and delta_{t+1} >= (1 + eta mu / 2) delta_t whenever delta_t >= delta_c.
struct DiscrepancyFit {
  double eta_hat = 0.0;
  double kappa_hat = 0.0;
  double delta_c = 0.0;
  bool growth_holds = true;
  double step_size = 0.0;    // mu
  double grad_bound = 0.0;   // max ||g_t||
  double drift_bound = 0.0;  // max |<grad delta, g*_t>|
  double smoothness = 0.0;   // L
  double align_const = 0.0;  // min <grad delta, b_t> / delta_t

  bool vacuous = false;
  bool one_step_bound_holds = true;
  int post_threshold_steps = 0;
  double strict_growth_fraction = 0.0;  // among post-threshold steps
  double growth_rate = 0.0;             // geometric per-step growth from a log-linear fit
};

struct CompoundingConfig {
  BiasMode mode = BiasMode::TheoremAligned;
  double mu = 1e-2;
  int steps = 100;
  // TheoremAligned: alignment the constructed bias must reach, and the
  // amplitude of the fixed per-token advantage table.
  double align_target = 1.0;
  double advantage_scale = 0.1;
  double init_scale = 0.0;
  double temperature = 1.0;
  double mismatch_scale = 0.1;
  std::uint64_t mismatch_seed = 7;
  int probe_count = 256;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CompoundingResult {
  std::vector<DiscrepancySample> trace;  // steps + 1 samples, delta_0 .. delta_T
  DiscrepancyFit fit;
};

// TheoremAligned: exact expected updates g_t = g*_t + b_t on the probe set
// with b_t lifted along grad delta until <grad delta, b_t> >= c0 delta_t.
// Perturbation draws are frozen so delta is a smooth function of theta.
CompoundingResult compounding_experiment(const Policy& policy, const PolicyParams& theta0,
                                         const TaskSpace& tasks, const CompoundingConfig& cfg);

// RLLoop: runs the training loop (lr = mu, iterations = steps) and fits
// geometric growth to the observed delta trace.
CompoundingResult compounding_experiment(const TrainConfig& train, const CompoundingConfig& cfg);

// Log-linear least squares on the positive entries of a delta trace; returns
// the per-step growth factor minus one.
double fit_geometric_growth(const std::vector<double>& deltas);

struct SweepRow {
  MaskingBounds bounds;
  std::vector<double> delta;
  std::vector<double> grad_norm;
  std::vector<double> clipped_fraction;
  std::vector<double> reward_mean;
  std::vector<double> max_token_gap;
  double final_reward_mean = 0.0;
};

// Runs the IcePop training loop once per bounds setting on identical seeds.
std::vector<SweepRow> sensitivity_sweep(const TrainConfig& base, const std::vector<MaskingBounds>& settings);

}  // namespace icepop

#endif  // ICEPOP_DISCREPANCY_HPP_
