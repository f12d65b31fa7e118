#ifndef ICEPOP_PROBE_HPP_
#define ICEPOP_PROBE_HPP_

#include <cstdint>
#include <vector>

#include "icepop/objective.hpp"
#include "icepop/policy.hpp"
#include "icepop/tasks.hpp"

namespace icepop {

struct DiscrepancySample {
  std::int64_t step = 0;
  double delta = 0.0;          // mean KL(pi_infer || pi_train) over probes
  double max_token_gap = 0.0;  // max |p_infer - p_train| over probes and tokens
  double mean_logp = 0.0;
  double grad_norm = 0.0;
  double clipped_fraction = 0.0;
  double entropy_all = 0.0;
  double entropy_clipped = 0.0;
};

// A fixed set of contexts on which discrepancy is measured.
class ProbeSet {
 public:
  static ProbeSet sample(const Policy& policy, const TaskSpace& tasks, int count, std::uint64_t seed);

  std::size_t size() const { return prompt_ids_.size(); }
  Context at(std::size_t i) const { return {prompt_ids_[i], histories_[i]}; }

 private:
  std::vector<std::int64_t> prompt_ids_;
  std::vector<std::vector<int>> histories_;
};

double categorical_kl(const TokenDistribution& p, const TokenDistribution& q);

// Exact discrepancy over the probes. Auxiliary fields are copied from `latest` when given.
DiscrepancySample measure(const Policy& policy, const PolicyParams& params, const ProbeSet& probes,
                          const Engine& infer, double temperature,
                          const LossBreakdown* latest = nullptr);

struct DiscrepancyGradient {
  double delta = 0.0;
  Matrix<double> grad;  // d delta / d weights
};

// delta(theta) and its exact gradient, holding the perturbation draws fixed.
DiscrepancyGradient discrepancy_with_gradient(const Policy& policy, const PolicyParams& params,
                                              const ProbeSet& probes, const Engine& infer,
                                              double temperature);

}  // namespace icepop

#endif  // ICEPOP_PROBE_HPP_
