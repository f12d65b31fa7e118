#ifndef ICEPOP_OBJECTIVE_HPP_
#define ICEPOP_OBJECTIVE_HPP_

#include <span>
#include <string_view>
#include <vector>

#include "icepop/math.hpp"
#include "icepop/policy.hpp"
#include "icepop/rollout.hpp"

namespace icepop {

// Calibration-ratio window: ratios outside [alpha, beta] are masked out.
struct MaskingBounds {
  double alpha = 0.5;
  double beta = 5.0;

  void validate() const;
};

enum class Algo { IcePop, GRPO, TIS };

std::string_view to_string(Algo algo);
Algo parse_algo(std::string_view name);

struct ObjectiveConfig {
  double clip_eps = 0.2;
  double kl_coeff = 0.0;
  int group_size = 8;
  Algo algo = Algo::IcePop;
  double tis_cap = 2.0;
  double temperature = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double objective_value = 0.0;
  std::vector<bool> per_token_mask_kept;
  // Per-token weighted surrogate m * min(r A, clip(r) A), unaggregated.
  std::vector<double> per_token_surrogate;
  // Entropy of the training distribution at each token's context.
  std::vector<double> per_token_entropy;
  double clipped_fraction = 0.0;
  Matrix<double> grad;
  double kl_to_ref = 0.0;

  std::size_t token_count = 0;
  std::size_t clipped_count = 0;
  double mean_logp = 0.0;
  double entropy_all = 0.0;
  double entropy_clipped = 0.0;
  double reward_mean = 0.0;

  double grad_norm() const { return grad.size() == 0 ? 0.0 : grad.norm(); }
};

// Group-relative z-scores with a 1e-6 floor on the population std; a group
// with identical rewards gets all-zero advantages.
std::vector<double> group_advantages(std::span<const double> rewards);

// Returns k when alpha <= k <= beta, else 0.
double mask(double k, const MaskingBounds& bounds);

// Token weight applied in front of the clipped surrogate for each algorithm.
double calibration_weight(double ratio, Algo algo, const MaskingBounds& bounds, double tis_cap);

// Evaluates the token-mean / group-mean / batch-mean objective and its exact
// gradient with respect to theta.weights. The calibration weight and the
// advantages are constants; TokenRecord::logp_train_old supplies the
// denominator of the importance ratio.
LossBreakdown objective_and_grad(const Policy& policy, std::span<const PromptGroup> groups,
                                 const PolicyParams& theta, const PolicyParams& theta_old,
                                 const PolicyParams& ref, const ObjectiveConfig& cfg,
                                 const MaskingBounds& bounds);

// Gradient ascent step. Increments version_id.
PolicyParams sgd_update(const PolicyParams& theta, const Matrix<double>& grad, double lr);

// Bias-corrected first/second moment ascent; the optional alternative to sgd_update.
class MomentOptimizer {
 public:
  MomentOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  PolicyParams step(const PolicyParams& theta, const Matrix<double>& grad, double lr);

 private:
  double beta1_, beta2_, eps_;
  Matrix<double> m_, v_;
  long steps_ = 0;
};

}  // namespace icepop

#endif  // ICEPOP_OBJECTIVE_HPP_
