#include "icepop/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "icepop/errors.hpp"

namespace icepop {

std::vector<int> Rollout::token_ids() const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(t.token);
  return ids;
}

void MaskingBounds::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0 && 1.0 <= beta))
    throw std::invalid_argument("masking bounds must satisfy 0 < alpha <= 1 <= beta");
}

std::string_view to_string(Algo algo) {
  switch (algo) {
    case Algo::IcePop: return "icepop";
    case Algo::GRPO: return "grpo";
    case Algo::TIS: return "tis";
  }
  return "unknown";
}

Algo parse_algo(std::string_view name) {
  if (name == "icepop") return Algo::IcePop;
  if (name == "grpo") return Algo::GRPO;
  if (name == "tis") return Algo::TIS;
  throw std::invalid_argument("unknown algo '" + std::string(name) + "' (expected icepop, grpo or tis)");
}

void ObjectiveConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must be in (0, 1)");
  if (!(kl_coeff >= 0.0)) throw std::invalid_argument("kl_coeff must be >= 0");
  if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (!(tis_cap > 0.0)) throw std::invalid_argument("tis_cap must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("group_advantages needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std_dev == 0.0) return adv;
  const double denom = std::max(std_dev, 1e-6);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

double mask(double k, const MaskingBounds& bounds) {
  if (!std::isfinite(k)) throw NumericError("mask argument is not finite");
  if (!(k > 0.0)) throw std::invalid_argument("mask argument must be positive");
  return (bounds.alpha <= k && k <= bounds.beta) ? k : 0.0;
}

double calibration_weight(double ratio, Algo algo, const MaskingBounds& bounds, double tis_cap) {
  switch (algo) {
    case Algo::IcePop: return mask(ratio, bounds);
    case Algo::GRPO: return ratio;
    case Algo::TIS: return std::min(ratio, tis_cap);
  }
  return ratio;
}

LossBreakdown objective_and_grad(const Policy& policy, std::span<const PromptGroup> groups,
                                 const PolicyParams& theta, const PolicyParams& theta_old,
                                 const PolicyParams& ref, const ObjectiveConfig& cfg,
                                 const MaskingBounds& bounds) {
  cfg.validate();
  if (cfg.algo == Algo::IcePop) bounds.validate();
  const int vocab = policy.vocab_size();
  const double temp = cfg.temperature;

  LossBreakdown out;
  out.grad = Matrix<double>::Zero(theta.weights.rows(), theta.weights.cols());
  if (groups.empty()) return out;

  const double n_groups = static_cast<double>(groups.size());
  double logp_sum = 0.0, entropy_sum = 0.0, entropy_clipped_sum = 0.0, reward_sum = 0.0;
  std::size_t reward_count = 0;
  Vector<double> logit_grad(vocab);

  for (const PromptGroup& group : groups) {
    if (group.rollouts.empty()) throw std::invalid_argument("empty prompt group");
    if (group.advantages.size() != group.rollouts.size())
      throw std::invalid_argument("advantages not aligned with rollouts");
    for (double r : group.rewards) reward_sum += r;
    reward_count += group.rewards.size();
    const double g = static_cast<double>(group.rollouts.size());

    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const Rollout& rollout = group.rollouts[i];
      if (rollout.tokens.empty()) throw std::invalid_argument("empty rollout");
      const double adv = group.advantages[i];
      if (!std::isfinite(adv)) throw NumericError("non-finite advantage");
      const double w = 1.0 / (n_groups * g * static_cast<double>(rollout.tokens.size()));
      const std::vector<int> ids = rollout.token_ids();

      for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
        const TokenRecord& rec = rollout.tokens[t];
        if (rec.gen_version > theta_old.version_id)
          throw std::invalid_argument("token generated by a version newer than theta_old");
        if (!std::isfinite(rec.logp_infer_old) || !std::isfinite(rec.logp_train_old))
          throw NumericError("non-finite recorded log-probability");
        const Context ctx{rollout.task.prompt_id, std::span<const int>(ids.data(), t)};

        const Vector<double> log_p = log_softmax(policy.logits(theta, ctx) / temp);
        const double logp_cur = log_p[rec.token];
        const double ratio = std::exp(logp_cur - rec.logp_train_old);
        const double calib = std::exp(rec.logp_train_old - rec.logp_infer_old);
        const double m = calibration_weight(calib, cfg.algo, bounds, cfg.tis_cap);
        const bool kept = cfg.algo != Algo::IcePop || m != 0.0;

        const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        const double unclipped_term = ratio * adv;
        const double clipped_term = clipped_ratio * adv;
        const bool unclipped_active = unclipped_term <= clipped_term;
        const double surrogate = m * std::min(unclipped_term, clipped_term);

        const Vector<double> log_ref = log_softmax(policy.logits(ref, ctx) / temp);
        const double kl = categorical_kl_from_logs(log_p, log_ref);
        const double entropy = entropy_from_logs(log_p);

        out.objective_value += w * (surrogate - cfg.kl_coeff * kl);
        out.kl_to_ref += w * kl;
        out.per_token_mask_kept.push_back(kept);
        out.per_token_surrogate.push_back(surrogate);
        out.per_token_entropy.push_back(entropy);
        logp_sum += logp_cur;
        entropy_sum += entropy;
        if (!kept) {
          ++out.clipped_count;
          entropy_clipped_sum += entropy;
        }

        // d(objective)/d(temperature-scaled logits), then chain through 1/T.
        logit_grad.setZero();
        const double coeff = unclipped_active ? w * m * adv * ratio : 0.0;
        if (coeff != 0.0) {
          logit_grad = -coeff * log_p.array().exp();
          logit_grad[rec.token] += coeff;
        }
        if (cfg.kl_coeff != 0.0) logit_grad -= (w * cfg.kl_coeff) * kl_grad_first_logits(log_p, log_ref);
        policy.accumulate_grad(ctx, logit_grad / temp, out.grad);
      }
    }
  }

  out.token_count = out.per_token_mask_kept.size();
  const double n_tokens = static_cast<double>(out.token_count);
  out.clipped_fraction = static_cast<double>(out.clipped_count) / n_tokens;
  out.mean_logp = logp_sum / n_tokens;
  out.entropy_all = entropy_sum / n_tokens;
  out.entropy_clipped =
      out.clipped_count > 0 ? entropy_clipped_sum / static_cast<double>(out.clipped_count) : 0.0;
  out.reward_mean = reward_count > 0 ? reward_sum / static_cast<double>(reward_count) : 0.0;
  if (!std::isfinite(out.objective_value) || !out.grad.allFinite())
    throw NumericError("objective or gradient is not finite");
  return out;
}

PolicyParams sgd_update(const PolicyParams& theta, const Matrix<double>& grad, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (grad.rows() != theta.weights.rows() || grad.cols() != theta.weights.cols())
    throw std::invalid_argument("gradient shape does not match parameters");
  PolicyParams next{theta.weights + lr * grad, theta.version_id + 1};
  if (!next.weights.allFinite()) throw NumericError("parameter update produced non-finite weights");
  return next;
}

PolicyParams MomentOptimizer::step(const PolicyParams& theta, const Matrix<double>& grad, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (m_.size() == 0) {
    m_ = Matrix<double>::Zero(grad.rows(), grad.cols());
    v_ = Matrix<double>::Zero(grad.rows(), grad.cols());
  }
  if (grad.rows() != m_.rows() || grad.cols() != m_.cols())
    throw std::invalid_argument("gradient shape does not match optimizer state");
  ++steps_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  Matrix<double> dir = (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps_);
  PolicyParams next{theta.weights + lr * dir, theta.version_id + 1};
  if (!next.weights.allFinite()) throw NumericError("parameter update produced non-finite weights");
  return next;
}

}  // namespace icepop
