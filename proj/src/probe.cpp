#include "icepop/probe.hpp"

#include <cmath>
#include <stdexcept>

namespace icepop {

ProbeSet ProbeSet::sample(const Policy& policy, const TaskSpace& tasks, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("probe set must be non-empty");
  RandomStream stream(hash_key({0x960be, seed}));
  const Vocabulary& vocab = policy.vocab();
  ProbeSet set;
  for (int i = 0; i < count; ++i) {
    set.prompt_ids_.push_back(sample_prompt(tasks, stream).prompt_id);
    const auto len = static_cast<int>(stream.uniform_index(static_cast<std::uint64_t>(policy.feature_config().window) + 1));
    std::vector<int> history;
    for (int k = 0; k < len; ++k) {
      // Histories never contain EOS: generation stops there.
      int t = static_cast<int>(stream.uniform_index(static_cast<std::uint64_t>(vocab.size - 1)));
      if (t >= vocab.eos_id) ++t;
      history.push_back(t);
    }
    set.histories_.push_back(std::move(history));
  }
  return set;
}

double categorical_kl(const TokenDistribution& p, const TokenDistribution& q) {
  if (p.probs.size() != q.probs.size()) throw std::invalid_argument("distribution sizes differ");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.probs.size(); ++i)
    if (p.probs[i] > 0.0) kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  return kl < 0.0 ? 0.0 : kl;
}

DiscrepancySample measure(const Policy& policy, const PolicyParams& params, const ProbeSet& probes,
                          const Engine& infer, double temperature, const LossBreakdown* latest) {
  if (probes.size() == 0) throw std::invalid_argument("probe set must be non-empty");
  DiscrepancySample s;
  double sum = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Context ctx = probes.at(i);
    const Vector<double> log_train = log_distribution(policy, params, ctx, Engine::train(), temperature);
    const Vector<double> log_infer = log_distribution(policy, params, ctx, infer, temperature);
    sum += categorical_kl_from_logs(log_infer, log_train);
    const double gap = (log_infer.array().exp() - log_train.array().exp()).abs().maxCoeff();
    if (gap > s.max_token_gap) s.max_token_gap = gap;
  }
  s.delta = sum / static_cast<double>(probes.size());
  if (latest != nullptr) {
    s.mean_logp = latest->mean_logp;
    s.grad_norm = latest->grad_norm();
    s.clipped_fraction = latest->clipped_fraction;
    s.entropy_all = latest->entropy_all;
    s.entropy_clipped = latest->entropy_clipped;
  }
  return s;
}

DiscrepancyGradient discrepancy_with_gradient(const Policy& policy, const PolicyParams& params,
                                              const ProbeSet& probes, const Engine& infer,
                                              double temperature) {
  const int vocab = policy.vocab_size();
  const double n = static_cast<double>(probes.size());
  const bool perturbed = infer.kind == EngineKind::Infer && infer.mismatch_scale != 0.0;
  DiscrepancyGradient out;
  out.grad = Matrix<double>::Zero(params.weights.rows(), params.weights.cols());

  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Context ctx = probes.at(i);
    const Vector<double> l = policy.logits(params, ctx);
    Vector<double> tau = Vector<double>::Zero(vocab);
    Vector<double> l_infer = l;
    if (perturbed) {
      tau = policy.perturbation_draws(infer, params, ctx);
      l_infer = perturb_logits(l, tau, infer.mismatch_scale);
    }
    const Vector<double> log_p = log_softmax(l / temperature);
    const Vector<double> log_q = log_softmax(l_infer / temperature);
    const double kl = categorical_kl_from_logs(log_q, log_p);
    out.delta += kl / n;

    const Vector<double> p = log_p.array().exp();
    const Vector<double> q = log_q.array().exp();
    const Vector<double> a = q.array() * (log_q.array() - log_p.array() - kl);  // d KL / d u_infer
    // The noise amplitude depends on l through the logit variance.
    const double spread_coeff = infer.mismatch_scale * a.dot(tau) * 2.0 / static_cast<double>(vocab);
    Vector<double> dl = (a.array() + spread_coeff * (l.array() - l.mean()) + (p - q).array()) / temperature;
    policy.accumulate_grad(ctx, dl / n, out.grad);
  }
  return out;
}

}  // namespace icepop
