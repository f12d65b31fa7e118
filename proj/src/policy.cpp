#include "icepop/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "icepop/errors.hpp"

namespace icepop {

namespace {

constexpr std::uint64_t kPromptTag = 0x9e0;
constexpr std::uint64_t kGramTag = 0x6a4;
constexpr std::uint64_t kNoiseTag = 0x4015e;

// History slots before the first generated token hash as this marker.
std::uint64_t history_token(const Context& ctx, int back) {
  const auto n = static_cast<std::int64_t>(ctx.history.size());
  const std::int64_t pos = n - back;
  return pos >= 0 ? static_cast<std::uint64_t>(ctx.history[static_cast<std::size_t>(pos)])
                  : 0xffffffffULL;
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("temperature must be positive and finite");
}

}  // namespace

void Vocabulary::validate() const {
  if (size < 2) throw std::invalid_argument("vocabulary size must be at least 2");
  if (eos_id < 0 || eos_id >= size) throw std::invalid_argument("eos_id outside vocabulary");
}

void FeatureConfig::validate() const {
  if (buckets < 2) throw std::invalid_argument("feature buckets must be at least 2");
  if (window < 0 || window > kMaxWindow)
    throw std::invalid_argument("feature window must be in [0, " + std::to_string(kMaxWindow) + "]");
}

Policy::Policy(Vocabulary vocab, FeatureConfig features) : vocab_(vocab), features_(features) {
  vocab_.validate();
  features_.validate();
}

ActiveFeatures Policy::features(const Context& ctx) const {
  ActiveFeatures out;
  const auto buckets = static_cast<std::uint64_t>(features_.buckets);
  // Bucket 0 is reserved for the bias; hashed features land in [1, buckets).
  out.index[out.count++] = 0;
  out.index[out.count++] =
      1 + static_cast<int>(hash_key({kPromptTag, static_cast<std::uint64_t>(ctx.prompt_id)}) %
                           (buckets - 1));
  std::uint64_t gram = hash_key({kGramTag, static_cast<std::uint64_t>(ctx.prompt_id)});
  for (int k = 1; k <= features_.window; ++k) {
    gram = hash_key({gram, static_cast<std::uint64_t>(k), history_token(ctx, k)});
    out.index[out.count++] = 1 + static_cast<int>(gram % (buckets - 1));
  }
  return out;
}

std::uint64_t Policy::context_key(const Context& ctx) const {
  std::uint64_t key = hash_key({static_cast<std::uint64_t>(ctx.prompt_id)});
  for (int k = 1; k <= features_.window; ++k) key = hash_key({key, history_token(ctx, k)});
  return key;
}

PolicyParams Policy::zero_params() const {
  return {Matrix<double>::Zero(features_.buckets, vocab_.size), 0};
}

PolicyParams Policy::random_params(double scale, std::uint64_t seed) const {
  PolicyParams params = zero_params();
  RandomStream stream(seed);
  for (Eigen::Index f = 0; f < params.weights.rows(); ++f) {
    for (Eigen::Index v = 0; v < params.weights.cols(); ++v)
      params.weights(f, v) = scale * stream.normal();
    params.weights.row(f).array() -= params.weights.row(f).mean();
  }
  return params;
}

Vector<double> Policy::logits(const PolicyParams& params, const Context& ctx) const {
  Vector<double> out = Vector<double>::Zero(vocab_.size);
  for (int f : features(ctx)) out += params.weights.row(f).transpose();
  if (!out.allFinite()) throw NumericError("non-finite logit: policy parameters are corrupted");
  return out;
}

Vector<double> Policy::perturbation_draws(const Engine& engine, const PolicyParams& params,
                                          const Context& ctx) const {
  const std::uint64_t key = hash_key({kNoiseTag, engine.mismatch_seed, context_key(ctx),
                                      static_cast<std::uint64_t>(params.version_id)});
  Vector<double> draws(vocab_.size);
  for (int v = 0; v < vocab_.size; ++v) {
    const double u = bits_to_open_unit(hash_key({key, static_cast<std::uint64_t>(v)}));
    draws[v] = student_t2_quantile(u);
  }
  return draws;
}

Vector<double> perturb_logits(const Vector<double>& logits, const Vector<double>& draws,
                              double scale) {
  const double spread2 = (logits.array() - logits.mean()).square().mean();
  return logits + (scale * (1.0 + spread2)) * draws;
}

Vector<double> Policy::engine_logits(const PolicyParams& params, const Context& ctx,
                                     const Engine& engine, double temperature) const {
  check_temperature(temperature);
  Vector<double> l = logits(params, ctx);
  if (engine.kind == EngineKind::Infer && engine.mismatch_scale != 0.0) {
    if (!(engine.mismatch_scale > 0.0)) throw std::invalid_argument("mismatch_scale must be >= 0");
    l = perturb_logits(l, perturbation_draws(engine, params, ctx), engine.mismatch_scale);
    if (!l.allFinite()) throw NumericError("non-finite perturbed logit");
  }
  return l / temperature;
}

void Policy::accumulate_grad(const Context& ctx, const Vector<double>& logit_grad,
                             Matrix<double>& grad) const {
  for (int f : features(ctx)) grad.row(f) += logit_grad.transpose();
}

TokenDistribution distribution(const Policy& policy, const PolicyParams& params,
                               const Context& ctx, const Engine& engine, double temperature) {
  return {softmax(policy.engine_logits(params, ctx, engine, temperature))};
}

Vector<double> log_distribution(const Policy& policy, const PolicyParams& params,
                                const Context& ctx, const Engine& engine, double temperature) {
  return log_softmax(policy.engine_logits(params, ctx, engine, temperature));
}

double log_prob(const Policy& policy, const PolicyParams& params, const Context& ctx, int token,
                const Engine& engine, double temperature) {
  if (!policy.vocab().contains(token)) throw std::invalid_argument("token outside vocabulary");
  const Vector<double> u = policy.engine_logits(params, ctx, engine, temperature);
  return u[token] - log_sum_exp(u);
}

int sample_from(const TokenDistribution& dist, RandomStream& stream) {
  const double u = stream.uniform();
  double cdf = 0.0;
  int last_positive = -1;
  for (Eigen::Index i = 0; i < dist.probs.size(); ++i) {
    if (dist.probs[i] <= 0.0) continue;
    cdf += dist.probs[i];
    last_positive = static_cast<int>(i);
    if (u < cdf) return last_positive;
  }
  // Rounding left the cumulative sum just below u.
  return last_positive;
}

int sample_token(const Policy& policy, const PolicyParams& params, const Context& ctx,
                 const Engine& engine, double temperature, RandomStream& stream) {
  return sample_from(distribution(policy, params, ctx, engine, temperature), stream);
}

}  // namespace icepop
