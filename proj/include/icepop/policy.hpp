#ifndef ICEPOP_POLICY_HPP_
#define ICEPOP_POLICY_HPP_

#include <array>
#include <cstdint>
#include <span>

#include "icepop/math.hpp"
#include "icepop/rng.hpp"

namespace icepop {

struct Vocabulary {
  int size = 32;
  int eos_id = 0;

  void validate() const;
  bool contains(int token) const { return token >= 0 && token < size; }
};

// Hashed n-gram features. Every context activates a bias feature, a prompt
// feature, and one prompt-conditioned k-gram feature per k in [1, window].
struct FeatureConfig {
  int buckets = 64;
  int window = 2;

  static constexpr int kMaxWindow = 4;
  void validate() const;
};

// Linear softmax weights, one row per feature bucket and one column per token.
struct PolicyParams {
  Matrix<double> weights;
  std::int64_t version_id = 0;
};

enum class EngineKind { Train, Infer };

// The inference engine adds a zero-mean, heavy-tailed perturbation to the
// logits. Its magnitude grows with the spread of the logits, and the draw is
// keyed by (mismatch_seed, context, version_id).
struct Engine {
  EngineKind kind = EngineKind::Train;
  double mismatch_scale = 0.0;
  std::uint64_t mismatch_seed = 0;

  static Engine train() { return {}; }
  static Engine infer(double scale, std::uint64_t seed) { return {EngineKind::Infer, scale, seed}; }
};

// A view of a generation context; only the last `window` tokens of history
// influence the policy.
struct Context {
  std::int64_t prompt_id = 0;
  std::span<const int> history;
};

struct ActiveFeatures {
  std::array<int, 2 + FeatureConfig::kMaxWindow> index{};
  int count = 0;

  auto begin() const { return index.begin(); }
  auto end() const { return index.begin() + count; }
};

struct TokenDistribution {
  Vector<double> probs;
};

class Policy {
 public:
  Policy() : Policy(Vocabulary{}, FeatureConfig{}) {}
  Policy(Vocabulary vocab, FeatureConfig features);

  const Vocabulary& vocab() const { return vocab_; }
  const FeatureConfig& feature_config() const { return features_; }
  int vocab_size() const { return vocab_.size; }

  ActiveFeatures features(const Context& ctx) const;
  // Identifies the policy-visible part of a context (prompt and window).
  std::uint64_t context_key(const Context& ctx) const;

  PolicyParams zero_params() const;
  // Gaussian weights with every row centred, so logits stay mean-zero.
  PolicyParams random_params(double scale, std::uint64_t seed) const;

  // Raw logits W^T phi(ctx), before temperature and before any perturbation.
  Vector<double> logits(const PolicyParams& params, const Context& ctx) const;

  // Heavy-tailed unit draws tau_v for the inference perturbation at this context.
  Vector<double> perturbation_draws(const Engine& engine, const PolicyParams& params,
                                    const Context& ctx) const;

  // Engine logits divided by temperature; these feed the softmax.
  Vector<double> engine_logits(const PolicyParams& params, const Context& ctx,
                               const Engine& engine, double temperature) const;

  // Scatter-add d/d(raw logits) into a weight-shaped gradient.
  void accumulate_grad(const Context& ctx, const Vector<double>& logit_grad,
                       Matrix<double>& grad) const;

 private:
  Vocabulary vocab_;
  FeatureConfig features_;
};

// n_v = scale * tau_v * (1 + var(l)), var taken over the vocabulary
Vector<double> perturb_logits(const Vector<double>& logits, const Vector<double>& draws,
                              double scale);

TokenDistribution distribution(const Policy& policy, const PolicyParams& params,
                               const Context& ctx, const Engine& engine, double temperature);

Vector<double> log_distribution(const Policy& policy, const PolicyParams& params,
                                const Context& ctx, const Engine& engine, double temperature);

double log_prob(const Policy& policy, const PolicyParams& params, const Context& ctx, int token,
                const Engine& engine, double temperature);

// Inverse-CDF draw from an explicit distribution; advances the stream once.
int sample_from(const TokenDistribution& dist, RandomStream& stream);

int sample_token(const Policy& policy, const PolicyParams& params, const Context& ctx,
                 const Engine& engine, double temperature, RandomStream& stream);

}  // namespace icepop

#endif  // ICEPOP_POLICY_HPP_
