#ifndef ICEPOP_ROLLOUT_HPP_
#define ICEPOP_ROLLOUT_HPP_

#include <cstdint>
#include <vector>

#include "icepop/rng.hpp"
#include "icepop/tasks.hpp"

namespace icepop {

// One generated token and the log-probabilities the objective needs.
// logp_train_cur is a diagnostic cache; the objective recomputes it from theta.
struct TokenRecord {
  int token = 0;
  double logp_infer_old = 0.0;
  double logp_train_old = 0.0;
  double logp_train_cur = 0.0;
  std::int64_t gen_version = 0;
};

struct Rollout {
  std::uint64_t id = 0;
  std::uint64_t group_id = 0;
  int sibling = 0;
  TaskSpec task;
  std::vector<TokenRecord> tokens;
  bool terminal = false;
  int retention_period = 0;
  // Length a scripted generator will stop at; 0 when the policy decides.
  int target_length = 0;
  RandomStream stream;

  int length() const { return static_cast<int>(tokens.size()); }
  std::vector<int> token_ids() const;
};

struct PromptGroup {
  TaskSpec task;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

}  // namespace icepop

#endif  // ICEPOP_ROLLOUT_HPP_
