#ifndef ICEPOP_TASKS_HPP_
#define ICEPOP_TASKS_HPP_

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "icepop/policy.hpp"
#include "icepop/rng.hpp"

namespace icepop {

enum class TaskKind { ParityMatch, TargetSum, CopyPrefix };

std::string_view to_string(TaskKind kind);

// A prompt. prompt_id is a pure function of (kind, target), so repeated
// prompts share policy features.
struct TaskSpec {
  TaskKind kind = TaskKind::ParityMatch;
  std::int64_t prompt_id = 0;
  std::int64_t target = 0;
  int max_len = 1;

  bool operator==(const TaskSpec&) const = default;
};

struct Reward {
  double value = 0.0;
};

// Parameter ranges for the synthetic task family.
struct TaskSpace {
  Vocabulary vocab;
  int max_len = 64;
  int copy_patterns = 8;
  int copy_prefix = 3;

  void validate() const;
  // Number of admissible targets for a kind; always at least one.
  std::int64_t target_count(TaskKind kind) const;
  // Length of the prescribed prefix actually checked for CopyPrefix.
  int prefix_length() const;
  // The j-th token of CopyPrefix pattern p; never the EOS token.
  int pattern_token(std::int64_t pattern, int j) const;
};

std::int64_t make_prompt_id(TaskKind kind, std::int64_t target);

TaskSpec make_task(const TaskSpace& space, TaskKind kind, std::int64_t target);

// Uniform over kinds, then uniform over the kind's targets.
TaskSpec sample_prompt(const TaskSpace& space, RandomStream& stream);

Reward verify(const TaskSpace& space, const TaskSpec& task, std::span<const int> completion);

}  // namespace icepop

#endif  // ICEPOP_TASKS_HPP_
