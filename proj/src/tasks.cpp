#include "icepop/tasks.hpp"

#include <algorithm>
#include <stdexcept>

namespace icepop {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::ParityMatch: return "parity_match";
    case TaskKind::TargetSum: return "target_sum";
    case TaskKind::CopyPrefix: return "copy_prefix";
  }
  return "unknown";
}

void TaskSpace::validate() const {
  vocab.validate();
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  if (copy_patterns < 1) throw std::invalid_argument("copy_patterns must be at least 1");
  if (copy_prefix < 1) throw std::invalid_argument("copy_prefix must be at least 1");
}

std::int64_t TaskSpace::target_count(TaskKind kind) const {
  switch (kind) {
    case TaskKind::ParityMatch: return 2;
    case TaskKind::TargetSum: return vocab.size;
    case TaskKind::CopyPrefix: return copy_patterns;
  }
  return 1;
}

int TaskSpace::prefix_length() const { return std::min(copy_prefix, max_len); }

int TaskSpace::pattern_token(std::int64_t pattern, int j) const {
  const auto h = hash_key({0xc09f, static_cast<std::uint64_t>(pattern),
                           static_cast<std::uint64_t>(j)});
  const int idx = static_cast<int>(h % static_cast<std::uint64_t>(vocab.size - 1));
  return idx >= vocab.eos_id ? idx + 1 : idx;
}

std::int64_t make_prompt_id(TaskKind kind, std::int64_t target) {
  return static_cast<std::int64_t>(kind) * 4096 + target;
}

TaskSpec make_task(const TaskSpace& space, TaskKind kind, std::int64_t target) {
  if (target < 0 || target >= space.target_count(kind))
    throw std::invalid_argument("task target outside its range");
  return {kind, make_prompt_id(kind, target), target, space.max_len};
}

TaskSpec sample_prompt(const TaskSpace& space, RandomStream& stream) {
  const auto kind = static_cast<TaskKind>(stream.uniform_index(3));
  const auto target =
      static_cast<std::int64_t>(stream.uniform_index(static_cast<std::uint64_t>(space.target_count(kind))));
  return make_task(space, kind, target);
}

Reward verify(const TaskSpace& space, const TaskSpec& task, std::span<const int> completion) {
  const int eos = space.vocab.eos_id;
  for (int t : completion)
    if (!space.vocab.contains(t)) throw std::invalid_argument("completion token outside vocabulary");

  bool ok = false;
  switch (task.kind) {
    case TaskKind::ParityMatch: {
      const auto n = std::count_if(completion.begin(), completion.end(), [eos](int t) { return t != eos; });
      ok = n % 2 == task.target;
      break;
    }
    case TaskKind::TargetSum: {
      std::int64_t sum = 0;
      for (int t : completion)
        if (t != eos) sum += t;
      ok = sum % space.vocab.size == task.target;
      break;
    }
    case TaskKind::CopyPrefix: {
      const int k = std::min(space.copy_prefix, task.max_len);
      ok = static_cast<int>(completion.size()) >= k;
      for (int j = 0; ok && j < k; ++j) ok = completion[static_cast<std::size_t>(j)] == space.pattern_token(task.target, j);
      break;
    }
  }
  return {ok ? 1.0 : 0.0};
}

}  // namespace icepop
