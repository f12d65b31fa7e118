#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <vector>

#include "json.hpp"

#include "icepop/tasks.hpp"

using namespace icepop;

#ifndef ICEPOP_FIXTURES
#define ICEPOP_FIXTURES "fixtures"
#endif

namespace {

// Straight-line predicates, written without the library helpers.
bool parity_ok(const std::vector<int>& c, int eos, std::int64_t target) {
  int n = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i] != eos) n = n + 1;
  return (n % 2) == target;
}

bool sum_ok(const std::vector<int>& c, int eos, int vocab, std::int64_t target) {
  long long s = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i] != eos) s = s + c[i];
  return (s % vocab) == target;
}

bool prefix_ok(const std::vector<int>& c, const std::vector<int>& pattern) {
  if (c.size() < pattern.size()) return false;
  for (std::size_t i = 0; i < pattern.size(); ++i)
    if (c[i] != pattern[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("verify agrees with an independent predicate oracle") {
  TaskSpace space;
  space.max_len = 12;
  RandomStream s(77);
  int satisfied = 0;
  for (int i = 0; i < 500; ++i) {
    const TaskSpec task = sample_prompt(space, s);
    std::vector<int> c;
    const auto len = s.uniform_index(static_cast<std::uint64_t>(space.max_len) + 1);
    for (std::uint64_t k = 0; k < len; ++k) c.push_back(static_cast<int>(s.uniform_index(space.vocab.size)));
    // Bias half of the copy tasks toward the pattern so both outcomes occur.
    std::vector<int> pattern;
    for (int j = 0; j < std::min(space.copy_prefix, task.max_len); ++j) pattern.push_back(space.pattern_token(task.target, j));
    if (task.kind == TaskKind::CopyPrefix && i % 2 == 0)
      for (std::size_t j = 0; j < pattern.size() && j < c.size(); ++j) c[j] = pattern[j];

    bool expected = false;
    switch (task.kind) {
      case TaskKind::ParityMatch: expected = parity_ok(c, space.vocab.eos_id, task.target); break;
      case TaskKind::TargetSum: expected = sum_ok(c, space.vocab.eos_id, space.vocab.size, task.target); break;
      case TaskKind::CopyPrefix: expected = prefix_ok(c, pattern); break;
    }
    const double r = verify(space, task, c).value;
    CHECK(r == (expected ? 1.0 : 0.0));
    satisfied += expected;
  }
  CHECK(satisfied > 50);
  CHECK(satisfied < 450);
}

TEST_CASE("verify definition examples") {
  const TaskSpace space;
  const TaskSpec even = make_task(space, TaskKind::ParityMatch, 0);
  CHECK(verify(space, even, std::vector<int>{5, 9}).value == 1.0);
  CHECK(verify(space, even, std::vector<int>{5, 9, 2}).value == 0.0);
  CHECK(verify(space, even, std::vector<int>{5, 0}).value == 0.0);
  const TaskSpec sum3 = make_task(space, TaskKind::TargetSum, 3);
  CHECK(verify(space, sum3, std::vector<int>{}).value == 0.0);
  CHECK(verify(space, sum3, std::vector<int>{1, 2, 0}).value == 1.0);
  CHECK(verify(space, make_task(space, TaskKind::TargetSum, 0), std::vector<int>{}).value == 1.0);
  CHECK_THROWS_AS(verify(space, even, std::vector<int>{space.vocab.size}), std::invalid_argument);
}

TEST_CASE("every task kind is solvable and non-trivial") {
  TaskSpace space;
  space.max_len = 4;
  for (TaskKind kind : {TaskKind::ParityMatch, TaskKind::TargetSum, TaskKind::CopyPrefix}) {
    for (std::int64_t target = 0; target < space.target_count(kind); ++target) {
      const TaskSpec task = make_task(space, kind, target);
      bool any_pass = false, any_fail = false;
      RandomStream s(static_cast<std::uint64_t>(target) + 1);
      std::vector<int> pattern;
      for (int j = 0; j < space.prefix_length(); ++j) pattern.push_back(space.pattern_token(target, j));
      for (int trial = 0; trial < 4000 && !(any_pass && any_fail); ++trial) {
        std::vector<int> c;
        for (int k = 0; k < space.max_len; ++k) c.push_back(static_cast<int>(s.uniform_index(space.vocab.size)));
        if (trial % 3 == 0) std::copy(pattern.begin(), pattern.end(), c.begin());
        (verify(space, task, c).value == 1.0 ? any_pass : any_fail) = true;
      }
      CHECK(any_pass);
      CHECK(any_fail);
    }
  }
}

TEST_CASE("copy patterns never contain EOS") {
  TaskSpace space;
  space.vocab.eos_id = 5;
  for (std::int64_t p = 0; p < 50; ++p)
    for (int j = 0; j < 6; ++j) {
      const int t = space.pattern_token(p, j);
      CHECK(t != 5);
      CHECK(space.vocab.contains(t));
    }
}

TEST_CASE("prompt kinds are uniform within three standard deviations") {
  const TaskSpace space;
  RandomStream s(5);
  const int n = 10000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_prompt(space, s).kind)];
  const double sd = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
  for (int c : counts) CHECK(std::abs(c - n / 3.0) <= 3.0 * sd);
}

TEST_CASE("seeded prompt sequence matches the recorded fixture") {
  std::ifstream in(std::string(ICEPOP_FIXTURES) + "/prompt_sequence.json");
  REQUIRE(in.good());
  const nlohmann::json doc = nlohmann::json::parse(in);
  const TaskSpace space;
  RandomStream s(doc.at("seed").get<std::uint64_t>());
  for (const auto& row : doc.at("prompts")) {
    const TaskSpec t = sample_prompt(space, s);
    CHECK(std::string(to_string(t.kind)) == row.at("kind").get<std::string>());
    CHECK(t.target == row.at("target").get<std::int64_t>());
    CHECK(t.prompt_id == row.at("prompt_id").get<std::int64_t>());
  }
}

TEST_CASE("prompt ids identify (kind, target)") {
  const TaskSpace space;
  std::vector<std::int64_t> ids;
  for (TaskKind kind : {TaskKind::ParityMatch, TaskKind::TargetSum, TaskKind::CopyPrefix})
    for (std::int64_t t = 0; t < space.target_count(kind); ++t) ids.push_back(make_task(space, kind, t).prompt_id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  CHECK_THROWS_AS(make_task(space, TaskKind::ParityMatch, 2), std::invalid_argument);
}
