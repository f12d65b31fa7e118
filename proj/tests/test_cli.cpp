#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef ICEPOP_CLI
#define ICEPOP_CLI "icepop"
#endif
#ifndef ICEPOP_FIXTURES
#define ICEPOP_FIXTURES "fixtures"
#endif

namespace {

struct Run {
  int code;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("icepop_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

Run cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string(ICEPOP_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string fixture(const std::string& name) { return std::string(ICEPOP_FIXTURES) + "/" + name; }

fs::path edited(const std::string& name, const fs::path& dir, void (*edit)(json&)) {
  json doc = json::parse(slurp(fixture(name)));
  edit(doc);
  const fs::path p = dir / ("edited_" + name);
  std::ofstream(p) << doc.dump(2);
  return p;
}

std::vector<json> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  for (std::string l; std::getline(in, l);) out.push_back(json::parse(l));
  return out;
}

}  // namespace

TEST_CASE("train writes a header and one row per iteration, reproducibly") {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  const std::string args = "train --config " + fixture("icepop_default.json") + " --iterations 5 --out ";
  REQUIRE(cli(args + a.string(), a).code == 0);
  REQUIRE(cli(args + b.string(), b).code == 0);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));

  const std::vector<json> rows = lines(a / "metrics.jsonl");
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].contains("header"));
  CHECK(rows[0]["header"]["config"]["iterations"] == 5);
  const std::set<std::string> want{"schema_version", "iteration",    "algo",          "reward_mean",
                                   "grad_norm",      "delta",        "max_token_gap", "clipped_fraction",
                                   "rollout_ticks",  "trained_tokens", "stale_token_fraction", "wall_ms"};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::set<std::string> keys;
    for (const auto& [k, v] : rows[i].items()) keys.insert(k);
    CHECK(keys == want);
    CHECK(rows[i]["iteration"] == static_cast<int>(i - 1));
    CHECK(rows[i]["algo"] == "icepop");
    CHECK(rows[i]["delta"].get<double>() >= 0.0);
  }
  CHECK(rows[5]["wall_ms"].get<double>() > rows[1]["wall_ms"].get<double>());
  CHECK(json::parse(slurp(a / "summary.json"))["runs"][0]["status"] == "ok");
}

TEST_CASE("replay regenerates an identical metrics file") {
  const fs::path d = scratch("replay");
  REQUIRE(cli("train --config " + fixture("icepop_default.json") + " --iterations 4 --seed 3 --out " + d.string(), d)
              .code == 0);
  const Run r = cli("replay " + (d / "metrics.jsonl").string() + " --out " + (d / "again").string(), d);
  CHECK(r.code == 0);
  CHECK(r.out.find("identical") != std::string::npos);
  CHECK(slurp(d / "metrics.jsonl") == slurp(d / "again" / "replay.jsonl"));
}

TEST_CASE("configuration errors exit with code 2") {
  const fs::path d = scratch("bad");
  const fs::path bad = edited("icepop_default.json", d, [](json& j) { j["bounds"]["alpha"] = 9.0; });
  CHECK(cli("train --config " + bad.string() + " --out " + d.string(), d).code == 2);
  const fs::path unknown = edited("icepop_default.json", d, [](json& j) { j["objectiv"] = json::object(); });
  const Run r = cli("train --config " + unknown.string() + " --out " + d.string(), d);
  CHECK(r.code == 2);
  CHECK(r.out.find("objectiv") != std::string::npos);
  CHECK(cli("train --config /nonexistent.json --out " + d.string(), d).code == 2);
  CHECK(cli("train --out " + d.string(), d).code == 2);
  CHECK(cli("schedule --config " + fixture("icepop_default.json") + " --out " + d.string(), d).code == 2);
}

TEST_CASE("numeric failure exits with code 3 and keeps partial rows") {
  const fs::path d = scratch("numeric");
  const fs::path cfg = edited("icepop_default.json", d, [](json& j) { j["optimizer"]["lr"] = 1e300; });
  CHECK(cli("train --config " + cfg.string() + " --iterations 20 --out " + d.string(), d).code == 3);
  const std::vector<json> rows = lines(d / "metrics.jsonl");
  CHECK(rows.size() >= 2);
  CHECK(rows.size() < 21);
  CHECK(json::parse(slurp(d / "metrics.summary.json"))["status"] == "numeric_failure");
}

TEST_CASE("tick cap exits with code 4") {
  const fs::path d = scratch("tickcap");
  const fs::path cfg = edited("icepop_default.json", d, [](json& j) { j["scheduler"]["tick_cap"] = 1; });
  CHECK(cli("train --config " + cfg.string() + " --iterations 2 --out " + d.string(), d).code == 4);
}

TEST_CASE("schedule on uniform lengths reports no speedup") {
  const fs::path d = scratch("schedule");
  const Run r = cli("schedule --config " + fixture("schedule_uniform.json") + " --iterations 10 --out " + d.string(), d);
  REQUIRE(r.code == 0);
  const json doc = json::parse(slurp(d / "schedule.json"));
  CHECK(doc["runs"].size() == 5);
  CHECK(doc["speedup_rollout"].get<double>() >= 0.95);
  CHECK(doc["speedup_rollout"].get<double>() <= 1.05);
  CHECK(r.out.find("speedup_rollout") != std::string::npos);
}

TEST_CASE("compounding reports growth, and vacuity without mismatch") {
  const fs::path d = scratch("compounding");
  const Run r = cli("compounding --config " + fixture("compounding_default.json") + " --out " + d.string(), d);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("growth_holds true") != std::string::npos);
  CHECK(json::parse(slurp(d / "compounding_fit.json"))["fit"]["growth_holds"] == true);
  CHECK(lines(d / "compounding_trace.jsonl").size() == 101);

  const fs::path cfg = edited("compounding_default.json", d, [](json& j) {
    j["mismatch"]["scale"] = 0.0;
    j["compounding"]["steps"] = 5;
  });
  const Run z = cli("compounding --config " + cfg.string() + " --out " + (d / "zero").string(), d);
  REQUIRE(z.code == 0);
  CHECK(z.out.find("vacuous true") != std::string::npos);
}

TEST_CASE("sweep writes one row per bounds setting") {
  const fs::path d = scratch("sweep");
  REQUIRE(cli("sweep --config " + fixture("sweep_default.json") + " --iterations 3 --out " + d.string(), d).code == 0);
  const json doc = json::parse(slurp(d / "sweep.json"));
  REQUIRE(doc["rows"].size() == 3);
  CHECK(doc["rows"][1]["alpha"] == 0.5);
  CHECK(doc["rows"][1]["beta"] == 2.0);
  CHECK(doc["rows"][0]["delta"].size() == 3);
}

TEST_CASE("unmasked training ends with larger discrepancy than IcePop at seed 1") {
  const fs::path d = scratch("algos");
  const std::string base = "train --config " + fixture("icepop_default.json") + " --seed 1 --out ";
  REQUIRE(cli(base + (d / "grpo").string() + " --algo grpo", d).code == 0);
  REQUIRE(cli(base + (d / "icepop").string() + " --algo icepop", d).code == 0);
  const double g = json::parse(slurp(d / "grpo" / "summary.json"))["runs"][0]["final_delta"];
  const double i = json::parse(slurp(d / "icepop" / "summary.json"))["runs"][0]["final_delta"];
  CAPTURE(g);
  CAPTURE(i);
  CHECK(g > i);
}
