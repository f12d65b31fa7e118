#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "icepop/config.hpp"
#include "icepop/discrepancy.hpp"
#include "icepop/errors.hpp"
#include "icepop/metrics.hpp"
#include "icepop/scheduler.hpp"
#include "icepop/train_loop.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icepop;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kTickCap = 4 };

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algo;
  std::optional<int> iterations;
  int jobs = 1;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "overrides the config seed");
  cmd->add_option("--iterations", o.iterations, "overrides the config iteration count");
  cmd->add_option("--jobs", o.jobs, "replicas run concurrently")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.iterations) cfg.iterations = *o.iterations;
  if (o.algo) {
    try {
      cfg.train.objective.algo = parse_algo(*o.algo);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--algo: ") + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// Runs fn(replica) for every replica, at most `jobs` at a time. The first
// failure (in replica order) is rethrown after all workers finish.
template <typename F>
void fan_out(int replicas, int jobs, F&& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(replicas));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < replicas; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::min(jobs, replicas); ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

fs::path metrics_path(const fs::path& dir, const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.replicas == 1 ? dir / "metrics.jsonl" : dir / ("metrics_seed" + std::to_string(seed) + ".jsonl");
}

// One training run; metrics rows are flushed as they are produced.
json train_one(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& path) {
  MetricsWriter writer(path.string(), metrics_header(cfg, seed));
  std::vector<MetricsRecord> rows;
  std::int64_t wall = 0;
  const Algo algo = cfg.train.objective.algo;
  try {
    train_loop(cfg.train_config(seed), [&](const TrainStep& step) {
      wall += step.report.end_to_end_ticks;
      rows.push_back(make_record(step, algo, wall));
      writer.write(rows.back());
    });
  } catch (const NumericError&) {
    json s = train_summary(rows, "numeric_failure");
    s["seed"] = seed;
    s["metrics"] = path.filename().string();
    write_json(path.parent_path() / (path.stem().string() + ".summary.json"), s);
    throw;
  }
  json s = train_summary(rows, "ok");
  s["seed"] = seed;
  s["metrics"] = path.filename().string();
  return s;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  fs::create_directories(o.out);
  std::vector<json> runs(static_cast<std::size_t>(cfg.replicas));
  fan_out(cfg.replicas, o.jobs, [&](int i) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
    runs[static_cast<std::size_t>(i)] = train_one(cfg, seed, metrics_path(o.out, cfg, seed));
  });
  write_json(fs::path(o.out) / "summary.json",
             json{{"schema_version", kMetricsSchemaVersion}, {"command", "train"}, {"runs", runs}});
  for (const json& r : runs)
    std::printf("seed %llu: final delta %.6g, final reward %.4g\n",
                static_cast<unsigned long long>(r["seed"].get<std::uint64_t>()),
                r["final_delta"].get<double>(), r["final_reward_mean"].get<double>());
  return kOk;
}

// Regenerates a metrics file from its own header and reports whether the
// result is byte-identical.
int cmd_replay(const std::string& metrics, const std::string& out) {
  std::ifstream in(metrics);
  if (!in) throw ConfigError(metrics + ": cannot open metrics file");
  std::string first;
  std::getline(in, first);
  json header;
  try {
    header = json::parse(first).at("header");
  } catch (const json::exception& e) {
    throw ConfigError(metrics + ": line 1: missing or malformed header");
  }
  ExperimentConfig cfg = config_from_json(header.at("config"));
  const auto seed = header.at("seed").get<std::uint64_t>();
  fs::create_directories(out);
  const fs::path path = fs::path(out) / "replay.jsonl";
  train_one(cfg, seed, path);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  const bool same = slurp(metrics) == slurp(path);
  std::printf("%s\n", same ? "identical" : "differs");
  return same ? kOk : 1;
}

int cmd_schedule(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  if (!cfg.lengths) throw ConfigError("lengths: required for the schedule command");
  fs::create_directories(o.out);
  std::vector<ScheduleComparison> res(static_cast<std::size_t>(cfg.replicas));
  const TrainConfig t = cfg.train_config(cfg.seed);
  if (cfg.iterations < 1) throw ConfigError("iterations: schedule needs at least one iteration");
  fan_out(cfg.replicas, o.jobs, [&](int i) {
    res[static_cast<std::size_t>(i)] = compare_schedules(t.task_space(), *cfg.lengths, t.budget,
                                                         t.objective.group_size, cfg.iterations,
                                                         cfg.seed + static_cast<std::uint64_t>(i));
  });
  auto totals = [](const ScheduleTotals& s) {
    return json{{"rollout_ticks", s.rollout_ticks},       {"end_to_end_ticks", s.end_to_end_ticks},
                {"trained_tokens", s.trained_tokens},     {"trained_rollouts", s.trained_rollouts},
                {"purged_rollouts", s.purged_rollouts}};
  };
  json runs = json::array();
  double rollout = 0.0, e2e = 0.0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    runs.push_back({{"seed", cfg.seed + i},
                    {"c3po", totals(res[i].budgeted)},
                    {"baseline", totals(res[i].baseline)},
                    {"speedup_rollout", res[i].speedup_rollout},
                    {"speedup_end_to_end", res[i].speedup_end_to_end}});
    rollout += res[i].speedup_rollout;
    e2e += res[i].speedup_end_to_end;
  }
  const double n = static_cast<double>(res.size());
  write_json(fs::path(o.out) / "schedule.json",
             json{{"schema_version", kMetricsSchemaVersion},
                  {"command", "schedule"},
                  {"expected_length", cfg.lengths->expected_length(t.tasks.max_len)},
                  {"runs", runs},
                  {"speedup_rollout", rollout / n},
                  {"speedup_end_to_end", e2e / n}});
  std::printf("speedup_rollout %.4f\nspeedup_end_to_end %.4f\n", rollout / n, e2e / n);
  return kOk;
}

json fit_json(const DiscrepancyFit& f) {
  return json{{"eta_hat", f.eta_hat},
              {"kappa_hat", f.kappa_hat},
              {"delta_c", f.delta_c},
              {"growth_holds", f.growth_holds},
              {"step_size", f.step_size},
              {"grad_bound", f.grad_bound},
              {"drift_bound", f.drift_bound},
              {"smoothness", f.smoothness},
              {"align_const", f.align_const},
              {"vacuous", f.vacuous},
              {"one_step_bound_holds", f.one_step_bound_holds},
              {"post_threshold_steps", f.post_threshold_steps},
              {"strict_growth_fraction", f.strict_growth_fraction},
              {"growth_rate", f.growth_rate}};
}

int cmd_compounding(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  fs::create_directories(o.out);
  const CompoundingResult r = compounding_experiment(cfg.train_config(cfg.seed), cfg.compounding_config(cfg.seed));
  {
    std::ofstream trace(fs::path(o.out) / "compounding_trace.jsonl");
    for (const DiscrepancySample& s : r.trace)
      trace << json{{"step", s.step}, {"delta", s.delta}, {"max_token_gap", s.max_token_gap},
                    {"grad_norm", s.grad_norm}}
                   .dump()
            << '\n';
  }
  write_json(fs::path(o.out) / "compounding_fit.json",
             json{{"schema_version", kMetricsSchemaVersion},
                  {"command", "compounding"},
                  {"mode", to_string(cfg.compounding.mode)},
                  {"seed", cfg.seed},
                  {"fit", fit_json(r.fit)}});
  std::printf("growth_holds %s\nvacuous %s\ndelta_c %.6g\n", r.fit.growth_holds ? "true" : "false",
              r.fit.vacuous ? "true" : "false", r.fit.delta_c);
  return kOk;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  fs::create_directories(o.out);
  const std::vector<SweepRow> rows = sensitivity_sweep(cfg.train_config(cfg.seed), cfg.sweep);
  json table = json::array();
  for (const SweepRow& r : rows)
    table.push_back({{"alpha", r.bounds.alpha},
                     {"beta", r.bounds.beta},
                     {"delta", r.delta},
                     {"grad_norm", r.grad_norm},
                     {"clipped_fraction", r.clipped_fraction},
                     {"reward_mean", r.reward_mean},
                     {"max_token_gap", r.max_token_gap},
                     {"final_reward_mean", r.final_reward_mean}});
  write_json(fs::path(o.out) / "sweep.json",
             json{{"schema_version", kMetricsSchemaVersion}, {"command", "sweep"}, {"seed", cfg.seed}, {"rows", table}});
  for (const SweepRow& r : rows)
    std::printf("[%g, %g] final reward %.4g\n", r.bounds.alpha, r.bounds.beta, r.final_reward_mean);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IcePop / C3PO++ experiment harness"};
  app.require_subcommand(1);
  Options train_o, sched_o, comp_o, sweep_o;
  std::string replay_in, replay_out = "replay";

  CLI::App* train = app.add_subcommand("train", "RL training run; writes line-delimited metrics");
  add_common(train, train_o);
  train->add_option("--algo", train_o.algo, "icepop, grpo or tis");
  CLI::App* schedule = app.add_subcommand("schedule", "budgeted vs synchronous rollout throughput");
  add_common(schedule, sched_o);
  CLI::App* compounding = app.add_subcommand("compounding", "discrepancy compounding experiment");
  add_common(compounding, comp_o);
  compounding->add_option("--algo", comp_o.algo, "algorithm for rl_loop mode");
  CLI::App* sweep = app.add_subcommand("sweep", "masking-range sensitivity sweep");
  add_common(sweep, sweep_o);
  CLI::App* replay = app.add_subcommand("replay", "regenerate a metrics file from its header");
  replay->add_option("metrics", replay_in, "metrics file")->required();
  replay->add_option("--out", replay_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*schedule) return cmd_schedule(sched_o);
    if (*compounding) return cmd_compounding(comp_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*replay) return cmd_replay(replay_in, replay_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const TickCapExceeded& e) {
    std::cerr << "tick cap exceeded: " << e.what() << '\n';
    return kTickCap;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
