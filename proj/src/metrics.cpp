#include "icepop/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace icepop {

using nlohmann::json;

MetricsRecord make_record(const TrainStep& step, Algo algo, std::int64_t wall_ms) {
  MetricsRecord r;
  r.iteration = step.sample.step;
  r.algo = std::string(to_string(algo));
  r.reward_mean = step.loss.reward_mean;
  r.grad_norm = step.sample.grad_norm;
  r.delta = step.sample.delta;
  r.max_token_gap = step.sample.max_token_gap;
  r.clipped_fraction = step.sample.clipped_fraction;
  r.rollout_ticks = step.report.rollout_ticks;
  r.trained_tokens = step.report.trained_tokens;
  r.stale_token_fraction = step.report.stale_token_fraction;
  r.wall_ms = wall_ms;
  return r;
}

json record_to_json(const MetricsRecord& r) {
  return json{{"schema_version", kMetricsSchemaVersion},
              {"iteration", r.iteration},
              {"algo", r.algo},
              {"reward_mean", r.reward_mean},
              {"grad_norm", r.grad_norm},
              {"delta", r.delta},
              {"max_token_gap", r.max_token_gap},
              {"clipped_fraction", r.clipped_fraction},
              {"rollout_ticks", r.rollout_ticks},
              {"trained_tokens", r.trained_tokens},
              {"stale_token_fraction", r.stale_token_fraction},
              {"wall_ms", r.wall_ms}};
}

MetricsRecord record_from_json(const json& j) {
  MetricsRecord r;
  r.iteration = j.at("iteration").get<std::int64_t>();
  r.algo = j.at("algo").get<std::string>();
  r.reward_mean = j.at("reward_mean").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.delta = j.at("delta").get<double>();
  r.max_token_gap = j.at("max_token_gap").get<double>();
  r.clipped_fraction = j.at("clipped_fraction").get<double>();
  r.rollout_ticks = j.at("rollout_ticks").get<std::int64_t>();
  r.trained_tokens = j.at("trained_tokens").get<std::int64_t>();
  r.stale_token_fraction = j.at("stale_token_fraction").get<double>();
  r.wall_ms = j.at("wall_ms").get<std::int64_t>();
  return r;
}

json metrics_header(const ExperimentConfig& cfg, std::uint64_t seed) {
  return json{{"schema_version", kMetricsSchemaVersion},
              {"header", {{"config", config_to_json(cfg)}, {"seed", seed}}}};
}

MetricsWriter::MetricsWriter(const std::string& path, const json& header) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open metrics file " + path);
  out_ << header.dump() << '\n' << std::flush;
}

void MetricsWriter::write(const MetricsRecord& r) {
  out_ << record_to_json(r).dump() << '\n' << std::flush;
}

MetricsFile read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  MetricsFile file;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty metrics file");
  file.header = json::parse(line);
  while (std::getline(in, line))
    if (!line.empty()) file.records.push_back(record_from_json(json::parse(line)));
  return file;
}

json train_summary(const std::vector<MetricsRecord>& records, const std::string& status) {
  json s{{"schema_version", kMetricsSchemaVersion}, {"status", status}, {"iterations", records.size()}};
  if (records.empty()) return s;
  const MetricsRecord& first = records.front();
  const MetricsRecord& last = records.back();
  double max_delta = 0.0, max_grad = 0.0, clipped = 0.0, reward = 0.0;
  std::int64_t ticks = 0, tokens = 0;
  for (const MetricsRecord& r : records) {
    max_delta = std::max(max_delta, r.delta);
    max_grad = std::max(max_grad, r.grad_norm);
    clipped += r.clipped_fraction;
    reward += r.reward_mean;
    ticks += r.rollout_ticks;
    tokens += r.trained_tokens;
  }
  const auto n = static_cast<double>(records.size());
  s["algo"] = last.algo;
  s["initial_delta"] = first.delta;
  s["final_delta"] = last.delta;
  s["max_delta"] = max_delta;
  s["max_grad_norm"] = max_grad;
  s["mean_clipped_fraction"] = clipped / n;
  s["mean_reward"] = reward / n;
  s["final_reward_mean"] = last.reward_mean;
  s["rollout_ticks"] = ticks;
  s["trained_tokens"] = tokens;
  s["wall_ms"] = last.wall_ms;
  return s;
}

}  // namespace icepop
