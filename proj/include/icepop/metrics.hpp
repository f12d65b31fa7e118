#ifndef ICEPOP_METRICS_HPP_
#define ICEPOP_METRICS_HPP_

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "icepop/config.hpp"
#include "icepop/train_loop.hpp"

namespace icepop {

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsRecord {
  std::int64_t iteration = 0;
  std::string algo;
  double reward_mean = 0.0;
  double grad_norm = 0.0;
  double delta = 0.0;
  double max_token_gap = 0.0;
  double clipped_fraction = 0.0;
  std::int64_t rollout_ticks = 0;
  std::int64_t trained_tokens = 0;
  double stale_token_fraction = 0.0;
  std::int64_t wall_ms = 0;  // simulated: one tick is one millisecond
};

// wall_ms is the running total of end-to-end ticks up to and including `step`.
MetricsRecord make_record(const TrainStep& step, Algo algo, std::int64_t wall_ms);
nlohmann::json record_to_json(const MetricsRecord& r);
MetricsRecord record_from_json(const nlohmann::json& j);

// First line of every metrics file: enough to regenerate the file.
nlohmann::json metrics_header(const ExperimentConfig& cfg, std::uint64_t seed);

// Line-delimited writer; every line is flushed so a crash leaves a valid prefix.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const nlohmann::json& header);
  void write(const MetricsRecord& r);

 private:
  std::ofstream out_;
};

struct MetricsFile {
  nlohmann::json header;
  std::vector<MetricsRecord> records;
};

MetricsFile read_metrics(const std::string& path);

nlohmann::json train_summary(const std::vector<MetricsRecord>& records, const std::string& status);

}  // namespace icepop

#endif  // ICEPOP_METRICS_HPP_
