#ifndef ICEPOP_CONFIG_HPP_
#define ICEPOP_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "icepop/discrepancy.hpp"
#include "icepop/scheduler.hpp"
#include "icepop/train_loop.hpp"

namespace icepop {

inline constexpr int kSchemaVersion = 1;

// One document drives every command. Seeds, iteration counts and the
// mismatch engine are shared; each command reads the sections it needs.
struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  int iterations = 200;
  int replicas = 1;  // runs use seeds seed, seed+1, ...

  TrainConfig train;                 // seed and iterations are taken from above
  std::optional<LengthSpec> lengths; // schedule command only
  CompoundingConfig compounding;     // mismatch, temperature and probes come from `train`
  std::vector<MaskingBounds> sweep = {{0.5, 5.0}, {0.5, 2.0}, {0.4, 5.0}};

  void validate() const;
  TrainConfig train_config(std::uint64_t run_seed) const;
  CompoundingConfig compounding_config(std::uint64_t run_seed) const;
};

// Throws ConfigError naming the offending field path.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Parse errors report line and column.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace icepop

#endif  // ICEPOP_CONFIG_HPP_
