#include "icepop/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "icepop/errors.hpp"

namespace icepop {

using nlohmann::json;

namespace {

// Walks one object, remembering which keys were read so leftovers can be
// reported as unknown.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError((path.empty() ? std::string("<root>") : path) + ": " + what);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  void real(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = find(key)) out = to_int<Int>(*v, at(key));
  }

  void text(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  // null selects "unlimited"
  void limit(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) out = v->is_null() ? kUnlimited : to_int<std::int64_t>(*v, at(key));
  }

  template <typename Int>
  void optional_int(const std::string& key, std::optional<Int>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else out = to_int<Int>(*v, at(key));
    }
  }

  Reader child(const std::string& key) {
    const json* v = find(key);
    static const json empty = json::object();
    return Reader(v ? *v : empty, at(key));
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
  }

  template <typename Int>
  static Int to_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
      const auto x = v.get<std::int64_t>();
      if (x < 0) fail(path, "expected a non-negative integer");
      return static_cast<Int>(x);
    } else {
      if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))
        fail(path, "integer out of range");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<Int>::min() || x > std::numeric_limits<Int>::max())
        fail(path, "integer out of range");
      return static_cast<Int>(x);
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

json limit_json(std::int64_t v) { return v == kUnlimited ? json(nullptr) : json(v); }

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string_view length_kind_name(LengthSpec::Kind k) {
  switch (k) {
    case LengthSpec::Kind::Constant: return "constant";
    case LengthSpec::Kind::LogNormal: return "lognormal";
    case LengthSpec::Kind::Cycle: return "cycle";
  }
  return "";
}

LengthSpec read_lengths(Reader r) {
  LengthSpec spec;
  std::string kind;
  r.text("kind", kind);
  if (kind == "constant") {
    spec.kind = LengthSpec::Kind::Constant;
    r.integer("value", spec.value);
  } else if (kind == "lognormal") {
    spec.kind = LengthSpec::Kind::LogNormal;
    r.real("median", spec.median);
    r.real("sigma", spec.sigma);
  } else if (kind == "cycle") {
    spec.kind = LengthSpec::Kind::Cycle;
    if (const json* v = r.find("cycle")) {
      if (!v->is_array()) Reader::fail(r.at("cycle"), "expected an array of integers");
      for (std::size_t i = 0; i < v->size(); ++i)
        spec.cycle.push_back(Reader::to_int<int>((*v)[i], r.at("cycle") + "[" + std::to_string(i) + "]"));
    }
  } else {
    Reader::fail(r.at("kind"), "expected one of constant, lognormal, cycle");
  }
  r.finish();
  return spec;
}

json write_lengths(const LengthSpec& spec) {
  json j{{"kind", length_kind_name(spec.kind)}};
  switch (spec.kind) {
    case LengthSpec::Kind::Constant: j["value"] = spec.value; break;
    case LengthSpec::Kind::LogNormal:
      j["median"] = spec.median;
      j["sigma"] = spec.sigma;
      break;
    case LengthSpec::Kind::Cycle: j["cycle"] = spec.cycle; break;
  }
  return j;
}

// Rewrites library validation failures as config errors.
template <typename F>
void check(const std::string& section, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    Reader::fail(section, e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion)
    Reader::fail("schema_version", "unsupported version " + std::to_string(schema_version));
  if (iterations < 0) Reader::fail("iterations", "must be >= 0");
  if (replicas < 1) Reader::fail("replicas", "must be >= 1");
  check("train", [&] { train_config(seed).validate(); });
  check("compounding", [&] { compounding_config(seed).validate(); });
  if (lengths) check("lengths", [&] { lengths->validate(); });
  if (sweep.size() < 2) Reader::fail("sweep.bounds", "needs at least two settings");
  for (std::size_t i = 0; i < sweep.size(); ++i)
    check("sweep.bounds[" + std::to_string(i) + "]", [&] { sweep[i].validate(); });
}

TrainConfig ExperimentConfig::train_config(std::uint64_t run_seed) const {
  TrainConfig t = train;
  t.seed = run_seed;
  t.iterations = iterations;
  return t;
}

CompoundingConfig ExperimentConfig::compounding_config(std::uint64_t run_seed) const {
  CompoundingConfig c = compounding;
  c.seed = run_seed;
  c.temperature = train.objective.temperature;
  c.mismatch_scale = train.mismatch_scale;
  c.mismatch_seed = train.mismatch_seed;
  c.probe_count = train.probe_count;
  return c;
}

ExperimentConfig config_from_json(const json& doc) {
  Reader root(doc, "");
  ExperimentConfig cfg;
  if (!root.has("schema_version")) Reader::fail("schema_version", "required key missing");
  root.integer("schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion)
    Reader::fail("schema_version", "unsupported version " + std::to_string(cfg.schema_version));
  root.integer("seed", cfg.seed);
  root.integer("iterations", cfg.iterations);
  root.integer("replicas", cfg.replicas);
  TrainConfig& t = cfg.train;

  {
    Reader r = root.child("policy");
    r.integer("vocab_size", t.vocab.size);
    r.integer("eos_id", t.vocab.eos_id);
    r.integer("feature_buckets", t.features.buckets);
    r.integer("window", t.features.window);
    r.real("init_scale", t.init_scale);
    r.finish();
  }
  {
    Reader r = root.child("mismatch");
    r.real("scale", t.mismatch_scale);
    r.integer("seed", t.mismatch_seed);
    r.finish();
  }
  {
    Reader r = root.child("objective");
    std::string algo(to_string(t.objective.algo));
    r.text("algo", algo);
    check(r.at("algo"), [&] { t.objective.algo = parse_algo(algo); });
    r.real("clip_eps", t.objective.clip_eps);
    r.real("kl_coeff", t.objective.kl_coeff);
    r.integer("group_size", t.objective.group_size);
    r.real("tis_cap", t.objective.tis_cap);
    r.real("temperature", t.objective.temperature);
    r.finish();
  }
  {
    Reader r = root.child("bounds");
    r.real("alpha", t.bounds.alpha);
    r.real("beta", t.bounds.beta);
    r.finish();
  }
  {
    Reader r = root.child("optimizer");
    std::string kind = t.optimizer == OptimizerKind::SGD ? "sgd" : "moment";
    r.text("kind", kind);
    if (kind == "sgd") t.optimizer = OptimizerKind::SGD;
    else if (kind == "moment") t.optimizer = OptimizerKind::Moment;
    else Reader::fail(r.at("kind"), "expected sgd or moment");
    r.real("lr", t.lr);
    r.finish();
  }
  {
    Reader r = root.child("scheduler");
    std::string mode = t.scheduler == SchedulerMode::C3PO ? "c3po" : "baseline";
    r.text("mode", mode);
    if (mode == "c3po") t.scheduler = SchedulerMode::C3PO;
    else if (mode == "baseline") t.scheduler = SchedulerMode::Baseline;
    else Reader::fail(r.at("mode"), "expected c3po or baseline");
    BudgetConfig& b = t.budget;
    r.limit("token_budget", b.token_budget);
    r.integer("infer_capacity", b.infer_capacity);
    r.limit("retention_threshold", b.retention_threshold);
    r.optional_int("train_capacity", b.train_capacity);
    r.integer("sync_cost_ticks", b.sync_cost_ticks);
    r.integer("tick_cap", b.tick_cap);
    r.optional_int("prompts_per_iteration", b.prompts_per_iteration);
    r.integer("batch_prompts", b.batch_prompts);
    r.finish();
  }
  {
    Reader r = root.child("tasks");
    r.integer("max_len", t.tasks.max_len);
    r.integer("copy_patterns", t.tasks.copy_patterns);
    r.integer("copy_prefix", t.tasks.copy_prefix);
    r.finish();
  }
  {
    Reader r = root.child("probes");
    r.integer("count", t.probe_count);
    r.finish();
  }
  if (const json* v = root.find("lengths"); v && !v->is_null()) cfg.lengths = read_lengths(Reader(*v, "lengths"));
  {
    Reader r = root.child("compounding");
    CompoundingConfig& c = cfg.compounding;
    std::string mode(to_string(c.mode));
    r.text("mode", mode);
    check(r.at("mode"), [&] { c.mode = parse_bias_mode(mode); });
    r.real("mu", c.mu);
    r.integer("steps", c.steps);
    r.real("align_target", c.align_target);
    r.real("advantage_scale", c.advantage_scale);
    r.real("init_scale", c.init_scale);
    r.finish();
  }
  {
    Reader r = root.child("sweep");
    if (const json* v = r.find("bounds")) {
      if (!v->is_array()) Reader::fail(r.at("bounds"), "expected an array of [alpha, beta] pairs");
      cfg.sweep.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& pair = (*v)[i];
        const std::string path = r.at("bounds") + "[" + std::to_string(i) + "]";
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
          Reader::fail(path, "expected [alpha, beta]");
        cfg.sweep.push_back({pair[0].get<double>(), pair[1].get<double>()});
      }
    }
    r.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const BudgetConfig& b = t.budget;
  const CompoundingConfig& c = cfg.compounding;
  json sweep = json::array();
  for (const MaskingBounds& m : cfg.sweep) sweep.push_back({m.alpha, m.beta});
  return json{
      {"schema_version", cfg.schema_version},
      {"seed", cfg.seed},
      {"iterations", cfg.iterations},
      {"replicas", cfg.replicas},
      {"policy",
       {{"vocab_size", t.vocab.size},
        {"eos_id", t.vocab.eos_id},
        {"feature_buckets", t.features.buckets},
        {"window", t.features.window},
        {"init_scale", t.init_scale}}},
      {"mismatch", {{"scale", t.mismatch_scale}, {"seed", t.mismatch_seed}}},
      {"objective",
       {{"algo", to_string(t.objective.algo)},
        {"clip_eps", t.objective.clip_eps},
        {"kl_coeff", t.objective.kl_coeff},
        {"group_size", t.objective.group_size},
        {"tis_cap", t.objective.tis_cap},
        {"temperature", t.objective.temperature}}},
      {"bounds", {{"alpha", t.bounds.alpha}, {"beta", t.bounds.beta}}},
      {"optimizer", {{"kind", t.optimizer == OptimizerKind::SGD ? "sgd" : "moment"}, {"lr", t.lr}}},
      {"scheduler",
       {{"mode", t.scheduler == SchedulerMode::C3PO ? "c3po" : "baseline"},
        {"token_budget", limit_json(b.token_budget)},
        {"infer_capacity", b.infer_capacity},
        {"retention_threshold", limit_json(b.retention_threshold)},
        {"train_capacity", optional_json(b.train_capacity)},
        {"sync_cost_ticks", b.sync_cost_ticks},
        {"tick_cap", b.tick_cap},
        {"prompts_per_iteration", optional_json(b.prompts_per_iteration)},
        {"batch_prompts", b.batch_prompts}}},
      {"tasks",
       {{"max_len", t.tasks.max_len},
        {"copy_patterns", t.tasks.copy_patterns},
        {"copy_prefix", t.tasks.copy_prefix}}},
      {"probes", {{"count", t.probe_count}}},
      {"lengths", cfg.lengths ? write_lengths(*cfg.lengths) : json(nullptr)},
      {"compounding",
       {{"mode", to_string(c.mode)},
        {"mu", c.mu},
        {"steps", c.steps},
        {"align_target", c.align_target},
        {"advantage_scale", c.advantage_scale},
        {"init_scale", c.init_scale}}},
      {"sweep", {{"bounds", sweep}}},
  };
}

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Convert the byte offset into a line and column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": malformed document");
  }
  return config_from_json(doc);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace icepop
