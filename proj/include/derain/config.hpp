#pragma once

// JSON run configuration shared by every CLI subcommand. Parsing is strict:
// unknown keys, wrong types and out-of-range values are all rejected before
// any work starts.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "derain/io.hpp"
#include "derain/model.hpp"
#include "derain/rain.hpp"
#include "json.hpp"

namespace derain {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SynthConfig {
  int pairs = 20;
  int test_pairs = 10;
  int width = 64;
  int height = 64;
};

struct DataConfig {
  // Empty paths mean "synthesize in memory from the synth section".
  std::filesystem::path train_rainy, train_clean, test_rainy, test_clean;
  bool strip_numeric_suffix = false;
};

struct OutputConfig {
  std::filesystem::path dir = "out";
  std::string checkpoint = "model.drkt";
  std::string loss_csv = "loss.csv";
  std::string metrics_csv = "metrics.csv";
  std::string ablation_csv = "ablation.csv";
};

/// Everything a run needs. The defaults are the desk-scale benchmark:
/// 20 synthetic 64x64 pairs, 32x32 crops, 8 feature channels, 200 steps.
struct RunConfig {
  std::uint64_t seed = 1;
  bool deterministic = false;
  PipelineConfig pipeline = [] {
    PipelineConfig p;
    p.feature_channels = 8;
    p.reduction = 4;
    p.train.crop = 32;
    p.train.total_steps = 200;
    return p;
  }();
  rain::StreakParams streaks;
  SynthConfig synth;
  DataConfig data;
  OutputConfig output;

  /// Propagates the master seed into every seeded component.
  void apply_seed(std::uint64_t s) {
    seed = s;
    pipeline.train.seed = s;
    streaks.seed = s;
  }

  void validate() const {
    pipeline.validate();
    streaks.validate();
    if (synth.pairs < 1 || synth.test_pairs < 1) throw ConfigError("synth pair counts must be >= 1");
    if (synth.width < 16 || synth.height < 16) throw ConfigError("synth images must be at least 16x16");
    if (synth.width < pipeline.train.crop || synth.height < pipeline.train.crop)
      throw ConfigError("synth images smaller than the training crop");
    if (output.dir.empty()) throw ConfigError("output.dir must not be empty");
  }

  std::filesystem::path out(const std::string& file) const { return output.dir / file; }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown config key: " + (where.empty() ? k : where + "." + k));
}

template <class V>
void read(const json& obj, const char* key, const std::string& where, V& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  const std::string name = where.empty() ? key : where + "." + key;
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer()) throw ConfigError(name + " must be an integer");
    if constexpr (std::is_unsigned_v<V>) {
      if (v.is_number_unsigned() || v.get<long long>() >= 0) {
        out = v.get<V>();
        return;
      }
      throw ConfigError(name + " must be >= 0");
    } else {
      out = v.get<V>();
    }
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!v.is_number()) throw ConfigError(name + " must be a number");
    out = v.get<V>();
  } else {
    if (!v.is_string()) throw ConfigError(name + " must be a string");
    out = v.get<std::string>();
  }
}

}  // namespace detail

/// Parses a JSON document on top of the defaults.
inline RunConfig parse_config(const std::string& text) {
  using detail::read;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  detail::check_keys(j, "", {"seed", "deterministic", "pipeline", "filter", "train", "streaks", "synth", "data",
                             "output"});
  RunConfig c;
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read(j, "seed", "", s);
    c.apply_seed(s);
  }
  read(j, "deterministic", "", c.deterministic);

  if (j.contains("pipeline")) {
    const auto& p = j["pipeline"];
    detail::check_keys(p, "pipeline", {"feature_channels", "reduction", "use_iwgif", "use_feature_net", "use_derb",
                                       "tie_feature_nets"});
    read(p, "feature_channels", "pipeline", c.pipeline.feature_channels);
    read(p, "reduction", "pipeline", c.pipeline.reduction);
    read(p, "use_iwgif", "pipeline", c.pipeline.use_iwgif);
    read(p, "use_feature_net", "pipeline", c.pipeline.use_feature_net);
    read(p, "use_derb", "pipeline", c.pipeline.use_derb);
    read(p, "tie_feature_nets", "pipeline", c.pipeline.tie_feature_nets);
  }
  if (j.contains("filter")) {
    const auto& f = j["filter"];
    detail::check_keys(f, "filter", {"zeta", "lambda", "epsilon", "eta"});
    auto& fp = c.pipeline.filter_params;
    read(f, "zeta", "filter", fp.zeta);
    read(f, "lambda", "filter", fp.lambda);
    read(f, "epsilon", "filter", fp.epsilon);
    read(f, "eta", "filter", fp.eta);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, "train", {"batch", "crop", "lr_max", "lr_min", "total_steps", "seed"});
    auto& tc = c.pipeline.train;
    read(t, "batch", "train", tc.batch);
    read(t, "crop", "train", tc.crop);
    read(t, "lr_max", "train", tc.lr_max);
    read(t, "lr_min", "train", tc.lr_min);
    read(t, "total_steps", "train", tc.total_steps);
    read(t, "seed", "train", tc.seed);
  }
  if (j.contains("streaks")) {
    const auto& s = j["streaks"];
    detail::check_keys(s, "streaks", {"count", "angle_deg", "angle_jitter_deg", "length_px", "length_jitter_px",
                                      "width_px", "intensity", "seed"});
    auto& sp = c.streaks;
    read(s, "count", "streaks", sp.count);
    read(s, "angle_deg", "streaks", sp.angle_deg);
    read(s, "angle_jitter_deg", "streaks", sp.angle_jitter_deg);
    read(s, "length_px", "streaks", sp.length_px);
    read(s, "length_jitter_px", "streaks", sp.length_jitter_px);
    read(s, "width_px", "streaks", sp.width_px);
    read(s, "intensity", "streaks", sp.intensity);
    read(s, "seed", "streaks", sp.seed);
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    detail::check_keys(s, "synth", {"pairs", "test_pairs", "width", "height"});
    read(s, "pairs", "synth", c.synth.pairs);
    read(s, "test_pairs", "synth", c.synth.test_pairs);
    read(s, "width", "synth", c.synth.width);
    read(s, "height", "synth", c.synth.height);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::check_keys(d, "data", {"train_rainy", "train_clean", "test_rainy", "test_clean", "strip_numeric_suffix"});
    std::string tr, tc, er, ec;
    read(d, "train_rainy", "data", tr);
    read(d, "train_clean", "data", tc);
    read(d, "test_rainy", "data", er);
    read(d, "test_clean", "data", ec);
    c.data.train_rainy = tr;
    c.data.train_clean = tc;
    c.data.test_rainy = er;
    c.data.test_clean = ec;
    read(d, "strip_numeric_suffix", "data", c.data.strip_numeric_suffix);
    if (tr.empty() != tc.empty()) throw ConfigError("data.train_rainy and data.train_clean must be given together");
    if (er.empty() != ec.empty()) throw ConfigError("data.test_rainy and data.test_clean must be given together");
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    detail::check_keys(o, "output", {"dir", "checkpoint", "loss_csv", "metrics_csv", "ablation_csv"});
    std::string dir = c.output.dir.string();
    read(o, "dir", "output", dir);
    c.output.dir = dir;
    read(o, "checkpoint", "output", c.output.checkpoint);
    read(o, "loss_csv", "output", c.output.loss_csv);
    read(o, "metrics_csv", "output", c.output.metrics_csv);
    read(o, "ablation_csv", "output", c.output.ablation_csv);
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw io::IoError("no such file: " + path.string());
  std::ifstream in(path);
  if (!in) throw io::IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace derain
