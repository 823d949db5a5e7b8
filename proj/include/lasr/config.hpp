#pragma once

// JSON run configuration with a strict schema, plus the built-in presets.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "lasr/decoder.hpp"
#include "lasr/model.hpp"
#include "lasr/train.hpp"

namespace lasr {

struct PathsConfig {
  std::string manifest;
  std::string lexicon;
  std::string arpa;
  std::string checkpoint_dir;
  bool operator==(const PathsConfig&) const = default;
};

struct DecoderConfig {
  double alpha = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
  int beam_size = 250;
  double beam_threshold = 25.0;
  std::string merge = "logadd";
  bool operator==(const DecoderConfig&) const = default;

  DecoderParams params(CriterionKind mode) const {
    DecoderParams p;
    p.alpha = alpha;
    p.gamma = gamma;
    p.beta = beta;
    p.beam_size = beam_size;
    p.beam_threshold = beam_threshold;
    p.merge = parse_merge_mode(merge);
    p.mode = mode;
    return p;
  }
};

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double clip = 0.2;
  int batch_size = 4;
  int epochs = 10;
  bool operator==(const OptimizerConfig&) const = default;
};

struct Config {
  ArchSpec arch;
  std::string criterion = "asg";
  PathsConfig paths;
  DecoderConfig decoder;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  bool operator==(const Config&) const = default;
};

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["arch"] = c.arch;
  j["criterion"] = c.criterion;
  j["paths"] = {{"manifest", c.paths.manifest},
                {"lexicon", c.paths.lexicon},
                {"arpa", c.paths.arpa},
                {"checkpoint_dir", c.paths.checkpoint_dir}};
  j["decoder"] = {{"alpha", c.decoder.alpha},         {"gamma", c.decoder.gamma},
                  {"beta", c.decoder.beta},           {"beam_size", c.decoder.beam_size},
                  {"beam_threshold", c.decoder.beam_threshold}, {"merge", c.decoder.merge}};
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"momentum", c.optimizer.momentum},
                    {"clip", c.optimizer.clip},
                    {"batch_size", c.optimizer.batch_size},
                    {"epochs", c.optimizer.epochs}};
  j["seed"] = c.seed;
  return j;
}

namespace detail {

class Fields {
 public:
  Fields(const nlohmann::json& j, std::string where, std::initializer_list<const char*> allowed)
      : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw DataError(where_ + ": expected an object");
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw DataError(path(key) + ": unknown field");
    }
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void get(const char* key, std::string& out) const {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw DataError(path(key) + ": expected a string");
    out = j_.at(key).get<std::string>();
  }
  void get(const char* key, double& out) const {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number()) throw DataError(path(key) + ": expected a number");
    out = j_.at(key).get<double>();
  }
  void get(const char* key, int& out) const {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number_integer()) throw DataError(path(key) + ": expected an integer");
    out = j_.at(key).get<int>();
  }
  void get(const char* key, std::uint64_t& out) const {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number_unsigned()) throw DataError(path(key) + ": expected a non-negative integer");
    out = j_.at(key).get<std::uint64_t>();
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
};

}  // namespace detail

/// Validates and converts; `base_dir` resolves relative input paths, which
/// must exist.
inline Config config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  detail::Fields top(j, "", {"arch", "criterion", "paths", "decoder", "optimizer", "seed"});
  if (!j.contains("arch")) throw DataError("arch: missing field");
  Config c;
  c.arch = arch_from_json(j.at("arch"), "arch");
  top.get("criterion", c.criterion);
  try {
    parse_criterion(c.criterion);
  } catch (const UsageError& e) {
    throw DataError(std::string("criterion: ") + e.what());
  }
  top.get("seed", c.seed);

  if (j.contains("paths")) {
    detail::Fields f(j.at("paths"), "paths", {"manifest", "lexicon", "arpa", "checkpoint_dir"});
    f.get("manifest", c.paths.manifest);
    f.get("lexicon", c.paths.lexicon);
    f.get("arpa", c.paths.arpa);
    f.get("checkpoint_dir", c.paths.checkpoint_dir);
  }
  auto require_file = [&](const char* field, const std::string& p) {
    if (p.empty()) return;
    std::filesystem::path full = p;
    if (full.is_relative() && !base_dir.empty()) full = base_dir / full;
    if (!std::filesystem::exists(full)) throw DataError(std::string(field) + ": file not found");
  };
  require_file("manifest", c.paths.manifest);
  require_file("lexicon", c.paths.lexicon);
  require_file("arpa", c.paths.arpa);

  if (j.contains("decoder")) {
    detail::Fields f(j.at("decoder"), "decoder", {"alpha", "gamma", "beta", "beam_size", "beam_threshold", "merge"});
    f.get("alpha", c.decoder.alpha);
    f.get("gamma", c.decoder.gamma);
    f.get("beta", c.decoder.beta);
    f.get("beam_size", c.decoder.beam_size);
    f.get("beam_threshold", c.decoder.beam_threshold);
    f.get("merge", c.decoder.merge);
    if (c.decoder.beam_size < 1) throw DataError("decoder.beam_size: must be >= 1");
    if (!(c.decoder.beam_threshold > 0.0)) throw DataError("decoder.beam_threshold: must be > 0");
    if (c.decoder.merge != "logadd" && c.decoder.merge != "max") {
      throw DataError("decoder.merge: expected logadd or max");
    }
  }
  if (j.contains("optimizer")) {
    detail::Fields f(j.at("optimizer"), "optimizer", {"learning_rate", "momentum", "clip", "batch_size", "epochs"});
    f.get("learning_rate", c.optimizer.learning_rate);
    f.get("momentum", c.optimizer.momentum);
    f.get("clip", c.optimizer.clip);
    f.get("batch_size", c.optimizer.batch_size);
    f.get("epochs", c.optimizer.epochs);
    if (c.optimizer.learning_rate < 0.0) throw DataError("optimizer.learning_rate: must be >= 0");
    if (!(c.optimizer.clip > 0.0)) throw DataError("optimizer.clip: must be > 0");
    if (c.optimizer.batch_size < 1) throw DataError("optimizer.batch_size: must be >= 1");
    if (c.optimizer.epochs < 0) throw DataError("optimizer.epochs: must be >= 0");
  }
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: " + path.string() + ": file not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Architecture rows shipped as presets, plus a desk-scale toy model.
inline const std::map<std::string, Config>& presets() {
  static const std::map<std::string, Config> table = [] {
    std::map<std::string, Config> t;
    auto make = [](int layers, double d0, double d1, int hu0, int hu1, int kw0, int kw1, int fc, int batch) {
      Config c;
      c.arch = ArchSpec{layers, d0, d1, hu0, hu1, kw0, kw1, fc, 30, 40};
      c.optimizer.batch_size = batch;
      return c;
    };
    t["wsj-low-dropout"] = make(17, 0.25, 0.25, 100, 375, 3, 21, 1000, 1);
    t["libri-low-dropout"] = make(17, 0.25, 0.25, 200, 750, 13, 27, 1500, 4);
    t["libri-high-dropout"] = make(19, 0.20, 0.60, 200, 1000, 13, 29, 2000, 4);
    Config toy = make(4, 1.0, 1.0, 24, 32, 5, 9, 64, 4);
    toy.optimizer.learning_rate = 0.05;
    toy.optimizer.clip = 1.0;
    toy.optimizer.epochs = 200;
    t["toy"] = toy;
    return t;
  }();
  return table;
}

inline const Config& preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& [k, _] : presets()) known += (known.empty() ? "" : ", ") + k;
    throw UsageError("unknown preset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

}  // namespace lasr
