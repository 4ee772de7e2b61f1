#pragma once

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfss/encoder.hpp"
#include "mmfss/errors.hpp"
#include "mmfss/fusion.hpp"
#include "mmfss/synthdata.hpp"
#include "mmfss/tacc.hpp"
#include "mmfss/util.hpp"

namespace mmfss {

/// Environment switch for deterministic single-thread runs (any value except "" or "0").
inline constexpr const char* kDeterministicEnv = "MMFSS_DETERMINISTIC";

inline bool deterministic_mode() {
  const char* v = std::getenv(kDeterministicEnv);
  return v != nullptr && *v != '\0' && std::strcmp(v, "0") != 0;
}

struct MetaTrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  std::size_t episodes = 2000;
  std::size_t checkpoint_every = 500;
  std::size_t keep = 3;
  std::size_t log_every = 50;
};

/// Flat map of dotted keys to JSON scalars. The type of every key is fixed by its default,
/// and text values given on the command line are parsed against that type.
class RunConfig {
 public:
  RunConfig() {
    auto& v = values_;
    v["seed"] = 0;
    v["n_way"] = 1;
    v["k_shot"] = 1;
    v["split"] = 0;
    v["data.scenes"] = 48;
    v["data.voxel"] = 0.02;
    v["data.max_points"] = 20480;
    v["data.density"] = 300.0;
    v["data.noise"] = 0.002;
    v["data.min_objects"] = 2;
    v["data.max_objects"] = 3;
    v["dims.D"] = 192;
    v["dims.Dt"] = 512;
    v["backbone.widths"] = "";
    v["knn.k"] = 16;
    v["fusion.K"] = 2;
    v["fusion.np"] = 100;
    v["fusion.share_lin"] = false;
    v["decoder.kernel_points"] = 15;
    v["decoder.radius_scale"] = 2.5;
    v["mcf.enabled"] = true;
    v["msf.enabled"] = true;
    v["msf.gate"] = "linear";
    v["heads.if"] = true;
    v["heads.uf"] = true;
    v["teacher.misalignment"] = 0.5;
    v["teacher.sigma"] = 0.05;
    v["pretrain.lr"] = 0.006;
    v["pretrain.weight_decay"] = 0.01;
    v["pretrain.epochs"] = 20;
    v["pretrain.holdout"] = 0.1;
    v["meta.lr"] = 0.0001;
    v["meta.weight_decay"] = 0.01;
    v["meta.episodes"] = 2000;
    v["meta.checkpoint_every"] = 500;
    v["meta.keep"] = 3;
    v["meta.log_every"] = 50;
    v["eval.episodes"] = 100;
    v["eval.threads"] = 1;
    v["tacc.enabled"] = true;
    v["tacc.aggregation"] = "max";
    v["tacc.mode"] = "adaptive";
    v["tacc.softmax"] = true;
    v["tacc.compare"] = true;
  }

  /// Small dimensions for single-core runs; everything else keeps its default.
  static RunConfig desk() {
    RunConfig c;
    c.values_["dims.D"] = 32;
    c.values_["dims.Dt"] = 32;
    c.values_["fusion.np"] = 8;
    return c;
  }

  static RunConfig preset(const std::string& name) {
    if (name == "full") return RunConfig();
    if (name == "desk") return desk();
    throw ConfigError("unknown preset '" + name + "' (expected full|desk)");
  }

  const nlohmann::ordered_json& values() const { return values_; }
  std::vector<std::string> keys() const {
    std::vector<std::string> k;
    for (const auto& [key, _] : values_.items()) k.push_back(key);
    return k;
  }
  bool has(const std::string& key) const { return values_.contains(key); }

  void set(const std::string& key, const nlohmann::json& value) {
    if (!has(key)) throw ConfigError("unknown config key '" + key + "'");
    const auto& cur = values_[key];
    const bool ok = (cur.is_boolean() && value.is_boolean()) || (cur.is_string() && value.is_string()) ||
                    (cur.is_number_integer() && value.is_number_integer() && (value.is_number_unsigned() || value.get<long long>() >= 0)) ||
                    (cur.is_number_float() && value.is_number());
    if (!ok) throw ConfigError("config key '" + key + "' expects a " + type_word(cur) + ", got " + value.dump());
    values_[key] = cur.is_number_float() ? nlohmann::json(value.get<double>()) : value;
  }

  /// Parses `text` according to the key's type.
  void set_text(const std::string& key, const std::string& text) {
    if (!has(key)) throw ConfigError("unknown config key '" + key + "'");
    const auto& cur = values_[key];
    if (cur.is_string()) return set(key, text);
    if (cur.is_boolean()) {
      if (text == "true" || text == "1" || text == "on") return set(key, true);
      if (text == "false" || text == "0" || text == "off") return set(key, false);
      throw ConfigError("config key '" + key + "' expects a boolean, got '" + text + "'");
    }
    try {
      std::size_t used = 0;
      if (cur.is_number_integer()) {
        if (!text.empty() && text[0] == '-') throw ConfigError("");
        const unsigned long long v = std::stoull(text, &used);
        if (used == text.size()) return set(key, v);
      } else {
        const double v = std::stod(text, &used);
        if (used == text.size()) return set(key, v);
      }
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a " + type_word(cur) + ", got '" + text + "'");
  }

  /// Accepts flat dotted keys or nested objects ({"fusion": {"K": 4}}).
  void merge(const nlohmann::json& j, const std::string& prefix = "") {
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [k, v] : j.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) merge(v, key);
      else set(key, v);
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
      merge(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
  }

  template <class T>
  T get(const std::string& key) const {
    if (!has(key)) throw ConfigError("unknown config key '" + key + "'");
    return values_.at(key).get<T>();
  }

  std::size_t count(const std::string& key) const { return get<std::size_t>(key); }
  double real(const std::string& key) const { return get<double>(key); }
  bool flag(const std::string& key) const { return get<bool>(key); }
  std::string text(const std::string& key) const { return get<std::string>(key); }
  std::uint64_t seed() const { return get<std::uint64_t>("seed"); }

  /// Stable hex digest of every key and value.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(values_.dump())));
    return buf;
  }

  std::vector<std::size_t> backbone_widths() const {
    const std::string s = text("backbone.widths");
    const std::size_t d = count("dims.D");
    if (s.empty()) return {std::max<std::size_t>(1, d / 2), d};
    std::vector<std::size_t> w;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        w.push_back(std::stoul(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("backbone.widths must be a comma-separated list of integers, got '" + s + "'");
      }
    }
    if (w.empty() || w.back() != d) throw ConfigError("backbone.widths must end with dims.D (" + std::to_string(d) + ")");
    return w;
  }

  void validate() const {
    for (const char* k : {"n_way", "k_shot", "data.scenes", "data.max_points", "dims.D", "dims.Dt", "knn.k", "fusion.K",
                          "fusion.np", "decoder.kernel_points", "meta.checkpoint_every", "meta.keep", "meta.log_every",
                          "eval.episodes"}) {
      if (count(k) == 0) throw ConfigError(std::string(k) + " must be positive");
    }
    for (const char* k : {"data.voxel", "data.density", "pretrain.lr", "meta.lr", "decoder.radius_scale"}) {
      if (!(real(k) > 0.0)) throw ConfigError(std::string(k) + " must be positive");
    }
    if (count("fusion.np") % count("k_shot") != 0) {
      throw ConfigError("fusion.np (" + std::to_string(count("fusion.np")) + ") must be divisible by k_shot (" +
                        std::to_string(count("k_shot")) + ")");
    }
    const double h = real("pretrain.holdout");
    if (h < 0.0 || h >= 1.0) throw ConfigError("pretrain.holdout must lie in [0, 1)");
    backbone_widths();
    parse_gate(text("msf.gate"));
    parse_aggregation(text("tacc.aggregation"));
    TaccMode::parse(text("tacc.mode"));
    fusion(1).validate();
  }

  /// Checks that the split exists and its base and novel sets are disjoint.
  void validate_split(const SceneBank& bank) const {
    const ClassSplit& sp = bank.split(count("split"));
    for (int b : sp.base)
      for (int n : sp.novel)
        if (b == n) throw ConfigError("split " + std::to_string(count("split")) + " lists class " + std::to_string(b) + " as both base and novel");
    if (count("n_way") > sp.base.size() || count("n_way") > sp.novel.size()) {
      throw ConfigError("n_way exceeds the classes available in split " + std::to_string(count("split")));
    }
  }

  BankConfig bank() const {
    BankConfig b;
    b.n_scenes = count("data.scenes");
    b.voxel_grid = real("data.voxel");
    b.max_points = count("data.max_points");
    b.density = real("data.density");
    b.noise_sigma = real("data.noise");
    b.min_objects = count("data.min_objects");
    b.max_objects = count("data.max_objects");
    return b;
  }

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.widths = backbone_widths();
    e.knn_k = count("knn.k");
    e.dim_t = count("dims.Dt");
    e.seed = mix_seed(seed(), 1);
    return e;
  }

  PretrainConfig pretrain() const {
    return {.lr = real("pretrain.lr"), .weight_decay = real("pretrain.weight_decay"), .epochs = count("pretrain.epochs"),
            .match_fraction = 1.0, .seed = mix_seed(seed(), 2)};
  }

  FusionConfig fusion(std::size_t n_way) const {
    FusionConfig f;
    f.n_way = n_way;
    f.n_p = count("fusion.np");
    f.dim = count("dims.D");
    f.blocks = count("fusion.K");
    f.kernel_points = count("decoder.kernel_points");
    f.radius_scale = real("decoder.radius_scale");
    f.mcf = flag("mcf.enabled");
    f.msf = flag("msf.enabled");
    f.use_if = flag("heads.if");
    f.use_uf = flag("heads.uf");
    f.share_lin = flag("fusion.share_lin");
    f.gate = parse_gate(text("msf.gate"));
    f.seed = mix_seed(seed(), 3);
    return f;
  }

  MetaTrainConfig meta() const {
    return {real("meta.lr"), real("meta.weight_decay"), get<std::size_t>("meta.episodes"), count("meta.checkpoint_every"),
            count("meta.keep"), count("meta.log_every")};
  }

  TaccConfig tacc() const {
    return {flag("tacc.enabled"), parse_aggregation(text("tacc.aggregation")), TaccMode::parse(text("tacc.mode")),
            flag("tacc.softmax")};
  }

 private:
  static std::string type_word(const nlohmann::json& v) {
    if (v.is_boolean()) return "boolean";
    if (v.is_string()) return "string";
    if (v.is_number_integer()) return "non-negative integer";
    return "number";
  }

  nlohmann::ordered_json values_ = nlohmann::ordered_json::object();
};

}  // namespace mmfss
