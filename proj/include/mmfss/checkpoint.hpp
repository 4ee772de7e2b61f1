#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmfss/nn.hpp"

namespace mmfss {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;

/// Parameter container on disk: {version, meta, params: {name: {shape, data}}}.
struct Checkpoint {
  int version = kCheckpointVersion;
  ordered_json meta = ordered_json::object();
  std::vector<std::pair<std::string, Tensor>> params;

  static Checkpoint from_store(const ParamStore& store, ordered_json meta = ordered_json::object()) {
    Checkpoint c;
    c.meta = std::move(meta);
    for (const auto& [name, v] : store) c.params.emplace_back(name, v.value());
    return c;
  }

  /// Fresh store holding copies of every tensor.
  ParamStore to_store() const {
    ParamStore store;
    for (const auto& [name, t] : params) store.add(name, t);
    return store;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw LookupError("checkpoint has no parameter " + name);
  }

  ordered_json to_json() const {
    ordered_json j;
    j["version"] = version;
    j["meta"] = meta;
    ordered_json ps = ordered_json::object();
    for (const auto& [name, t] : params) {
      ps[name] = {{"shape", t.shape()}, {"data", t.vec()}};
    }
    j["params"] = std::move(ps);
    return j;
  }

  static Checkpoint from_json(const ordered_json& j) {
    if (!j.is_object() || !j.contains("version")) throw FormatError("checkpoint: missing version field");
    Checkpoint c;
    c.version = j.at("version").get<int>();
    if (c.version != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(c.version));
    }
    if (j.contains("meta")) c.meta = j.at("meta");
    if (!j.contains("params") || !j.at("params").is_object()) throw FormatError("checkpoint: missing params");
    try {
      for (const auto& [name, entry] : j.at("params").items()) {
        c.params.emplace_back(name, Tensor(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    } catch (const DimensionError& e) {
      throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    out << to_json().dump();
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    ordered_json j;
    try {
      j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace mmfss
