#pragma once

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmfss/errors.hpp"
#include "mmfss/synthdata.hpp"
#include "mmfss/tensor.hpp"
#include "mmfss/util.hpp"

namespace mmfss {

inline constexpr int kEmbeddingFileVersion = 1;
inline const std::string kBackgroundName = "background";

/// Class-name text embeddings (unit norm) plus per-class teacher vectors that stand in
/// for frozen 2D features during pretraining.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;
  explicit EmbeddingBank(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(const std::string& name) const { return text_.count(name) != 0; }
  const std::string& prompt_template() const { return prompt_template_; }
  void set_prompt_template(std::string t) { prompt_template_ = std::move(t); }

  /// Adds an entry, renormalizing it to unit length.
  void add(const std::string& name, std::vector<double> v) {
    if (v.size() != dim_) {
      throw FormatError("embedding for '" + name + "' has dim " + std::to_string(v.size()) + ", bank dim is " +
                        std::to_string(dim_));
    }
    if (text_.count(name)) throw FormatError("duplicate embedding entry '" + name + "'");
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 0.0) || !std::isfinite(n)) throw FormatError("embedding for '" + name + "' has zero or non-finite norm");
    for (double& x : v) x /= n;
    names_.push_back(name);
    text_.emplace(name, std::move(v));
  }

  const std::vector<double>& text(const std::string& name) const {
    auto it = text_.find(name);
    if (it == text_.end()) throw LookupError("no text embedding for class '" + name + "'");
    return it->second;
  }

  const std::vector<double>& teacher(const std::string& name) const {
    auto it = teacher_.find(name);
    if (it == teacher_.end()) throw LookupError("no teacher vector for class '" + name + "'");
    return it->second;
  }
  bool has_teacher() const { return !teacher_.empty(); }

  /// Teacher(c) = normalize(t_c + misalignment * R t_c) for one fixed random rotation R.
  /// misalignment = 0 reproduces the text embeddings exactly.
  void build_teacher(double misalignment, std::uint64_t seed) {
    const auto d = static_cast<Eigen::Index>(dim_);
    std::mt19937_64 rng(mix_seed(seed, 0x7eac4e7));
    std::normal_distribution<double> nd;
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) g(i, j) = nd(rng);
    const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    teacher_.clear();
    for (const auto& name : names_) {
      const Eigen::Map<const Eigen::VectorXd> t(text_.at(name).data(), d);
      Eigen::VectorXd v = t + misalignment * (rot * t);
      v.normalize();
      teacher_.emplace(name, std::vector<double>(v.data(), v.data() + d));
    }
  }

  /// Rows of T in the given order (e.g. background first, then episode ways).
  Tensor matrix(const std::vector<std::string>& order) const {
    Tensor t({order.size(), dim_});
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& v = text(order[r]);
      std::copy(v.begin(), v.end(), t.row(r).begin());
    }
    return t;
  }

  void validate() const {
    if (!contains(kBackgroundName)) throw FormatError("embedding bank lacks a 'background' entry");
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> names_;
  std::map<std::string, std::vector<double>> text_;
  std::map<std::string, std::vector<double>> teacher_;
  std::string prompt_template_;
};

/// Parses {version, dim, [prompt_template], entries:[{name, vector}]}.
inline EmbeddingBank embeddings_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version")) throw FormatError("embedding file: missing version");
    if (j.at("version").get<int>() != kEmbeddingFileVersion) throw FormatError("embedding file: unsupported version");
    const auto dim = j.at("dim").get<std::size_t>();
    if (dim == 0) throw FormatError("embedding file: dim must be positive");
    EmbeddingBank bank(dim);
    if (j.contains("prompt_template")) bank.set_prompt_template(j.at("prompt_template").get<std::string>());
    for (const auto& e : j.at("entries")) bank.add(e.at("name").get<std::string>(), e.at("vector").get<std::vector<double>>());
    bank.validate();
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("embedding file: ") + e.what());
  }
}

inline EmbeddingBank load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("embedding file " + path.string() + ": " + e.what());
  }
  return embeddings_from_json(j);
}

inline nlohmann::json embeddings_to_json(const EmbeddingBank& bank) {
  nlohmann::json j;
  j["version"] = kEmbeddingFileVersion;
  j["dim"] = bank.dim();
  if (!bank.prompt_template().empty()) j["prompt_template"] = bank.prompt_template();
  j["entries"] = nlohmann::json::array();
  for (const auto& name : bank.names()) j["entries"].push_back({{"name", name}, {"vector", bank.text(name)}});
  return j;
}

inline void save_embeddings(const EmbeddingBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write embedding file " + path.string());
  out << embeddings_to_json(bank).dump() << '\n';
}

inline constexpr double kSynthMaxCosine = 0.5;

/// Deterministic Gaussian-direction embeddings seeded by (name, seed). A draw whose |cos|
/// with an earlier entry reaches 0.5 is redrawn from the same name stream.
inline EmbeddingBank synth_embeddings(const std::vector<std::string>& names, std::size_t dim, std::uint64_t seed) {
  if (dim < 8) throw ConfigError("synthetic embedding dim must be at least 8");
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) throw ConfigError("duplicate class names for synthetic embeddings");
  EmbeddingBank bank(dim);
  std::vector<std::vector<double>> accepted;
  for (const auto& name : names) {
    std::mt19937_64 rng(mix_seed(seed, fnv1a64(name)));
    std::normal_distribution<double> nd;
    std::vector<double> v(dim);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      double n = 0;
      for (double& x : v) {
        x = nd(rng);
        n += x * x;
      }
      n = std::sqrt(n);
      for (double& x : v) x /= n;
      bool ok = true;
      for (const auto& w : accepted) {
        double c = 0;
        for (std::size_t i = 0; i < dim; ++i) c += v[i] * w[i];
        ok = ok && std::abs(c) < kSynthMaxCosine;
      }
      if (ok) break;
    }
    accepted.push_back(v);
    bank.add(name, v);
  }
  return bank;
}

/// Per-point teacher(class) + N(0, sigma^2); `class_names` maps label ids to bank names.
inline Tensor teacher_features(const LabeledCloud& cloud, const EmbeddingBank& bank,
                               const std::vector<std::string>& class_names, double sigma, std::uint64_t seed) {
  if (!bank.has_teacher()) throw ContractError("embedding bank has no teacher vectors; call build_teacher first");
  const std::size_t d = bank.dim();
  Tensor out({cloud.size(), d});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int l = cloud.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) {
      throw LookupError("label " + std::to_string(l) + " has no class name");
    }
    const auto& t = bank.teacher(class_names[static_cast<std::size_t>(l)]);
    for (std::size_t j = 0; j < d; ++j) out(i, j) = sigma > 0.0 ? t[j] + sigma * nd(rng) : t[j];
  }
  return out;
}

}  // namespace mmfss
