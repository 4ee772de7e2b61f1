#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mmfss/autograd.hpp"
#include "mmfss/errors.hpp"
#include "mmfss/tensor.hpp"

namespace mmfss {

enum class GammaAggregation { max, mean, min };

inline GammaAggregation parse_aggregation(const std::string& s) {
  if (s == "max") return GammaAggregation::max;
  if (s == "mean") return GammaAggregation::mean;
  if (s == "min") return GammaAggregation::min;
  throw ConfigError("unknown tacc.aggregation '" + s + "' (expected max|mean|min)");
}

inline const char* aggregation_name(GammaAggregation a) {
  switch (a) {
    case GammaAggregation::max: return "max";
    case GammaAggregation::mean: return "mean";
    case GammaAggregation::min: return "min";
  }
  return "?";
}

/// Combination P^ = a * s(G) + b * s(P). Adaptive mode uses a = gamma, b = 1.
struct TaccMode {
  bool adaptive = true;
  double a = 1.0;
  double b = 1.0;

  static TaccMode parse(const std::string& s) {
    if (s == "adaptive") return {};
    if (s.rfind("fixed:", 0) == 0) {
      const auto rest = s.substr(6);
      const auto colon = rest.find(':');
      if (colon != std::string::npos) {
        try {
          std::size_t used_a = 0, used_b = 0;
          const double a = std::stod(rest.substr(0, colon), &used_a);
          const double b = std::stod(rest.substr(colon + 1), &used_b);
          if (used_a == colon && used_b == rest.size() - colon - 1) return {false, a, b};
        } catch (const std::exception&) {
        }
      }
    }
    throw ConfigError("unknown tacc.mode '" + s + "' (expected adaptive or fixed:a:b)");
  }

  std::string str() const {
    if (adaptive) return "adaptive";
    auto num = [](double v) {
      std::string t = std::to_string(v);
      t.erase(t.find_last_not_of('0') + 1);
      if (t.back() == '.') t.pop_back();
      return t;
    };
    return "fixed:" + num(a) + ":" + num(b);
  }
};

struct TaccConfig {
  bool enabled = true;
  GammaAggregation aggregation = GammaAggregation::max;
  TaccMode mode;
  bool softmax_both = true;  // false: raw G_q and P_q are summed
};

inline std::vector<int> row_argmax(const Tensor& t) {
  std::vector<int> out(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.dim(1); ++c)
      if (t(i, c) > t(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

/// Foreground IoU between argmax(F_s^i T^T) == fg_class and the support mask. Empty union
/// gives 0.
inline double compute_gamma(const Tensor& fsi, const Tensor& text, const std::vector<std::uint8_t>& mask,
                            std::size_t fg_class = 1) {
  if (fsi.dim(1) != text.dim(1)) throw ContractError("gamma: D_t mismatch");
  if (mask.size() != fsi.dim(0)) throw DimensionError("gamma: mask length differs from point count");
  if (fg_class >= text.dim(0)) throw ContractError("gamma: foreground class out of range");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < fsi.dim(0); ++i) {
    std::size_t best = 0;
    double best_v = 0.0;
    for (std::size_t c = 0; c < text.dim(0); ++c) {
      double v = 0.0;
      for (std::size_t j = 0; j < text.dim(1); ++j) v += fsi(i, j) * text(c, j);
      if (c == 0 || v > best_v) best_v = v, best = c;
    }
    const bool p = best == fg_class, y = mask[i] != 0;
    inter += p && y;
    uni += p || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double aggregate_gamma(std::span<const double> gammas, GammaAggregation mode = GammaAggregation::max) {
  if (gammas.empty()) throw ContractError("aggregate_gamma needs at least one value");
  switch (mode) {
    case GammaAggregation::max: return *std::max_element(gammas.begin(), gammas.end());
    case GammaAggregation::min: return *std::min_element(gammas.begin(), gammas.end());
    case GammaAggregation::mean: break;
  }
  return std::accumulate(gammas.begin(), gammas.end(), 0.0) / static_cast<double>(gammas.size());
}

/// a_c * s(G) + b * s(P) with per-column guidance weights a_c.
inline Tensor combine_columns(const Tensor& g, const Tensor& p, const std::vector<double>& a, double b, bool softmax_both) {
  if (g.shape() != p.shape()) throw DimensionError("calibrate: G and P shapes differ");
  if (a.size() != g.dim(1)) throw DimensionError("calibrate: one weight per class column required");
  const Tensor sg = softmax_both ? softmax_rows(g) : g;
  const Tensor sp = softmax_both ? softmax_rows(p) : p;
  Tensor out(g.shape());
  for (std::size_t i = 0; i < g.dim(0); ++i)
    for (std::size_t c = 0; c < g.dim(1); ++c) out(i, c) = a[c] * sg(i, c) + b * sp(i, c);
  return out;
}

/// P^ = gamma * s(G) + s(P).
inline Tensor calibrate(const Tensor& g, const Tensor& p, double gamma, bool softmax_both = true) {
  return combine_columns(g, p, std::vector<double>(g.dim(1), gamma), 1.0, softmax_both);
}

/// Column n >= 1 weighted by gamma_n, the background column by their mean.
inline Tensor calibrate_nway(const Tensor& g, const Tensor& p, const std::vector<double>& gammas,
                             bool softmax_both = true) {
  if (gammas.size() + 1 != g.dim(1)) throw DimensionError("calibrate_nway: one gamma per way required");
  std::vector<double> a{std::accumulate(gammas.begin(), gammas.end(), 0.0) / static_cast<double>(gammas.size())};
  a.insert(a.end(), gammas.begin(), gammas.end());
  return combine_columns(g, p, a, 1.0, softmax_both);
}

struct CalibrationRecord {
  std::vector<double> gamma;                   // per way, aggregated over shots
  std::vector<std::vector<double>> per_shot;   // [way][shot]
  GammaAggregation aggregation = GammaAggregation::max;
  Tensor logits;
};

/// Applies the configured TACC mode. gammas_per_shot is [way][shot].
inline CalibrationRecord apply_tacc(const Tensor& g, const Tensor& p, const std::vector<std::vector<double>>& gammas_per_shot,
                                    const TaccConfig& cfg) {
  CalibrationRecord rec;
  rec.per_shot = gammas_per_shot;
  rec.aggregation = cfg.aggregation;
  for (const auto& shots : gammas_per_shot) rec.gamma.push_back(aggregate_gamma(shots, cfg.aggregation));
  if (!cfg.enabled) {
    rec.logits = p;
  } else if (cfg.mode.adaptive) {
    rec.logits = rec.gamma.size() == 1 ? calibrate(g, p, rec.gamma[0], cfg.softmax_both)
                                       : calibrate_nway(g, p, rec.gamma, cfg.softmax_both);
  } else {
    rec.logits = combine_columns(g, p, std::vector<double>(g.dim(1), cfg.mode.a), cfg.mode.b, cfg.softmax_both);
  }
  return rec;
}

}  // namespace mmfss
