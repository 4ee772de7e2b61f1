#pragma once

// Tiny random episodes for shape, oracle and gradient checks.

#include <random>
#include <vector>

#include "mmfss/model.hpp"

namespace mmfss::toy {

inline LabeledCloud cloud(std::size_t m, int n_labels, std::mt19937_64& rng) {
  LabeledCloud c{Tensor::uniform({m, 3}, rng, 0.0, 0.3), Tensor::uniform({m, 3}, rng, 0.0, 1.0), std::vector<int>(m)};
  for (std::size_t i = 0; i < m; ++i) c.labels[i] = static_cast<int>(i % static_cast<std::size_t>(n_labels));
  return c;
}

/// Support scenes get ids 0.., queries 1000..; labels cycle so every class is present.
inline Episode episode(std::size_t n_way, std::size_t k_shot, std::size_t n_query_pts, std::size_t n_support_pts,
                       std::mt19937_64& rng) {
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.class_names.push_back("background");
  std::size_t scene = 0;
  for (std::size_t n = 0; n < n_way; ++n) {
    ep.class_ids.push_back(static_cast<int>(n + 1));
    ep.class_names.push_back("c" + std::to_string(n + 1));
    std::vector<SupportSample> shots;
    for (std::size_t k = 0; k < k_shot; ++k) {
      LabeledCloud c = cloud(n_support_pts, 2, rng);
      auto mask = class_mask(c, 1);
      shots.push_back({scene++, std::move(c), std::move(mask)});
    }
    ep.support.push_back(std::move(shots));
  }
  for (std::size_t n = 0; n < n_way; ++n) {
    LabeledCloud c = cloud(n_query_pts, static_cast<int>(n_way + 1), rng);
    ep.query.push_back({1000 + n, c, c.labels});
  }
  return ep;
}

inline EncoderConfig encoder_config(std::size_t d, std::size_t dt) {
  EncoderConfig e;
  e.widths = {d, d};
  e.knn_k = 4;
  e.dim_t = dt;
  e.seed = 5;
  return e;
}

inline FusionConfig fusion_config(std::size_t n_way, std::size_t n_p, std::size_t d, std::size_t blocks) {
  FusionConfig f;
  f.n_way = n_way;
  f.n_p = n_p;
  f.dim = d;
  f.blocks = blocks;
  f.seed = 9;
  return f;
}

}  // namespace mmfss::toy
