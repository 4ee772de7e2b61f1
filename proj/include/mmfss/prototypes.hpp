#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mmfss/autograd.hpp"
#include "mmfss/errors.hpp"
#include "mmfss/tensor.hpp"

namespace mmfss {

namespace detail {

inline double row_sq_dist(const Tensor& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t a = 0; a < x.dim(1); ++a) {
    const double d = x(i, a) - x(j, a);
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Greedy max-min selection over the rows of `points` (any width). Ties go to the lowest
/// index; once every row is taken the selection repeats cyclically.
inline std::vector<std::size_t> farthest_point_sample(const Tensor& points, std::size_t n, std::size_t start) {
  const std::size_t m = points.dim(0);
  if (m == 0) throw ContractError("farthest point sampling on an empty set");
  if (start >= m) throw ContractError("farthest point sampling start out of range");
  std::vector<std::size_t> out;
  out.reserve(n);
  if (n == 0) return out;
  std::vector<double> min_d(m, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(m, false);
  std::size_t cur = start;
  for (std::size_t s = 0; s < std::min(n, m); ++s) {
    out.push_back(cur);
    taken[cur] = true;
    std::size_t best = m;
    double best_d = -1.0;
    for (std::size_t j = 0; j < m; ++j) {
      min_d[j] = std::min(min_d[j], detail::row_sq_dist(points, cur, j));
      if (!taken[j] && min_d[j] > best_d) {
        best_d = min_d[j];
        best = j;
      }
    }
    cur = best;
  }
  for (std::size_t s = m; s < n; ++s) out.push_back(out[s - m]);
  return out;
}

/// Seeds and per-point cluster assignment for one masked point set. Computed once from
/// coordinates and reused for every feature space.
struct ClusterPlan {
  std::vector<std::size_t> seeds;       // cloud indices, FPS order
  std::vector<std::size_t> members;     // masked cloud indices, ascending
  std::vector<std::size_t> assignment;  // per member: prototype index
  std::shared_ptr<const SparseRows> mean;  // n_p rows over the cloud's points

  std::size_t size() const { return seeds.size(); }
};

/// FPS over the masked coordinates starting at the lowest-index masked point, then nearest
/// seed assignment (lowest seed index on ties). When the mask has fewer points than n_p the
/// repeated seeds duplicate the prototype of their first occurrence.
inline ClusterPlan plan_clusters(const Tensor& coords, const std::vector<std::uint8_t>& mask, std::size_t n_p) {
  const std::size_t m = coords.dim(0);
  if (mask.size() != m) throw DimensionError("mask length differs from point count");
  if (n_p == 0) throw ConfigError("prototype count must be positive");
  ClusterPlan plan;
  for (std::size_t i = 0; i < m; ++i)
    if (mask[i]) plan.members.push_back(i);
  if (plan.members.empty()) throw EpisodeError("empty mask: no points to build prototypes from");

  const std::size_t mm = plan.members.size();
  Tensor sub({mm, coords.dim(1)});
  for (std::size_t r = 0; r < mm; ++r)
    for (std::size_t a = 0; a < coords.dim(1); ++a) sub(r, a) = coords(plan.members[r], a);
  const auto local = farthest_point_sample(sub, n_p, 0);
  const std::size_t distinct = std::min(n_p, mm);

  plan.assignment.resize(mm);
  std::vector<std::vector<std::size_t>> clusters(distinct);
  for (std::size_t r = 0; r < mm; ++r) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < distinct; ++j) {
      const double d = detail::row_sq_dist(sub, r, local[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    plan.assignment[r] = best;
    clusters[best].push_back(plan.members[r]);
  }

  auto rows = std::make_shared<SparseRows>();
  rows->cols = m;
  for (std::size_t j = 0; j < n_p; ++j) {
    const auto& c = clusters[j % distinct];
    const double w = 1.0 / static_cast<double>(c.size());
    for (std::size_t idx : c) rows->push(idx, w);
    rows->end_row();
  }
  for (std::size_t l : local) plan.seeds.push_back(plan.members[l]);
  plan.mean = std::move(rows);
  return plan;
}

/// n_p x d cluster-mean prototypes of `features` under `plan`.
inline Var cluster_prototypes(const Var& features, const ClusterPlan& plan) {
  return sparse_aggregate(plan.mean, features);
}

inline Tensor cluster_prototypes(const Tensor& features, const Tensor& coords, const std::vector<std::uint8_t>& mask,
                                 std::size_t n_p) {
  if (features.dim(0) != coords.dim(0)) throw DimensionError("features and coordinates differ in row count");
  return apply_sparse(*plan_clusters(coords, mask, n_p).mean, features);
}

/// One support sample as seen by prototype assembly: geometry, foreground mask and the
/// per-point features of each modality (row-aligned).
struct ShotFeatures {
  const Tensor* coords = nullptr;
  const std::vector<std::uint8_t>* mask = nullptr;
  std::vector<Var> spaces;
};

/// (N_C * N_P) x d_s per feature space; block 0 is background, then ways in order.
struct PrototypeSet {
  std::vector<Var> spaces;
  std::size_t n_classes = 0;
  std::size_t n_p = 0;

  std::size_t rows() const { return n_classes * n_p; }
};

inline std::vector<std::uint8_t> invert_mask(const std::vector<std::uint8_t>& m) {
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 0 : 1;
  return out;
}

/// Builds the prototype set from support[way][shot]. Each shot contributes n_p / k
/// prototypes to its class and n_p / k background prototypes. With more than one way the
/// pooled background rows are reduced back to n_p by FPS in feature space 0 (start 0); the
/// same rows are kept in every other space.
inline PrototypeSet assemble_prototypes(const std::vector<std::vector<ShotFeatures>>& support, std::size_t n_p) {
  if (support.empty()) throw ConfigError("prototype assembly needs at least one way");
  const std::size_t k = support.front().size();
  if (k == 0) throw ConfigError("k_shot must be at least 1");
  if (n_p % k != 0) {
    throw ConfigError("fusion.np (" + std::to_string(n_p) + ") must be divisible by k_shot (" + std::to_string(k) + ")");
  }
  const std::size_t per_shot = n_p / k;
  const std::size_t n_spaces = support.front().front().spaces.size();
  if (n_spaces == 0) throw ContractError("prototype assembly needs at least one feature space");

  std::vector<std::vector<Var>> fg(n_spaces), bg(n_spaces);
  for (const auto& way : support) {
    if (way.size() != k) throw ConfigError("every way needs the same number of shots");
    for (const auto& shot : way) {
      if (shot.spaces.size() != n_spaces) throw ContractError("inconsistent feature spaces across shots");
      const ClusterPlan fg_plan = plan_clusters(*shot.coords, *shot.mask, per_shot);
      const ClusterPlan bg_plan = plan_clusters(*shot.coords, invert_mask(*shot.mask), per_shot);
      for (std::size_t s = 0; s < n_spaces; ++s) {
        fg[s].push_back(cluster_prototypes(shot.spaces[s], fg_plan));
        bg[s].push_back(cluster_prototypes(shot.spaces[s], bg_plan));
      }
    }
  }

  PrototypeSet out;
  out.n_classes = support.size() + 1;
  out.n_p = n_p;
  std::shared_ptr<const SparseRows> reduce;
  for (std::size_t s = 0; s < n_spaces; ++s) {
    Var pooled = concat_rows(bg[s]);
    if (support.size() > 1) {
      if (!reduce) {
        const auto keep = farthest_point_sample(pooled.value(), n_p, 0);
        auto sel = std::make_shared<SparseRows>();
        sel->cols = pooled.dim(0);
        for (std::size_t r : keep) {
          sel->push(r, 1.0);
          sel->end_row();
        }
        reduce = std::move(sel);
      }
      pooled = sparse_aggregate(reduce, pooled);
    }
    std::vector<Var> blocks{pooled};
    for (std::size_t w = 0; w < support.size(); ++w) {
      std::vector<Var> shots(fg[s].begin() + static_cast<std::ptrdiff_t>(w * k),
                             fg[s].begin() + static_cast<std::ptrdiff_t>((w + 1) * k));
      blocks.push_back(concat_rows(shots));
    }
    out.spaces.push_back(concat_rows(blocks));
  }
  return out;
}

}  // namespace mmfss
