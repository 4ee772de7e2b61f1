#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "mmfss/tensor.hpp"

namespace mmfss::spatial {

inline double sq_dist(const Tensor& coords, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    const double d = coords(i, a) - coords(j, a);
    s += d * d;
  }
  return s;
}

/// k nearest neighbours of every point (itself included), ordered by (distance, index).
/// Brute force; clouds here stay in the low thousands of points.
inline std::vector<std::vector<std::size_t>> knn(const Tensor& coords, std::size_t k) {
  const std::size_t m = coords.dim(0);
  k = std::min(k, m);
  std::vector<std::vector<std::size_t>> out(m);
  std::vector<std::pair<double, std::size_t>> cand(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) cand[j] = {sq_dist(coords, i, j), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t j = 0; j < k; ++j) out[i].push_back(cand[j].second);
  }
  return out;
}

/// Indices within Euclidean distance `radius` of each point (itself included), ascending.
inline std::vector<std::vector<std::size_t>> radius_neighbors(const Tensor& coords, double radius) {
  const std::size_t m = coords.dim(0);
  const double r2 = radius * radius;
  std::vector<std::vector<std::size_t>> out(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (sq_dist(coords, i, j) <= r2) out[i].push_back(j);
  return out;
}

/// Mean distance from each point to its nearest other point; 0 for a single point.
inline double mean_nn_spacing(const Tensor& coords) {
  const std::size_t m = coords.dim(0);
  if (m < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) best = std::min(best, sq_dist(coords, i, j));
    total += std::sqrt(best);
  }
  return total / static_cast<double>(m);
}

}  // namespace mmfss::spatial
