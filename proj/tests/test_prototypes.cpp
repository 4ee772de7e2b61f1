#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "mmfss/prototypes.hpp"
#include "support/oracles.hpp"

using namespace mmfss;

namespace {

Tensor random_points(std::size_t m, std::mt19937_64& rng) { return Tensor::uniform({m, 3}, rng, 0.0, 1.0); }

}  // namespace

TEST(Fps, CollinearExample) {
  Tensor pts({10, 3});
  for (std::size_t i = 0; i < 10; ++i) pts(i, 0) = static_cast<double>(i);
  EXPECT_EQ(farthest_point_sample(pts, 3, 0), (std::vector<std::size_t>{0, 9, 4}));
}

TEST(Fps, SingleAndExhaustive) {
  std::mt19937_64 rng(1);
  Tensor pts = random_points(12, rng);
  EXPECT_EQ(farthest_point_sample(pts, 1, 5), (std::vector<std::size_t>{5}));
  auto all = farthest_point_sample(pts, 12, 0);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> iota(12);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(all, iota);
  auto over = farthest_point_sample(pts, 15, 0);
  EXPECT_EQ(over[12], over[0]);
  EXPECT_EQ(over[14], over[2]);
}

TEST(Fps, MatchesBruteForceOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng() % 63;
    Tensor pts = random_points(m, rng);
    if (trial % 4 == 0)  // grid-snapped instances exercise tie-breaking
      for (double& x : pts.data()) x = std::round(x * 3.0);
    const std::size_t n = 1 + rng() % m;
    const std::size_t start = rng() % m;
    ASSERT_EQ(farthest_point_sample(pts, n, start), oracle::fps(pts, n, start)) << "trial " << trial;
  }
}

TEST(Fps, ErrorsOnBadInput) {
  Tensor pts({3, 3});
  EXPECT_THROW(farthest_point_sample(pts, 1, 3), ContractError);
}

TEST(Clusters, SinglePrototypeIsGlobalMean) {
  std::mt19937_64 rng(2);
  Tensor pts = random_points(20, rng);
  Tensor f = Tensor::randn({20, 4}, rng);
  std::vector<std::uint8_t> mask(20, 0);
  for (std::size_t i = 0; i < 20; i += 3) mask[i] = 1;
  Tensor p = cluster_prototypes(f, pts, mask, 1);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0, cnt = 0;
    for (std::size_t i = 0; i < 20; ++i)
      if (mask[i]) mean += f(i, j), ++cnt;
    EXPECT_NEAR(p(0, j), mean / cnt, 1e-12);
  }
}

TEST(Clusters, FullCountGivesPointFeaturesInFpsOrder) {
  std::mt19937_64 rng(3);
  Tensor pts = random_points(9, rng);
  Tensor f = Tensor::randn({9, 3}, rng);
  std::vector<std::uint8_t> mask(9, 1);
  auto plan = plan_clusters(pts, mask, 9);
  Tensor p = cluster_prototypes(f, pts, mask, 9);
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(p(r, j), f(plan.seeds[r], j));
}

TEST(Clusters, MatchesAssignThenAverageOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor pts = random_points(50, rng);
    Tensor f = Tensor::randn({50, 5}, rng);
    std::vector<std::uint8_t> mask(50);
    for (auto& b : mask) b = rng() % 3 != 0;
    mask[7] = 1;
    Tensor p = cluster_prototypes(f, pts, mask, 4);
    EXPECT_LE(max_abs_diff(p, oracle::cluster_means(f, pts, mask, 4)), 1e-12);
  }
}

TEST(Clusters, SmallMaskDuplicatesSeeds) {
  std::mt19937_64 rng(5);
  Tensor pts = random_points(10, rng);
  Tensor f = Tensor::randn({10, 2}, rng);
  std::vector<std::uint8_t> mask(10, 0);
  mask[2] = mask[6] = 1;
  Tensor p = cluster_prototypes(f, pts, mask, 5);
  ASSERT_EQ(p.shape(), (Shape{5, 2}));
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(p(0, j), f(2, j));
    EXPECT_EQ(p(1, j), f(6, j));
    EXPECT_EQ(p(2, j), p(0, j));
    EXPECT_EQ(p(4, j), p(0, j));
  }
}

TEST(Clusters, EmptyMaskIsEpisodeError) {
  Tensor pts({4, 3});
  EXPECT_THROW(plan_clusters(pts, std::vector<std::uint8_t>(4, 0), 2), EpisodeError);
}

TEST(Clusters, PrototypesAreConvexCombinations) {
  std::mt19937_64 rng(6);
  Tensor pts = random_points(30, rng);
  Tensor f = Tensor::randn({30, 3}, rng);
  auto plan = plan_clusters(pts, std::vector<std::uint8_t>(30, 1), 6);
  for (std::size_t r = 0; r < plan.mean->rows; ++r) {
    double w = 0;
    for (std::size_t e = plan.mean->offsets[r]; e < plan.mean->offsets[r + 1]; ++e) {
      EXPECT_GT(plan.mean->weight[e], 0.0);
      w += plan.mean->weight[e];
    }
    EXPECT_NEAR(w, 1.0, 1e-12);
  }
}

class Assembly : public ::testing::Test {
 protected:
  struct Owned {
    Tensor coords;
    std::vector<std::uint8_t> mask;
    Tensor fi, fu;
  };

  Owned make(std::size_t m) {
    Owned o{random_points(m, rng), std::vector<std::uint8_t>(m), Tensor::randn({m, 6}, rng), Tensor::randn({m, 4}, rng)};
    for (std::size_t i = 0; i < m; ++i) o.mask[i] = i % 3 == 0;
    return o;
  }

  std::vector<std::vector<ShotFeatures>> view(std::vector<std::vector<Owned>>& o) {
    std::vector<std::vector<ShotFeatures>> out;
    for (auto& way : o) {
      out.emplace_back();
      for (auto& s : way) out.back().push_back({&s.coords, &s.mask, {constant(s.fi), constant(s.fu)}});
    }
    return out;
  }

  std::mt19937_64 rng{11};
};

TEST_F(Assembly, RowCountsAndPerShotSplit) {
  for (auto [n_way, k, n_p] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>{
           {1, 1, 100}, {1, 5, 100}, {2, 1, 4}, {2, 2, 8}, {1, 4, 8}}) {
    std::vector<std::vector<Owned>> o(n_way);
    for (auto& way : o)
      for (std::size_t s = 0; s < k; ++s) way.push_back(make(60));
    auto set = assemble_prototypes(view(o), n_p);
    EXPECT_EQ(set.rows(), (n_way + 1) * n_p);
    EXPECT_EQ(set.spaces[0].shape(), (Shape{(n_way + 1) * n_p, 6}));
    EXPECT_EQ(set.spaces[1].shape(), (Shape{(n_way + 1) * n_p, 4}));

    // way-1 block, shot s occupies rows [n_p + s*n_p/k, n_p + (s+1)*n_p/k)
    const std::size_t per = n_p / k;
    for (std::size_t s = 0; s < k; ++s) {
      Tensor ref = cluster_prototypes(o[0][s].fi, o[0][s].coords, o[0][s].mask, per);
      for (std::size_t r = 0; r < per; ++r)
        for (std::size_t j = 0; j < 6; ++j) ASSERT_EQ(set.spaces[0].value()(n_p + s * per + r, j), ref(r, j));
    }
  }
}

TEST_F(Assembly, IndivisibleCountIsConfigError) {
  std::vector<std::vector<Owned>> o(1);
  for (int s = 0; s < 3; ++s) o[0].push_back(make(30));
  EXPECT_THROW(assemble_prototypes(view(o), 10), ConfigError);
}

TEST_F(Assembly, TwoWayBackgroundRowsAreAlignedAcrossSpaces) {
  std::vector<std::vector<Owned>> o(2);
  for (auto& way : o) way.push_back(make(40));
  auto set = assemble_prototypes(view(o), 4);
  // every background row in space 0 must come from the same pooled source row as in space 1
  std::vector<Tensor> pooled_i, pooled_u;
  for (auto& way : o) {
    auto inv = invert_mask(way[0].mask);
    pooled_i.push_back(cluster_prototypes(way[0].fi, way[0].coords, inv, 4));
    pooled_u.push_back(cluster_prototypes(way[0].fu, way[0].coords, inv, 4));
  }
  for (std::size_t r = 0; r < 4; ++r) {
    bool found = false;
    for (std::size_t w = 0; w < 2 && !found; ++w)
      for (std::size_t q = 0; q < 4 && !found; ++q) {
        bool same_i = true, same_u = true;
        for (std::size_t j = 0; j < 6; ++j) same_i = same_i && set.spaces[0].value()(r, j) == pooled_i[w](q, j);
        for (std::size_t j = 0; j < 4; ++j) same_u = same_u && set.spaces[1].value()(r, j) == pooled_u[w](q, j);
        found = same_i && same_u;
      }
    EXPECT_TRUE(found) << "background row " << r;
  }
}
