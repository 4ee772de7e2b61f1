#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include "mmfss/synthdata.hpp"

using namespace mmfss;

namespace {

LabeledCloud cloud_from(const std::vector<std::array<double, 3>>& pts, const std::vector<int>& labels) {
  LabeledCloud c{Tensor({pts.size(), 3}), Tensor({pts.size(), 3}), labels};
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) c.coords(i, a) = pts[i][a];
  return c;
}

std::size_t distinct_voxels(const LabeledCloud& c, double grid) {
  std::set<std::tuple<long, long, long>> cells;
  for (std::size_t i = 0; i < c.size(); ++i) {
    cells.emplace(static_cast<long>(std::floor(c.coords(i, 0) / grid)), static_cast<long>(std::floor(c.coords(i, 1) / grid)),
                  static_cast<long>(std::floor(c.coords(i, 2) / grid)));
  }
  return cells.size();
}

SceneSpec floor_and(std::vector<int> ids) {
  const auto cat = default_catalog();
  SceneSpec s;
  s.inventory.push_back(cat[0]);
  for (int id : ids) s.inventory.push_back(cat[static_cast<std::size_t>(id)]);
  return s;
}

}  // namespace

TEST(Voxel, TwoPointsShareACell) {
  auto c = cloud_from({{0, 0, 0}, {0.005, 0, 0}, {0.03, 0, 0}}, {0, 1, 2});
  auto d = voxel_downsample(c, 0.02);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 2}));
}

TEST(Voxel, CountMatchesCellSetAndIsIdempotent) {
  auto scene = generate_scene(floor_and({1, 2, 3}), 11);
  auto d = voxel_downsample(scene, 0.02);
  EXPECT_EQ(d.size(), distinct_voxels(scene, 0.02));
  EXPECT_EQ(voxel_downsample(d, 0.02), d);
}

TEST(Voxel, NonPositiveGridIsConfigError) {
  auto c = cloud_from({{0, 0, 0}}, {0});
  EXPECT_THROW(voxel_downsample(c, 0.0), ConfigError);
}

TEST(Cap, KeepsExactlyMaxAndPreservesLabelMix) {
  std::vector<std::array<double, 3>> pts(30000);
  std::vector<int> labels(30000);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = {static_cast<double>(i), 0, 0};
    labels[i] = i % 10 < 7 ? 0 : 1;  // 70/30
  }
  auto c = cloud_from(pts, labels);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto capped = cap_points(c, 20480, seed);
    ASSERT_EQ(capped.size(), 20480u);
    double ones = 0;
    for (int l : capped.labels) ones += l;
    EXPECT_NEAR(ones / 20480.0, 0.3, 0.05);
  }
  EXPECT_EQ(cap_points(c, 40000, 1).size(), 30000u);
}

TEST(Scene, FloorOnlyHasOnlyFloorLabels) {
  auto s = generate_scene(floor_and({}), 3);
  EXPECT_GT(s.size(), 0u);
  EXPECT_EQ(s.classes_present(), std::set<int>{0});
}

TEST(Scene, EveryInventoryClassAppears) {
  auto s = generate_scene(floor_and({1, 2, 3}), 5);
  EXPECT_EQ(s.classes_present(), (std::set<int>{0, 1, 2, 3}));
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_GE(s.colors(i, a), 0.0);
      EXPECT_LE(s.colors(i, a), 1.0);
    }
}

TEST(Scene, SameSeedSameCloud) {
  EXPECT_EQ(generate_scene(floor_and({2, 4}), 9), generate_scene(floor_and({2, 4}), 9));
  EXPECT_FALSE(generate_scene(floor_and({2, 4}), 9) == generate_scene(floor_and({2, 4}), 10));
}

TEST(Scene, EmptyInventoryIsConfigError) { EXPECT_THROW(generate_scene(SceneSpec{}, 0), ConfigError); }

TEST(Bank, RoundTripsThroughDisk) {
  BankConfig cfg;
  cfg.n_scenes = 6;
  auto bank = build_scene_bank(default_catalog(), default_splits(), cfg, 4);
  auto dir = std::filesystem::temp_directory_path() / "mmfss_bank_rt";
  std::filesystem::remove_all(dir);
  save_scene_bank(bank, dir);
  auto back = load_scene_bank(dir);
  EXPECT_EQ(back.class_names, bank.class_names);
  ASSERT_EQ(back.scenes.size(), bank.scenes.size());
  for (std::size_t i = 0; i < bank.scenes.size(); ++i) EXPECT_EQ(back.scenes[i], bank.scenes[i]);
  EXPECT_EQ(back.splits[1].novel, bank.splits[1].novel);
  std::filesystem::remove_all(dir);
}

TEST(Bank, CorruptSceneIsFormatError) {
  auto dir = std::filesystem::temp_directory_path() / "mmfss_bad_scene";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "x.bin", std::ios::binary);
    out << "NOTASCENE";
  }
  EXPECT_THROW(read_scene(dir / "x.bin"), FormatError);
  std::filesystem::remove_all(dir);
}

class EpisodeTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    BankConfig cfg;
    cfg.n_scenes = 40;
    bank_ = new SceneBank(build_scene_bank(default_catalog(), default_splits(), cfg, 21));
  }
  static void TearDownTestSuite() { delete bank_; }
  static SceneBank* bank_;
};
SceneBank* EpisodeTest::bank_ = nullptr;

TEST_F(EpisodeTest, OneWayOneShotCounts) {
  auto ep = sample_episode(*bank_, 0, SplitRole::novel, 1, 1, 7);
  ASSERT_EQ(ep.support.size(), 1u);
  EXPECT_EQ(ep.support[0].size(), 1u);
  EXPECT_EQ(ep.query.size(), 1u);
  EXPECT_EQ(ep.class_names.front(), "background");
}

TEST_F(EpisodeTest, TwoWayFiveShotHasTenSupportPairs) {
  auto ep = sample_episode(*bank_, 0, SplitRole::base, 2, 5, 3);
  std::size_t pairs = 0;
  for (const auto& way : ep.support) pairs += way.size();
  EXPECT_EQ(pairs, 10u);
  EXPECT_EQ(ep.query.size(), 2u);
}

TEST_F(EpisodeTest, QueriesContainEveryTargetAndNeverSupport) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto ep = sample_episode(*bank_, seed % 2, SplitRole::novel, 2, 1, seed);
    std::set<std::size_t> qs;
    for (const auto& q : ep.query) {
      qs.insert(q.scene);
      const auto present = std::set<int>(q.labels.begin(), q.labels.end());
      for (int w = 1; w <= 2; ++w) ASSERT_TRUE(present.count(w)) << "seed " << seed;
    }
    for (std::size_t n = 0; n < ep.n_way; ++n)
      for (const auto& s : ep.support[n]) {
        ASSERT_FALSE(qs.count(s.scene));
        ASSERT_GT(std::count(s.mask.begin(), s.mask.end(), 1), 0);
      }
  }
}

TEST_F(EpisodeTest, ImpossibleShotCountIsEpisodeError) {
  try {
    sample_episode(*bank_, 0, SplitRole::novel, 1, 500, 1);
    FAIL();
  } catch (const EpisodeError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient scenes for class"), std::string::npos);
  }
}

TEST_F(EpisodeTest, SameSeedSameEpisode) {
  auto a = sample_episode(*bank_, 0, SplitRole::base, 1, 2, 99);
  auto b = sample_episode(*bank_, 0, SplitRole::base, 1, 2, 99);
  EXPECT_EQ(a.class_ids, b.class_ids);
  EXPECT_EQ(a.query[0].scene, b.query[0].scene);
  EXPECT_EQ(a.support[0][1].scene, b.support[0][1].scene);
}
