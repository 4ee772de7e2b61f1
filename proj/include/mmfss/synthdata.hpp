#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmfss/errors.hpp"
#include "mmfss/tensor.hpp"
#include "mmfss/util.hpp"

namespace mmfss {

/// Coordinates (meters), colors in [0,1] and one class id per point.
struct LabeledCloud {
  Tensor coords;  // M x 3
  Tensor colors;  // M x 3
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    const std::size_t m = labels.size();
    if (m == 0 || coords.shape() != Shape{m, 3} || colors.shape() != Shape{m, 3}) {
      throw DimensionError("labeled cloud arrays disagree in length");
    }
    if (!coords.all_finite()) throw DimensionError("labeled cloud has non-finite coordinates");
  }

  /// Subset in the given index order.
  LabeledCloud select(const std::vector<std::size_t>& idx) const {
    LabeledCloud out{Tensor({idx.size(), 3}), Tensor({idx.size(), 3}), {}};
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t a = 0; a < 3; ++a) {
        out.coords(r, a) = coords(idx[r], a);
        out.colors(r, a) = colors(idx[r], a);
      }
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }

  std::set<int> classes_present() const { return {labels.begin(), labels.end()}; }

  friend bool operator==(const LabeledCloud&, const LabeledCloud&) = default;
};

enum class Primitive { box, cylinder, sphere, plane };

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::box: return "box";
    case Primitive::cylinder: return "cylinder";
    case Primitive::sphere: return "sphere";
    case Primitive::plane: return "plane";
  }
  return "?";
}

inline Primitive parse_primitive(const std::string& s) {
  if (s == "box") return Primitive::box;
  if (s == "cylinder") return Primitive::cylinder;
  if (s == "sphere") return Primitive::sphere;
  if (s == "plane") return Primitive::plane;
  throw ConfigError("unknown primitive: " + s);
}

/// One inventory entry. Sizes are full extents (x, y, z); cylinders use x as diameter,
/// spheres use x as diameter. Planes span the room floor and ignore size.
struct ObjectClass {
  int class_id = 0;
  std::string name;
  Primitive primitive = Primitive::box;
  std::array<double, 3> size_min{0.2, 0.2, 0.2};
  std::array<double, 3> size_max{0.3, 0.3, 0.3};
  std::array<double, 3> color_mean{0.5, 0.5, 0.5};
  double color_std = 0.04;
};

struct SceneSpec {
  std::array<double, 2> room_extent{1.0, 1.0};
  std::vector<ObjectClass> inventory;
  double density = 300.0;  // surface points per square meter
  double noise_sigma = 0.002;

  void validate() const {
    if (inventory.empty()) throw ConfigError("scene spec has an empty inventory");
    if (density <= 0.0) throw ConfigError("scene density must be positive");
    if (room_extent[0] <= 0.0 || room_extent[1] <= 0.0) throw ConfigError("room extent must be positive");
    if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  }
};

namespace detail {

struct CloudBuilder {
  std::vector<double> xyz, rgb;
  std::vector<int> labels;

  void push(std::array<double, 3> p, const ObjectClass& cls, std::mt19937_64& rng) {
    std::normal_distribution<double> cn(0.0, cls.color_std);
    for (std::size_t a = 0; a < 3; ++a) {
      xyz.push_back(p[a]);
      rgb.push_back(std::clamp(cls.color_mean[a] + cn(rng), 0.0, 1.0));
    }
    labels.push_back(cls.class_id);
  }
};

inline std::size_t count_for_area(double area, double density) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(area * density)));
}

}  // namespace detail

/// Samples every inventory entry as a surface point set. Deterministic under `seed`;
/// each object contributes at least one point.
inline LabeledCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  detail::CloudBuilder b;
  const double W = spec.room_extent[0], L = spec.room_extent[1];
  std::vector<std::array<double, 3>> placed;  // x, y, footprint radius

  for (const ObjectClass& cls : spec.inventory) {
    std::array<double, 3> size{};
    for (std::size_t a = 0; a < 3; ++a) size[a] = cls.size_min[a] + u01(rng) * (cls.size_max[a] - cls.size_min[a]);

    if (cls.primitive == Primitive::plane) {
      const std::size_t n = detail::count_for_area(W * L, spec.density);
      for (std::size_t i = 0; i < n; ++i) b.push({u01(rng) * W, u01(rng) * L, 0.0}, cls, rng);
      continue;
    }

    // Footprint placement with a few attempts at avoiding overlap.
    const double radius = 0.5 * std::hypot(size[0], cls.primitive == Primitive::box ? size[1] : size[0]);
    double cx = 0, cy = 0;
    for (int attempt = 0; attempt < 50; ++attempt) {
      cx = radius + u01(rng) * std::max(W - 2 * radius, 0.0);
      cy = radius + u01(rng) * std::max(L - 2 * radius, 0.0);
      bool clear = true;
      for (const auto& q : placed) clear = clear && std::hypot(cx - q[0], cy - q[1]) > radius + q[2];
      if (clear) break;
    }
    placed.push_back({cx, cy, radius});

    switch (cls.primitive) {
      case Primitive::box: {
        const double sx = size[0], sy = size[1], sz = size[2];
        // Five faces (no bottom), chosen proportionally to area.
        const std::array<double, 5> area{sx * sy, sx * sz, sx * sz, sy * sz, sy * sz};
        double total = 0;
        for (double a : area) total += a;
        std::discrete_distribution<int> face(area.begin(), area.end());
        const std::size_t n = detail::count_for_area(total, spec.density);
        for (std::size_t i = 0; i < n; ++i) {
          const double s = u01(rng), t = u01(rng);
          std::array<double, 3> p{};
          switch (face(rng)) {
            case 0: p = {(s - 0.5) * sx, (t - 0.5) * sy, sz}; break;
            case 1: p = {(s - 0.5) * sx, -0.5 * sy, t * sz}; break;
            case 2: p = {(s - 0.5) * sx, 0.5 * sy, t * sz}; break;
            case 3: p = {-0.5 * sx, (s - 0.5) * sy, t * sz}; break;
            default: p = {0.5 * sx, (s - 0.5) * sy, t * sz}; break;
          }
          b.push({cx + p[0], cy + p[1], p[2]}, cls, rng);
        }
        break;
      }
      case Primitive::cylinder: {
        const double r = 0.5 * size[0], h = size[2];
        const double lateral = 2 * std::numbers::pi * r * h, top = std::numbers::pi * r * r;
        const std::size_t n = detail::count_for_area(lateral + top, spec.density);
        for (std::size_t i = 0; i < n; ++i) {
          const double th = 2 * std::numbers::pi * u01(rng);
          if (u01(rng) * (lateral + top) < lateral) {
            b.push({cx + r * std::cos(th), cy + r * std::sin(th), u01(rng) * h}, cls, rng);
          } else {
            const double rr = r * std::sqrt(u01(rng));
            b.push({cx + rr * std::cos(th), cy + rr * std::sin(th), h}, cls, rng);
          }
        }
        break;
      }
      case Primitive::sphere: {
        const double r = 0.5 * size[0];
        const std::size_t n = detail::count_for_area(4 * std::numbers::pi * r * r, spec.density);
        for (std::size_t i = 0; i < n; ++i) {
          const double z = 2 * u01(rng) - 1, th = 2 * std::numbers::pi * u01(rng);
          const double s = std::sqrt(1 - z * z);
          b.push({cx + r * s * std::cos(th), cy + r * s * std::sin(th), r + r * z}, cls, rng);
        }
        break;
      }
      case Primitive::plane: break;
    }
  }

  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> nd(0.0, spec.noise_sigma);
    for (double& v : b.xyz) v += nd(rng);
  }
  const std::size_t m = b.labels.size();
  LabeledCloud out{Tensor({m, 3}, std::move(b.xyz)), Tensor({m, 3}, std::move(b.rgb)), std::move(b.labels)};
  out.validate();
  return out;
}

/// Keeps the first point encountered in each occupied cubic cell of side `grid`.
inline LabeledCloud voxel_downsample(const LabeledCloud& cloud, double grid = 0.02) {
  if (!(grid > 0.0)) throw ConfigError("voxel grid must be positive");
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
      std::uint64_t h = 1469598103934665603ULL;
      for (auto v : k) h = mix_seed(h, static_cast<std::uint64_t>(v));
      return static_cast<std::size_t>(h);
    }
  };
  std::unordered_set<std::array<std::int64_t, 3>, KeyHash> seen;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::array<std::int64_t, 3> key{};
    for (std::size_t a = 0; a < 3; ++a) key[a] = static_cast<std::int64_t>(std::floor(cloud.coords(i, a) / grid));
    if (seen.insert(key).second) keep.push_back(i);
  }
  return cloud.select(keep);
}

/// Uniform subsample without replacement down to `max_points` (original order kept).
inline LabeledCloud cap_points(const LabeledCloud& cloud, std::size_t max_points, std::uint64_t seed) {
  if (max_points < 1) throw ConfigError("point cap must be at least 1");
  if (cloud.size() <= max_points) return cloud;
  std::vector<std::size_t> idx(cloud.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  return cloud.select(idx);
}

// ---------------------------------------------------------------------------
// Scene bank

struct ClassSplit {
  std::vector<int> base;
  std::vector<int> novel;
};

/// Class list, cross-validation splits, and the preprocessed scenes.
struct SceneBank {
  std::vector<std::string> class_names;
  std::vector<ClassSplit> splits;
  std::vector<LabeledCloud> scenes;
  nlohmann::json generator = nlohmann::json::object();

  const ClassSplit& split(std::size_t i) const {
    if (i >= splits.size()) throw ConfigError("split index " + std::to_string(i) + " out of range");
    return splits[i];
  }

  const std::string& name_of(int class_id) const {
    if (class_id < 0 || static_cast<std::size_t>(class_id) >= class_names.size()) {
      throw LookupError("class id " + std::to_string(class_id) + " not registered");
    }
    return class_names[static_cast<std::size_t>(class_id)];
  }

  /// Scene indices whose labels include every class in `classes`.
  std::vector<std::size_t> scenes_with(const std::vector<int>& classes) const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto present = scenes[s].classes_present();
      if (std::all_of(classes.begin(), classes.end(), [&](int c) { return present.count(c) != 0; })) out.push_back(s);
    }
    return out;
  }
};

struct BankConfig {
  std::size_t n_scenes = 48;
  std::size_t min_objects = 2;
  std::size_t max_objects = 3;
  double voxel_grid = 0.02;
  std::size_t max_points = 20480;
  double density = 300.0;
  double noise_sigma = 0.002;
  std::array<double, 2> room_extent{1.0, 1.0};
};

/// Floor plus four color-separable object classes; split 0 trains on table/chair and
/// tests on lamp/bookcase, split 1 swaps them. The floor is never a target.
inline std::vector<ObjectClass> default_catalog() {
  return {
      {0, "floor", Primitive::plane, {1, 1, 0}, {1, 1, 0}, {0.50, 0.50, 0.50}, 0.04},
      {1, "table", Primitive::box, {0.30, 0.30, 0.22}, {0.42, 0.42, 0.30}, {0.55, 0.33, 0.12}, 0.04},
      {2, "chair", Primitive::box, {0.16, 0.16, 0.30}, {0.24, 0.24, 0.42}, {0.85, 0.12, 0.15}, 0.04},
      {3, "lamp", Primitive::cylinder, {0.14, 0.14, 0.30}, {0.20, 0.20, 0.45}, {0.95, 0.88, 0.20}, 0.04},
      {4, "bookcase", Primitive::box, {0.30, 0.12, 0.40}, {0.40, 0.16, 0.55}, {0.15, 0.30, 0.85}, 0.04},
  };
}

inline std::vector<ClassSplit> default_splits() { return {{{1, 2}, {3, 4}}, {{3, 4}, {1, 2}}}; }

/// Generates, voxelizes and caps `cfg.n_scenes` scenes. Each scene holds every plane entry
/// of the catalog plus a random subset of the object entries.
inline SceneBank build_scene_bank(const std::vector<ObjectClass>& catalog, const std::vector<ClassSplit>& splits,
                                  const BankConfig& cfg, std::uint64_t seed) {
  if (catalog.empty()) throw ConfigError("empty class catalog");
  if (cfg.min_objects > cfg.max_objects) throw ConfigError("min_objects exceeds max_objects");
  SceneBank bank;
  int max_id = -1;
  for (const auto& c : catalog) max_id = std::max(max_id, c.class_id);
  bank.class_names.assign(static_cast<std::size_t>(max_id + 1), "");
  for (const auto& c : catalog) bank.class_names[static_cast<std::size_t>(c.class_id)] = c.name;
  bank.splits = splits;
  for (const auto& sp : splits) {
    for (int c : sp.base)
      if (std::find(sp.novel.begin(), sp.novel.end(), c) != sp.novel.end())
        throw ConfigError("split classes overlap: " + bank.name_of(c));
  }

  std::vector<const ObjectClass*> planes, objects;
  for (const auto& c : catalog) (c.primitive == Primitive::plane ? planes : objects).push_back(&c);

  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    SceneSpec spec;
    spec.room_extent = cfg.room_extent;
    spec.density = cfg.density;
    spec.noise_sigma = cfg.noise_sigma;
    for (const auto* p : planes) spec.inventory.push_back(*p);
    std::vector<const ObjectClass*> pool = objects;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_int_distribution<std::size_t> count(std::min(cfg.min_objects, pool.size()),
                                                     std::min(cfg.max_objects, pool.size()));
    pool.resize(count(rng));
    std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->class_id < b->class_id; });
    for (const auto* o : pool) spec.inventory.push_back(*o);
    LabeledCloud cloud = generate_scene(spec, mix_seed(seed, 2 * s));
    cloud = voxel_downsample(cloud, cfg.voxel_grid);
    cloud = cap_points(cloud, cfg.max_points, mix_seed(seed, 2 * s + 1));
    bank.scenes.push_back(std::move(cloud));
  }
  bank.generator = {{"seed", seed},
                    {"n_scenes", cfg.n_scenes},
                    {"voxel_grid", cfg.voxel_grid},
                    {"max_points", cfg.max_points},
                    {"density", cfg.density}};
  return bank;
}

// Scene file: "MMFSSCN1" | u32 version | u32 reserved | u64 M | f64 coords[M*3] |
// f64 colors[M*3] | i32 labels[M], host (little-endian) byte order.
inline constexpr char kSceneMagic[8] = {'M', 'M', 'F', 'S', 'S', 'C', 'N', '1'};
inline constexpr std::uint32_t kSceneVersion = 1;

inline void write_scene(const std::filesystem::path& path, const LabeledCloud& cloud) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write scene " + path.string());
  const std::uint32_t version = kSceneVersion, reserved = 0;
  const std::uint64_t m = cloud.size();
  out.write(kSceneMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(&m), 8);
  out.write(reinterpret_cast<const char*>(cloud.coords.data().data()), static_cast<std::streamsize>(m * 3 * 8));
  out.write(reinterpret_cast<const char*>(cloud.colors.data().data()), static_cast<std::streamsize>(m * 3 * 8));
  std::vector<std::int32_t> labels(cloud.labels.begin(), cloud.labels.end());
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(m * 4));
}

inline LabeledCloud read_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open scene " + path.string());
  char magic[8];
  std::uint32_t version = 0, reserved = 0;
  std::uint64_t m = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  in.read(reinterpret_cast<char*>(&m), 8);
  if (!in || std::memcmp(magic, kSceneMagic, 8) != 0) throw FormatError("bad scene header in " + path.string());
  if (version != kSceneVersion) throw FormatError("unsupported scene version in " + path.string());
  if (m == 0 || m > (1ULL << 32)) throw FormatError("implausible point count in " + path.string());
  std::vector<double> xyz(m * 3), rgb(m * 3);
  std::vector<std::int32_t> labels(m);
  in.read(reinterpret_cast<char*>(xyz.data()), static_cast<std::streamsize>(m * 3 * 8));
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(m * 3 * 8));
  in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(m * 4));
  if (!in) throw FormatError("truncated scene file " + path.string());
  LabeledCloud c{Tensor({m, 3}, std::move(xyz)), Tensor({m, 3}, std::move(rgb)), {labels.begin(), labels.end()}};
  c.validate();
  return c;
}

inline constexpr int kManifestVersion = 1;

/// Writes `dir/manifest.json` and `dir/scenes/scene_NNNNN.bin`.
inline void save_scene_bank(const SceneBank& bank, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scenes");
  nlohmann::json manifest;
  manifest["version"] = kManifestVersion;
  manifest["classes"] = bank.class_names;
  manifest["splits"] = nlohmann::json::array();
  for (const auto& sp : bank.splits) manifest["splits"].push_back({{"base", sp.base}, {"novel", sp.novel}});
  manifest["scenes"] = nlohmann::json::array();
  for (std::size_t s = 0; s < bank.scenes.size(); ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.bin", s);
    write_scene(dir / "scenes" / name, bank.scenes[s]);
    const auto present = bank.scenes[s].classes_present();
    manifest["scenes"].push_back({{"file", std::string("scenes/") + name},
                                  {"points", bank.scenes[s].size()},
                                  {"classes", std::vector<int>(present.begin(), present.end())}});
  }
  manifest["generator"] = bank.generator;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

inline SceneBank load_scene_bank(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("no manifest.json in " + dir.string());
  SceneBank bank;
  try {
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.at("version").get<int>() != kManifestVersion) throw FormatError("unsupported manifest version");
    bank.class_names = manifest.at("classes").get<std::vector<std::string>>();
    for (const auto& sp : manifest.at("splits")) {
      bank.splits.push_back({sp.at("base").get<std::vector<int>>(), sp.at("novel").get<std::vector<int>>()});
    }
    for (const auto& entry : manifest.at("scenes")) {
      bank.scenes.push_back(read_scene(dir / entry.at("file").get<std::string>()));
    }
    if (manifest.contains("generator")) bank.generator = manifest["generator"];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest in " + dir.string() + ": " + e.what());
  }
  for (const auto& cloud : bank.scenes)
    for (int l : cloud.labels) bank.name_of(l);
  return bank;
}

// ---------------------------------------------------------------------------
// Episodes

struct SupportSample {
  std::size_t scene = 0;
  LabeledCloud cloud;
  std::vector<std::uint8_t> mask;  // 1 = foreground of this way's class
};

struct QuerySample {
  std::size_t scene = 0;
  LabeledCloud cloud;
  std::vector<int> labels;  // 0 = background, n = way n (1-based)
};

/// N-way K-shot task. Canonical class order everywhere: background first, then ways.
struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::vector<int> class_ids;             // global ids, one per way
  std::vector<std::string> class_names;   // "background", then one per way
  std::vector<std::vector<SupportSample>> support;  // [way][shot]
  std::vector<QuerySample> query;                   // one per way

  std::size_t n_classes() const { return n_way + 1; }
};

inline std::vector<std::uint8_t> class_mask(const LabeledCloud& cloud, int class_id) {
  std::vector<std::uint8_t> m(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) m[i] = cloud.labels[i] == class_id ? 1 : 0;
  return m;
}

inline std::vector<int> remap_query_labels(const LabeledCloud& cloud, const std::vector<int>& targets) {
  std::vector<int> out(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (std::size_t n = 0; n < targets.size(); ++n)
      if (cloud.labels[i] == targets[n]) out[i] = static_cast<int>(n + 1);
  return out;
}

/// Builds an episode for fixed target classes. Queries are distinct scenes that contain
/// every target; supports for a way contain that way's class and are never query scenes.
inline Episode make_episode(const SceneBank& bank, const std::vector<int>& targets, std::size_t k_shot,
                            std::uint64_t seed) {
  if (targets.empty()) throw ConfigError("episode needs at least one way");
  if (k_shot < 1) throw ConfigError("k_shot must be at least 1");
  std::mt19937_64 rng(seed);
  const std::size_t n_way = targets.size();

  for (int c : targets) {
    if (bank.scenes_with({c}).size() < k_shot + 1) {
      throw EpisodeError("insufficient scenes for class '" + bank.name_of(c) + "'");
    }
  }
  std::vector<std::size_t> query_pool = bank.scenes_with(targets);
  if (query_pool.size() < n_way) {
    throw EpisodeError("insufficient scenes containing all targets (need " + std::to_string(n_way) + ") for class '" +
                       bank.name_of(targets.front()) + "'");
  }
  std::shuffle(query_pool.begin(), query_pool.end(), rng);
  query_pool.resize(n_way);

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.class_ids = targets;
  ep.class_names.push_back("background");
  for (int c : targets) ep.class_names.push_back(bank.name_of(c));

  for (std::size_t n = 0; n < n_way; ++n) {
    std::vector<std::size_t> pool;
    for (std::size_t s : bank.scenes_with({targets[n]}))
      if (std::find(query_pool.begin(), query_pool.end(), s) == query_pool.end()) pool.push_back(s);
    if (pool.size() < k_shot) throw EpisodeError("insufficient scenes for class '" + bank.name_of(targets[n]) + "'");
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<SupportSample> shots;
    for (std::size_t k = 0; k < k_shot; ++k) {
      const LabeledCloud& cloud = bank.scenes[pool[k]];
      shots.push_back({pool[k], cloud, class_mask(cloud, targets[n])});
    }
    ep.support.push_back(std::move(shots));
  }
  for (std::size_t q : query_pool) {
    const LabeledCloud& cloud = bank.scenes[q];
    ep.query.push_back({q, cloud, remap_query_labels(cloud, targets)});
  }
  return ep;
}

/// Draws n_way distinct classes from `pool` and builds the episode around them.
inline Episode sample_episode(const SceneBank& bank, const std::vector<int>& pool, std::size_t n_way,
                              std::size_t k_shot, std::uint64_t seed) {
  if (n_way < 1 || n_way > pool.size()) {
    throw ConfigError("n_way " + std::to_string(n_way) + " incompatible with a pool of " + std::to_string(pool.size()));
  }
  std::mt19937_64 rng(mix_seed(seed, 0xc1a55));
  std::vector<int> classes = pool;
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(n_way);
  return make_episode(bank, classes, k_shot, seed);
}

enum class SplitRole { base, novel };

inline Episode sample_episode(const SceneBank& bank, std::size_t split, SplitRole role, std::size_t n_way,
                              std::size_t k_shot, std::uint64_t seed) {
  const ClassSplit& sp = bank.split(split);
  return sample_episode(bank, role == SplitRole::base ? sp.base : sp.novel, n_way, k_shot, seed);
}

}  // namespace mmfss
