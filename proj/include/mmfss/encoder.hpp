#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmfss/checkpoint.hpp"
#include "mmfss/nn.hpp"
#include "mmfss/optim.hpp"
#include "mmfss/spatial.hpp"
#include "mmfss/synthdata.hpp"

namespace mmfss {

struct EncoderConfig {
  std::vector<std::size_t> widths{96, 192};  // backbone block widths; the last one is D
  std::size_t knn_k = 16;
  std::size_t dim_t = 512;
  std::uint64_t seed = 0;

  std::size_t dim() const { return widths.back(); }

  void validate() const {
    if (widths.empty() || std::find(widths.begin(), widths.end(), 0u) != widths.end()) {
      throw ConfigError("backbone widths must be non-empty and positive");
    }
    if (knn_k < 1) throw ConfigError("knn.k must be at least 1");
    if (dim_t < 1) throw ConfigError("dims.Dt must be positive");
  }

  nlohmann::json to_json() const { return {{"widths", widths}, {"knn_k", knn_k}, {"dim_t", dim_t}, {"seed", seed}}; }
  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    c.knn_k = j.at("knn_k").get<std::size_t>();
    c.dim_t = j.at("dim_t").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

inline constexpr std::size_t kEncoderInputWidth = 6;

/// Per-cloud inputs that depend only on geometry: (rgb, offset from the k-NN centroid)
/// per point and the k-NN mean-aggregation operator.
struct PreparedCloud {
  Tensor coords;
  Tensor inputs;  // M x 6
  std::shared_ptr<const SparseRows> knn_mean;

  std::size_t size() const { return coords.dim(0); }
};

inline PreparedCloud prepare_cloud(const LabeledCloud& cloud, std::size_t k) {
  cloud.validate();
  const std::size_t m = cloud.size();
  auto nbrs = spatial::knn(cloud.coords, k);
  auto agg = std::make_shared<SparseRows>();
  agg->cols = m;
  Tensor inputs({m, kEncoderInputWidth});
  for (std::size_t i = 0; i < m; ++i) {
    const double w = 1.0 / static_cast<double>(nbrs[i].size());
    std::array<double, 3> centroid{};
    for (std::size_t j : nbrs[i]) {
      agg->push(j, w);
      for (std::size_t a = 0; a < 3; ++a) centroid[a] += w * cloud.coords(j, a);
    }
    agg->end_row();
    for (std::size_t a = 0; a < 3; ++a) {
      inputs(i, a) = cloud.colors(i, a);
      inputs(i, 3 + a) = cloud.coords(i, a) - centroid[a];
    }
  }
  return {cloud.coords, std::move(inputs), std::move(agg)};
}

/// Shared point backbone with the intermodal (IF) and unimodal (UF) heads.
///
/// Each backbone block is h = relu(x A), then relu([h, knn_mean(h)] B). The IF head maps
/// D -> D -> Dt and the UF head D -> D -> D, both with a ReLU in between.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0xe1c0de));
    std::size_t in = kEncoderInputWidth;
    for (std::size_t b = 0; b < cfg_.widths.size(); ++b) {
      const std::size_t w = cfg_.widths[b];
      const std::string name = "backbone.block" + std::to_string(b);
      blocks_.push_back({Linear(params_, name + ".point", in, w, rng), Linear(params_, name + ".mix", 2 * w, w, rng)});
      in = w;
    }
    if_head_ = Mlp(params_, "if_head", {cfg_.dim(), cfg_.dim(), cfg_.dim_t}, rng);
    uf_head_ = Mlp(params_, "uf_head", {cfg_.dim(), cfg_.dim(), cfg_.dim()}, rng);
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  static Encoder from_checkpoint(const Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "encoder") throw FormatError("checkpoint is not an encoder");
    Encoder e(EncoderConfig::from_json(ck.meta.at("config")));
    for (auto& [name, var] : e.params_) {
      const Tensor& t = ck.tensor(name);
      if (t.shape() != var.shape()) throw FormatError("encoder checkpoint shape mismatch for " + name);
      var.mutable_value() = t;
    }
    e.frozen_ = ck.meta.value("frozen", false);
    return e;
  }

  Checkpoint to_checkpoint() const {
    return Checkpoint::from_store(params_, {{"kind", "encoder"}, {"config", cfg_.to_json()}, {"frozen", frozen_}});
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim(); }
  std::size_t dim_t() const { return cfg_.dim_t; }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Backbone and IF head: the parameters trained by alignment pretraining.
  std::vector<Var> backbone_if_params() const {
    std::vector<Var> out;
    for (const auto& [name, v] : params_)
      if (name.rfind("uf_head", 0) != 0) out.push_back(v);
    return out;
  }

  std::vector<Var> uf_params() const {
    std::vector<Var> out;
    for (const auto& [name, v] : params_)
      if (name.rfind("uf_head", 0) == 0) out.push_back(v);
    return out;
  }

  PreparedCloud prepare(const LabeledCloud& cloud) const { return prepare_cloud(cloud, cfg_.knn_k); }

  /// F = backbone(X), M x D.
  Var encode(const PreparedCloud& pc) const {
    Var x = constant(pc.inputs);
    for (const auto& blk : blocks_) {
      Var h = relu(blk.point(x));
      x = relu(blk.mix(concat_cols({h, sparse_aggregate(pc.knn_mean, h)})));
    }
    return x;
  }

  Var if_head(const Var& f) const { return check_width(if_head_(f), cfg_.dim_t); }
  Var uf_head(const Var& f) const { return check_width(uf_head_(f), cfg_.dim()); }

 private:
  struct Block {
    Linear point;
    Linear mix;
  };

  static Var check_width(Var v, std::size_t w) {
    if (v.dim(1) != w) throw ContractError("head produced width " + std::to_string(v.dim(1)));
    return v;
  }

  EncoderConfig cfg_;
  ParamStore params_;
  std::vector<Block> blocks_;
  Mlp if_head_;
  Mlp uf_head_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Pinhole projection

/// Intrinsics M_int (3x3, upper triangular) and world-to-camera extrinsics M_ext (3x4).
struct CameraModel {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> extrinsics = Eigen::Matrix<double, 3, 4>::Identity();
  int height = 480;
  int width = 640;

  void validate() const {
    if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0) {
      throw ConfigError("camera intrinsics must be upper triangular");
    }
    if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (height <= 0 || width <= 0) throw ConfigError("camera image size must be positive");
  }
};

struct Pixel {
  double u;
  double v;
};

/// u~ = M_int * M_ext * p~ followed by the perspective divide. Empty when the point sits
/// at or behind the camera or lands outside [0, W) x [0, H).
inline std::optional<Pixel> project_to_pixel(const Eigen::Vector3d& point, const CameraModel& cam) {
  cam.validate();
  const Eigen::Vector3d cam_pt = cam.extrinsics * point.homogeneous();
  if (!(cam_pt.z() > 0.0)) return std::nullopt;
  const Eigen::Vector3d h = cam.intrinsics * cam_pt;
  const Pixel px{h.x() / h.z(), h.y() / h.z()};
  if (px.u < 0.0 || px.v < 0.0 || px.u >= cam.width || px.v >= cam.height) return std::nullopt;
  return px;
}

// ---------------------------------------------------------------------------
// Alignment pretraining

inline std::shared_ptr<const SparseRows> row_selector(std::span<const std::size_t> rows, std::size_t source_rows) {
  auto s = std::make_shared<SparseRows>();
  s->cols = source_rows;
  for (std::size_t r : rows) {
    if (r >= source_rows) throw ContractError("row index out of range");
    s->push(r, 1.0);
    s->end_row();
  }
  return s;
}

/// Mean over matched points of 1 - cos(f3d_i, teacher_i).
inline Var alignment_loss(const Var& f3d, const Tensor& teacher, std::span<const std::size_t> matched) {
  if (matched.empty()) throw TrainingError("alignment loss needs at least one matched point");
  if (f3d.shape() != teacher.shape()) throw DimensionError("alignment loss: feature/teacher shapes differ");
  auto sel = row_selector(matched, f3d.dim(0));
  Var cos = row_cosine(sparse_aggregate(sel, f3d), constant(apply_sparse(*sel, teacher)));
  return sub(constant(Tensor::scalar(1.0)), mean(cos));
}

struct PretrainConfig {
  double lr = 0.006;
  double weight_decay = 0.01;
  std::size_t epochs = 20;
  double match_fraction = 1.0;  // share of points treated as having a 2D correspondence
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

struct AlignmentSample {
  PreparedCloud cloud;
  Tensor teacher;
};

inline double mean_alignment_loss(const Encoder& enc, const std::vector<AlignmentSample>& samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    std::vector<std::size_t> all(s.cloud.size());
    std::iota(all.begin(), all.end(), 0);
    total += alignment_loss(enc.if_head(enc.encode(s.cloud)), s.teacher, all).value().item();
  }
  return total / static_cast<double>(samples.size());
}

/// Fits backbone + IF head to the teacher features with AdamW, one scene per step, then
/// freezes them. The UF head is untouched.
inline PretrainReport pretrain(Encoder& enc, const std::vector<AlignmentSample>& train,
                               const std::vector<AlignmentSample>& holdout, const PretrainConfig& cfg) {
  if (enc.frozen()) throw ContractError("encoder is already frozen");
  if (train.empty() && cfg.epochs > 0) throw TrainingError("pretraining needs at least one scene");
  PretrainReport rep;
  rep.initial_holdout_loss = mean_alignment_loss(enc, holdout);
  AdamW opt(enc.backbone_if_params(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x9e7a));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s : order) {
      const auto& sample = train[s];
      std::vector<std::size_t> matched;
      std::bernoulli_distribution keep(cfg.match_fraction);
      for (std::size_t i = 0; i < sample.cloud.size(); ++i)
        if (cfg.match_fraction >= 1.0 || keep(rng)) matched.push_back(i);
      if (matched.empty()) matched.push_back(0);
      Var loss = alignment_loss(enc.if_head(enc.encode(sample.cloud)), sample.teacher, matched);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) throw TrainingError("pretraining diverged (non-finite alignment loss)");
      for (Var v : enc.backbone_if_params()) v.zero_grad();
      backward(loss);
      opt.step();
      total += lv;
      ++rep.steps;
    }
    rep.epoch_loss.push_back(total / static_cast<double>(train.size()));
  }
  rep.final_holdout_loss = mean_alignment_loss(enc, holdout);
  enc.freeze();
  return rep;
}

}  // namespace mmfss
