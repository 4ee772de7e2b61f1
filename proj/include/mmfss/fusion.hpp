#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfss/autograd.hpp"
#include "mmfss/checkpoint.hpp"
#include "mmfss/nn.hpp"
#include "mmfss/spatial.hpp"
#include "mmfss/util.hpp"

namespace mmfss {

enum class GateActivation { linear, sigmoid };

inline GateActivation parse_gate(const std::string& s) {
  if (s == "linear") return GateActivation::linear;
  if (s == "sigmoid") return GateActivation::sigmoid;
  throw ConfigError("unknown gate activation '" + s + "' (expected linear|sigmoid)");
}
inline const char* gate_name(GateActivation g) { return g == GateActivation::linear ? "linear" : "sigmoid"; }

struct FusionConfig {
  std::size_t n_way = 1;
  std::size_t n_p = 100;
  std::size_t dim = 192;
  std::size_t blocks = 2;
  std::size_t kernel_points = 15;
  double radius_scale = 2.5;
  bool mcf = true;       // add the intermodal correlation branch
  bool msf = true;       // inject semantic guidance through the gates
  bool use_if = true;    // intermodal correlations available
  bool use_uf = true;    // unimodal correlations available
  bool share_lin = false;
  GateActivation gate = GateActivation::linear;
  std::uint64_t seed = 0;

  std::size_t n_classes() const { return n_way + 1; }
  bool intermodal_branch() const { return mcf && use_if; }
  bool unimodal_branch() const { return use_uf; }

  void validate() const {
    if (n_way < 1) throw ConfigError("n_way must be at least 1");
    if (n_p < 1) throw ConfigError("fusion.np must be positive");
    if (dim < 1) throw ConfigError("dims.D must be positive");
    if (blocks < 1) throw ConfigError("fusion.K must be at least 1");
    if (kernel_points < 1) throw ConfigError("decoder.kernel_points must be at least 1");
    if (!(radius_scale > 0.0)) throw ConfigError("decoder.radius_scale must be positive");
    if (!intermodal_branch() && !unimodal_branch()) {
      throw ConfigError("no correlation branch left: enable heads.uf or (heads.if and mcf.enabled)");
    }
  }

  nlohmann::json to_json() const {
    return {{"n_way", n_way},     {"n_p", n_p},       {"dim", dim},
            {"blocks", blocks},   {"kernel_points", kernel_points},
            {"radius_scale", radius_scale},
            {"mcf", mcf},         {"msf", msf},       {"use_if", use_if},
            {"use_uf", use_uf},   {"share_lin", share_lin},
            {"gate", gate_name(gate)}, {"seed", seed}};
  }

  static FusionConfig from_json(const nlohmann::json& j) {
    FusionConfig c;
    c.n_way = j.at("n_way").get<std::size_t>();
    c.n_p = j.at("n_p").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.kernel_points = j.at("kernel_points").get<std::size_t>();
    c.radius_scale = j.at("radius_scale").get<double>();
    c.mcf = j.at("mcf").get<bool>();
    c.msf = j.at("msf").get<bool>();
    c.use_if = j.at("use_if").get<bool>();
    c.use_uf = j.at("use_uf").get<bool>();
    c.share_lin = j.at("share_lin").get<bool>();
    c.gate = parse_gate(j.at("gate").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Correlations and guidance

/// Cosine similarity of every query feature to every prototype row: N_Q x (N_C * N_P).
inline Var correlate(const Var& fq, const Var& protos) {
  if (fq.shape().size() != 2 || protos.shape().size() != 2 || fq.dim(1) != protos.dim(1)) {
    throw ContractError("correlate: feature widths differ (" + shape_str(fq.shape()) + " vs " + shape_str(protos.shape()) + ")");
  }
  return cosine_rows(fq, protos);
}

/// G_q = F_q^i T^T, plain dot products.
inline Var semantic_guidance(const Var& fqi, const Tensor& text) {
  if (fqi.dim(1) != text.dim(1)) throw ContractError("semantic guidance: D_t mismatch");
  Tensor tt({text.dim(1), text.dim(0)});
  for (std::size_t c = 0; c < text.dim(0); ++c)
    for (std::size_t j = 0; j < text.dim(1); ++j) tt(j, c) = text(c, j);
  return matmul(fqi, constant(std::move(tt)));
}

/// Unit-sphere kernel points: the center plus a Fibonacci spiral.
inline Tensor kernel_point_layout(std::size_t p) {
  Tensor k({p, 3});
  const std::size_t shell = p - 1;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < shell; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(shell);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double th = golden * static_cast<double>(i);
    k(i + 1, 0) = rho * std::cos(th);
    k(i + 1, 1) = rho * std::sin(th);
    k(i + 1, 2) = z;
  }
  return k;
}

/// Neighbor/kernel-point weights for one query cloud: row (i * P + k) holds
/// max(0, 1 - |(x_j - x_i) - r k_hat| / r) / |N(i)| over the radius-r neighbors j of i.
struct KernelGeometry {
  std::shared_ptr<const SparseRows> weights;
  std::size_t points = 0;
  std::size_t kernel_points = 0;
  double radius = 0.0;
};

inline KernelGeometry build_kernel_geometry(const Tensor& coords, const Tensor& layout, double radius_scale) {
  const std::size_t m = coords.dim(0), p = layout.dim(0);
  double r = radius_scale * spatial::mean_nn_spacing(coords);
  if (!(r > 0.0)) r = 1.0;
  const auto nbrs = spatial::radius_neighbors(coords, r);
  auto s = std::make_shared<SparseRows>();
  s->cols = m;
  for (std::size_t i = 0; i < m; ++i) {
    const double inv = 1.0 / static_cast<double>(nbrs[i].size());
    for (std::size_t k = 0; k < p; ++k) {
      for (std::size_t j : nbrs[i]) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = coords(j, a) - coords(i, a) - r * layout(k, a);
          d2 += d * d;
        }
        const double h = 1.0 - std::sqrt(d2) / r;
        if (h > 0.0) s->push(j, h * inv);
      }
      s->end_row();
    }
  }
  return {std::move(s), m, p, r};
}

// ---------------------------------------------------------------------------
// Model

struct MsfBlock {
  Mlp gate;     // 2D -> D -> 1
  Linear q, k, v;
  Mlp mlp;      // D -> D -> D
};

class FusionModel {
 public:
  explicit FusionModel(FusionConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0xf05e));
    const std::size_t d = cfg_.dim, nc = cfg_.n_classes();
    lin_i_ = Linear(params_, "mcf.lin_i", cfg_.n_p, d, rng);
    lin_u_ = cfg_.share_lin ? lin_i_ : Linear(params_, "mcf.lin_u", cfg_.n_p, d, rng);
    for (std::size_t b = 0; b < cfg_.blocks; ++b) {
      const std::string n = "msf" + std::to_string(b);
      blocks_.push_back({Mlp(params_, n + ".gate", {2 * d, d, 1}, rng), Linear(params_, n + ".q", d, d, rng),
                         Linear(params_, n + ".k", d, d, rng), Linear(params_, n + ".v", d, d, rng),
                         Mlp(params_, n + ".mlp", {d, d, d}, rng)});
    }
    kp_ = Linear(params_, "decoder.kp", cfg_.kernel_points * nc * d, d, rng);
    head_ = Mlp(params_, "decoder.mlp", {d, d, nc}, rng);
    layout_ = kernel_point_layout(cfg_.kernel_points);
  }

  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;

  static FusionModel from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("fusion")) throw FormatError("checkpoint has no fusion config");
    FusionModel m(FusionConfig::from_json(ck.meta.at("fusion")));
    for (auto& [name, var] : m.params_) {
      const Tensor& t = ck.tensor(name);
      if (t.shape() != var.shape()) throw FormatError("fusion checkpoint shape mismatch for " + name);
      var.mutable_value() = t;
    }
    return m;
  }

  const FusionConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<MsfBlock>& blocks() { return blocks_; }
  const std::vector<MsfBlock>& blocks() const { return blocks_; }
  Linear& lin_i() { return lin_i_; }
  Linear& lin_u() { return lin_u_; }
  const Tensor& kernel_layout() const { return layout_; }

  KernelGeometry geometry(const Tensor& coords) const { return build_kernel_geometry(coords, layout_, cfg_.radius_scale); }

  /// C_0 = Lin_i(C^i) + Lin_u(C^u) on N_Q x N_C x N_P views; either branch may be off.
  Var mcf(const Var& ci, const Var& cu) const {
    const std::size_t nc = cfg_.n_classes(), np = cfg_.n_p;
    const Var& ref = cfg_.unimodal_branch() ? cu : ci;
    const std::size_t nq = ref.dim(0);
    auto project = [&](const Linear& lin, const Var& c) {
      if (c.shape() != Shape{nq, nc * np}) throw DimensionError("mcf: correlation shape " + shape_str(c.shape()));
      return lin(reshape(c, {nq * nc, np}));
    };
    Var out;
    if (cfg_.intermodal_branch()) out = project(lin_i_, ci);
    if (cfg_.unimodal_branch()) out = out ? add(out, project(lin_u_, cu)) : project(lin_u_, cu);
    return reshape(out, {nq, nc, cfg_.dim});
  }

  /// One MSF block on C (N_Q x N_C x D) with guidance G (N_Q x N_C).
  Var msf_block(std::size_t b, const Var& c, const Var& g) const {
    const MsfBlock& blk = blocks_.at(b);
    const std::size_t nq = c.dim(0), nc = c.dim(1), d = c.dim(2);
    if (g.shape() != Shape{nq, nc}) throw DimensionError("msf: guidance shape " + shape_str(g.shape()));
    Var flat = reshape(c, {nq * nc, d});
    Var cp = flat;
    if (cfg_.msf) {
      Var gcol = reshape(g, {nq * nc, 1});
      Var w = blk.gate(concat_cols({repeat_cols(gcol, d), flat}));
      if (cfg_.gate == GateActivation::sigmoid) w = sigmoid(w);
      cp = add(flat, mul(gcol, w));
    }
    Var attn = add(cp, attention_tokens(blk, cp, nq, nc));
    Var out = add(attn, blk.mlp(attn));
    return reshape(out, {nq, nc, d});
  }

  /// Linear attention over one token set (L x D).
  Var linear_attention(std::size_t b, const Var& tokens) const {
    const std::size_t l = tokens.dim(0);
    return reshape(attention_tokens(blocks_.at(b), tokens, l, 1), {l, cfg_.dim});
  }

  /// KPConv over flattened C_K rows, ReLU, then the MLP to N_C logits.
  Var decode(const Var& c, const KernelGeometry& geo) const {
    const std::size_t nq = c.dim(0), nc = c.dim(1), d = c.dim(2);
    if (geo.points != nq || geo.kernel_points != cfg_.kernel_points) throw DimensionError("decoder: geometry mismatch");
    Var agg = sparse_aggregate(geo.weights, reshape(c, {nq, nc * d}));
    Var h = relu(kp_(reshape(agg, {nq, geo.kernel_points * nc * d})));
    return head_(h);
  }

  /// C_0 -> C_K -> logits.
  Var forward(const Var& ci, const Var& cu, const Var& g, const KernelGeometry& geo) const {
    Var c = mcf(ci, cu);
    for (std::size_t b = 0; b < blocks_.size(); ++b) c = msf_block(b, c, g);
    return decode(c, geo);
  }

 private:
  // Tokens are the query points, independently for each class slice. `flat` rows are
  // ordered (point, class).
  Var attention_tokens(const MsfBlock& blk, const Var& flat, std::size_t nq, std::size_t nc) const {
    const std::size_t d = flat.dim(1);
    auto per_class = [&](const Var& x) { return permute3(reshape(x, {nq, nc, d}), {1, 0, 2}); };
    Var q = per_class(elu_plus_one(blk.q(flat)));
    Var k = per_class(elu_plus_one(blk.k(flat)));
    Var v = per_class(blk.v(flat));
    Var out = kernel_attention(q, k, v);  // nc x nq x d
    return reshape(permute3(out, {1, 0, 2}), {nq * nc, d});
  }

  FusionConfig cfg_;
  ParamStore params_;
  Linear lin_i_, lin_u_;
  std::vector<MsfBlock> blocks_;
  Linear kp_;
  Mlp head_;
  Tensor layout_;
};

inline Var meta_loss(const Var& logits, std::span<const int> labels) {
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1)) throw ContractError("label out of range for meta loss");
  return cross_entropy(logits, labels);
}

}  // namespace mmfss
