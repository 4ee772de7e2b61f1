#pragma once

#include <map>
#include <mutex>
#include <vector>

#include "mmfss/encoder.hpp"
#include "mmfss/fusion.hpp"
#include "mmfss/prototypes.hpp"
#include "mmfss/synthdata.hpp"
#include "mmfss/tacc.hpp"
#include "mmfss/textbank.hpp"

namespace mmfss {

/// Frozen per-scene products: backbone and IF features never change once the encoder is
/// frozen, so they are computed once per scene.
struct SceneFeatures {
  Tensor coords;
  Tensor backbone;    // M x D
  Tensor intermodal;  // M x D_t
  std::optional<KernelGeometry> geometry;
};

class FeatureCache {
 public:
  FeatureCache(const Encoder& enc, const FusionModel& fusion) : enc_(enc), fusion_(fusion) {
    if (!enc.frozen()) throw ContractError("feature cache requires a frozen encoder");
  }

  const SceneFeatures& features(std::size_t scene, const LabeledCloud& cloud) {
    std::lock_guard lock(mu_);
    return entry(scene, cloud);
  }

  const SceneFeatures& with_geometry(std::size_t scene, const LabeledCloud& cloud) {
    std::lock_guard lock(mu_);
    SceneFeatures& sf = entry(scene, cloud);
    if (!sf.geometry) sf.geometry = fusion_.geometry(sf.coords);
    return sf;
  }

  std::size_t size() const { return cache_.size(); }

 private:
  SceneFeatures& entry(std::size_t scene, const LabeledCloud& cloud) {
    auto it = cache_.find(scene);
    if (it != cache_.end()) return it->second;
    const PreparedCloud pc = enc_.prepare(cloud);
    Var f = enc_.encode(pc);
    SceneFeatures sf{cloud.coords, f.value(), enc_.if_head(f).value(), std::nullopt};
    return cache_.emplace(scene, std::move(sf)).first->second;
  }

  const Encoder& enc_;
  const FusionModel& fusion_;
  std::map<std::size_t, SceneFeatures> cache_;
  std::mutex mu_;
};

struct QueryOutput {
  Var logits;       // N_Q x N_C
  Tensor guidance;  // G_q, N_Q x N_C
};

struct EpisodeOutput {
  std::vector<QueryOutput> queries;
  std::vector<std::vector<double>> gammas;  // [way][shot]
};

/// Full forward pass for one episode. `text` holds the episode's class embeddings in
/// canonical order (background first).
inline EpisodeOutput run_episode(const Encoder& enc, const FusionModel& fusion, FeatureCache& cache, const Episode& ep,
                                 const Tensor& text) {
  const FusionConfig& fc = fusion.config();
  if (ep.n_way != fc.n_way) {
    throw ConfigError("episode is " + std::to_string(ep.n_way) + "-way but the model was built for " +
                      std::to_string(fc.n_way) + "-way");
  }
  if (text.dim(0) != ep.n_classes()) throw DimensionError("text embedding rows differ from episode class count");

  EpisodeOutput out;
  std::vector<std::vector<ShotFeatures>> support;
  for (std::size_t n = 0; n < ep.n_way; ++n) {
    support.emplace_back();
    out.gammas.emplace_back();
    for (const auto& s : ep.support[n]) {
      const SceneFeatures& sf = cache.features(s.scene, s.cloud);
      support.back().push_back({&sf.coords, &s.mask, {constant(sf.intermodal), enc.uf_head(constant(sf.backbone))}});
      out.gammas.back().push_back(compute_gamma(sf.intermodal, text, s.mask, n + 1));
    }
  }
  const PrototypeSet protos = assemble_prototypes(support, fc.n_p);

  for (const auto& q : ep.query) {
    const SceneFeatures& sf = cache.with_geometry(q.scene, q.cloud);
    Var fqi = constant(sf.intermodal);
    Var ci = fc.intermodal_branch() ? correlate(fqi, protos.spaces[0]) : Var();
    Var cu = fc.unimodal_branch() ? correlate(enc.uf_head(constant(sf.backbone)), protos.spaces[1]) : Var();
    Var g = semantic_guidance(fqi, text);
    out.queries.push_back({fusion.forward(ci, cu, g, *sf.geometry), g.value()});
  }
  return out;
}

/// Mean cross-entropy over the episode's queries.
inline Var episode_loss(const EpisodeOutput& out, const Episode& ep) {
  Var total;
  for (std::size_t i = 0; i < out.queries.size(); ++i) {
    Var l = meta_loss(out.queries[i].logits, ep.query[i].labels);
    total = total ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(out.queries.size()));
}

}  // namespace mmfss
