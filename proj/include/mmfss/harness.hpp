#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mmfss/config.hpp"
#include "mmfss/model.hpp"
#include "mmfss/optim.hpp"

namespace mmfss {

// ---------------------------------------------------------------------------
// Workspace: scene bank plus embeddings

struct Workspace {
  SceneBank bank;
  EmbeddingBank embeddings;
};

inline void check_embedding_coverage(const Workspace& ws) {
  ws.embeddings.validate();
  for (const auto& name : ws.bank.class_names)
    if (!ws.embeddings.contains(name)) throw ConfigError("embedding file has no entry for class '" + name + "'");
}

inline void attach_teacher(Workspace& ws, const RunConfig& cfg) {
  ws.embeddings.build_teacher(cfg.real("teacher.misalignment"), mix_seed(cfg.seed(), 12));
}

inline Workspace make_workspace(const RunConfig& cfg, const EmbeddingBank* embeddings = nullptr) {
  Workspace ws;
  ws.bank = build_scene_bank(default_catalog(), default_splits(), cfg.bank(), mix_seed(cfg.seed(), 10));
  if (embeddings != nullptr) {
    ws.embeddings = *embeddings;
  } else {
    auto names = ws.bank.class_names;
    names.push_back(kBackgroundName);
    ws.embeddings = synth_embeddings(names, cfg.count("dims.Dt"), mix_seed(cfg.seed(), 11));
  }
  if (ws.embeddings.dim() != cfg.count("dims.Dt")) {
    throw ConfigError("embedding dim " + std::to_string(ws.embeddings.dim()) + " differs from dims.Dt " +
                      std::to_string(cfg.count("dims.Dt")));
  }
  check_embedding_coverage(ws);
  attach_teacher(ws, cfg);
  return ws;
}

inline void save_workspace(const Workspace& ws, const std::filesystem::path& dir) {
  save_scene_bank(ws.bank, dir);
  save_embeddings(ws.embeddings, dir / "embeddings.json");
}

inline Workspace load_workspace(const std::filesystem::path& dir, const RunConfig& cfg) {
  Workspace ws{load_scene_bank(dir), load_embeddings(dir / "embeddings.json")};
  if (ws.embeddings.dim() != cfg.count("dims.Dt")) {
    throw ConfigError("embedding dim " + std::to_string(ws.embeddings.dim()) + " differs from dims.Dt " +
                      std::to_string(cfg.count("dims.Dt")));
  }
  check_embedding_coverage(ws);
  attach_teacher(ws, cfg);
  return ws;
}

// ---------------------------------------------------------------------------
// Stage 1: alignment pretraining

inline Encoder run_pretrain(const RunConfig& cfg, const Workspace& ws, PretrainReport* report = nullptr) {
  Encoder enc(cfg.encoder());
  const double sigma = cfg.real("teacher.sigma");
  const std::size_t n = ws.bank.scenes.size();
  const auto n_hold = static_cast<std::size_t>(std::floor(cfg.real("pretrain.holdout") * static_cast<double>(n)));
  std::vector<AlignmentSample> train, hold;
  for (std::size_t s = 0; s < n; ++s) {
    const LabeledCloud& c = ws.bank.scenes[s];
    AlignmentSample a{enc.prepare(c), teacher_features(c, ws.embeddings, ws.bank.class_names, sigma, mix_seed(cfg.seed(), 100 + s))};
    (s + n_hold >= n ? hold : train).push_back(std::move(a));
  }
  PretrainReport rep = pretrain(enc, train, hold, cfg.pretrain());
  if (report != nullptr) *report = rep;
  return enc;
}

// ---------------------------------------------------------------------------
// Model checkpoints

struct LoadedModel {
  Encoder encoder;
  FusionModel fusion;
  ordered_json meta;
};

inline Checkpoint model_checkpoint(const Encoder& enc, const FusionModel& fusion, ordered_json meta) {
  meta["kind"] = "model";
  meta["encoder"] = enc.config().to_json();
  meta["encoder_frozen"] = enc.frozen();
  meta["fusion"] = fusion.config().to_json();
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& [name, v] : enc.params()) ck.params.emplace_back("encoder." + name, v.value());
  for (const auto& [name, v] : fusion.params()) ck.params.emplace_back("fusion." + name, v.value());
  return ck;
}

inline LoadedModel load_model(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "model") throw FormatError("checkpoint is not a model checkpoint");
  Checkpoint enc_ck, fus_ck;
  enc_ck.meta = {{"kind", "encoder"}, {"config", ck.meta.at("encoder")}, {"frozen", ck.meta.value("encoder_frozen", true)}};
  fus_ck.meta = {{"fusion", ck.meta.at("fusion")}};
  for (const auto& [name, t] : ck.params) {
    if (name.rfind("encoder.", 0) == 0) enc_ck.params.emplace_back(name.substr(8), t);
    else if (name.rfind("fusion.", 0) == 0) fus_ck.params.emplace_back(name.substr(7), t);
    else throw FormatError("unexpected parameter '" + name + "' in model checkpoint");
  }
  return {Encoder::from_checkpoint(enc_ck), FusionModel::from_checkpoint(fus_ck), ck.meta};
}

// ---------------------------------------------------------------------------
// Stage 2: meta-training

struct MetaTrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
  std::vector<std::filesystem::path> saved;  // periodic checkpoints still on disk
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t episode) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_%06zu.json", episode);
  return dir / name;
}

/// Trains the UF head, fusion and decoder on base-class episodes. The encoder must be frozen;
/// its backbone and IF parameters are never handed to the optimizer.
inline MetaTrainResult meta_train(const RunConfig& cfg, const Workspace& ws, const Encoder& enc,
                                  const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr) {
  if (!enc.frozen()) throw ContractError("meta-training requires a pretrained, frozen encoder");
  cfg.validate();
  cfg.validate_split(ws.bank);
  const MetaTrainConfig mc = cfg.meta();
  const std::size_t split = cfg.count("split"), n_way = cfg.count("n_way"), k_shot = cfg.count("k_shot");
  const ClassSplit& sp = ws.bank.split(split);

  FusionModel fusion(cfg.fusion(n_way));
  FeatureCache cache(enc, fusion);
  std::vector<Var> params = enc.uf_params();
  for (const Var& v : fusion.params().vars()) params.push_back(v);
  AdamW opt(params, {.lr = mc.lr, .weight_decay = mc.weight_decay});

  ordered_json meta = {{"train_classes", sp.base}, {"split", split},        {"n_way", n_way},
                       {"k_shot", k_shot},         {"episodes", 0},         {"seed", cfg.seed()},
                       {"config_hash", cfg.hash()}, {"config", cfg.values()}};
  auto snapshot = [&](std::size_t done) {
    meta["episodes"] = done;
    return model_checkpoint(enc, fusion, meta);
  };
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  MetaTrainResult res;
  double running = 0.0;
  for (std::size_t e = 0; e < mc.episodes; ++e) {
    const Episode ep = sample_episode(ws.bank, sp.base, n_way, k_shot, mix_seed(cfg.seed(), 0x7a110000 + e));
    const EpisodeOutput out = run_episode(enc, fusion, cache, ep, ws.embeddings.matrix(ep.class_names));
    Var loss = episode_loss(out, ep);
    const double lv = loss.value().item();
    auto diverge = [&](const std::string& why) {
      if (!out_dir.empty()) {
        Checkpoint diag = snapshot(e);
        diag.meta["diverged_at"] = e;
        diag.meta["reason"] = why;
        diag.save((out_dir / "diverged.json").string());
      }
      throw TrainingError("meta-training diverged at episode " + std::to_string(e) + " (" + why + ")");
    };
    if (!std::isfinite(lv)) diverge("non-finite loss");
    for (Var& v : params) v.zero_grad();
    backward(loss);
    try {
      opt.step();
    } catch (const TrainingError& err) {
      diverge(err.what());
    }
    res.losses.push_back(lv);
    running = e == 0 ? lv : 0.98 * running + 0.02 * lv;
    if (log != nullptr && ((e + 1) % mc.log_every == 0 || e + 1 == mc.episodes)) {
      *log << nlohmann::json{{"type", "train"}, {"episode", e + 1}, {"loss", lv}, {"loss_ema", running}}.dump() << '\n';
    }
    if (!out_dir.empty() && (e + 1) % mc.checkpoint_every == 0) {
      const auto path = checkpoint_path(out_dir, e + 1);
      snapshot(e + 1).save(path.string());
      res.saved.push_back(path);
      while (res.saved.size() > mc.keep) {
        std::filesystem::remove(res.saved.front());
        res.saved.erase(res.saved.begin());
      }
    }
  }
  res.checkpoint = snapshot(mc.episodes);
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

struct IouResult {
  std::map<int, double> per_class;
  double mean = 0.0;
};

/// Accumulates TP / FP / FN per global class id.
struct IouTally {
  std::map<int, std::array<long, 3>> counts;

  void add(const std::vector<int>& pred, const std::vector<int>& truth, const std::vector<int>& local_to_global,
           const std::set<int>& targets) {
    if (pred.size() != truth.size()) throw DimensionError("prediction and label lengths differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int p = local_to_global.at(static_cast<std::size_t>(pred[i]));
      const int t = local_to_global.at(static_cast<std::size_t>(truth[i]));
      if (p == t) {
        if (targets.count(t)) ++counts[t][0];
      } else {
        if (targets.count(p)) ++counts[p][1];
        if (targets.count(t)) ++counts[t][2];
      }
    }
  }

  IouResult result() const {
    IouResult r;
    for (const auto& [c, n] : counts) {
      const long uni = n[0] + n[1] + n[2];
      if (uni > 0) r.per_class[c] = static_cast<double>(n[0]) / static_cast<double>(uni);
    }
    for (const auto& [_, v] : r.per_class) r.mean += v;
    if (!r.per_class.empty()) r.mean /= static_cast<double>(r.per_class.size());
    return r;
  }
};

/// IoU_c = TP / (TP + FP + FN) over `targets`; classes absent from both arrays are skipped.
inline IouResult miou(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes, const std::set<int>& targets) {
  std::vector<int> ident(static_cast<std::size_t>(n_classes));
  std::iota(ident.begin(), ident.end(), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes) {
      throw ContractError("label out of range for mIoU");
    }
  }
  IouTally t;
  t.add(pred, truth, ident, targets);
  return t.result();
}

struct GammaStats {
  double mean = 0.0, min = 0.0, max = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  std::string label;
  TaccConfig tacc;
  std::map<std::string, double> per_class_iou;
  double miou = 0.0;
  std::size_t episodes = 0;
  GammaStats gamma;
  double wall_clock = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;

  ordered_json to_json() const {
    ordered_json j;
    j["label"] = label;
    j["tacc"] = {{"enabled", tacc.enabled}, {"mode", tacc.mode.str()}, {"aggregation", aggregation_name(tacc.aggregation)},
                 {"softmax", tacc.softmax_both}};
    j["per_class_iou"] = per_class_iou;
    j["miou"] = miou;
    j["episodes"] = episodes;
    j["gamma"] = {{"mean", gamma.mean}, {"min", gamma.min}, {"max", gamma.max}, {"count", gamma.count}};
    j["wall_clock"] = wall_clock;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodePrediction {
  std::vector<Tensor> logits;    // per query, N_Q x N_C
  std::vector<Tensor> guidance;  // per query, G_q
  std::vector<std::vector<double>> gammas;  // [way][shot]
};

using Predictor = std::function<EpisodePrediction(const Episode&)>;

struct EvalResult {
  std::vector<MetricsReport> reports;  // tacc off first, then tacc on when requested
  std::vector<ordered_json> episode_lines;
  ordered_json summary;
  std::vector<std::vector<int>> combinations;
};

/// n_way-subsets of `classes` in lexicographic order of class id.
inline std::vector<std::vector<int>> class_combinations(std::vector<int> classes, std::size_t n_way) {
  std::sort(classes.begin(), classes.end());
  std::vector<std::vector<int>> out;
  if (n_way == 0 || n_way > classes.size()) return out;
  std::vector<std::size_t> idx(n_way);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    std::vector<int> combo;
    for (std::size_t i : idx) combo.push_back(classes[i]);
    out.push_back(combo);
    std::size_t i = n_way;
    while (i > 0 && idx[i - 1] == classes.size() - n_way + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < n_way; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

inline void check_split_leakage(const std::vector<int>& novel, const std::vector<int>& train_classes) {
  for (int c : novel)
    if (std::find(train_classes.begin(), train_classes.end(), c) != train_classes.end()) {
      throw SplitLeakageError("split leakage: evaluation class " + std::to_string(c) + " was seen during meta-training");
    }
}

inline std::size_t worker_count(const RunConfig& cfg) {
  if (deterministic_mode()) return 1;
  std::size_t t = cfg.count("eval.threads");
  if (t == 0) t = std::max(1u, std::thread::hardware_concurrency());
  return t;
}

/// Runs eval.episodes episodes per novel-class combination through `predict` and scores
/// them with and without TACC. Deterministic under (config, seed) for any worker count;
/// only wall_clock varies, and it is written as 0 in deterministic mode.
inline EvalResult evaluate_with(const RunConfig& cfg, const SceneBank& bank, const Predictor& predict,
                                const std::vector<int>& train_classes, std::ostream* sink = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  cfg.validate_split(bank);
  const ClassSplit& sp = bank.split(cfg.count("split"));
  check_split_leakage(sp.novel, train_classes);
  const std::size_t n_way = cfg.count("n_way"), k_shot = cfg.count("k_shot"), per_combo = cfg.count("eval.episodes");

  EvalResult res;
  res.combinations = class_combinations(sp.novel, n_way);
  struct Job {
    std::vector<int> targets;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& combo : res.combinations)
    for (std::size_t e = 0; e < per_combo; ++e) jobs.push_back({combo, mix_seed(cfg.seed(), 0xe7a10000 + jobs.size())});

  std::vector<Episode> episodes(jobs.size());
  std::vector<EpisodePrediction> preds(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex fail_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        episodes[i] = make_episode(bank, jobs[i].targets, k_shot, jobs[i].seed);
        preds[i] = predict(episodes[i]);
      } catch (...) {
        std::lock_guard lock(fail_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t workers = std::min(worker_count(cfg), std::max<std::size_t>(1, jobs.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  const TaccConfig configured = cfg.tacc();
  std::vector<TaccConfig> variants{TaccConfig{false, configured.aggregation, configured.mode, configured.softmax_both}};
  if (configured.enabled) {
    if (cfg.flag("tacc.compare")) variants.push_back(configured);
    else variants = {configured};
  }
  std::vector<IouTally> tallies(variants.size());
  const std::set<int> targets(sp.novel.begin(), sp.novel.end());
  GammaStats gs;
  gs.min = 1.0;
  double gsum = 0.0;

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Episode& ep = episodes[i];
    const EpisodePrediction& pr = preds[i];
    std::vector<int> local_to_global{-1};
    local_to_global.insert(local_to_global.end(), ep.class_ids.begin(), ep.class_ids.end());
    ordered_json line = {{"type", "episode"}, {"index", i}, {"classes", ep.class_names}, {"class_ids", ep.class_ids}};
    std::vector<double> way_gamma;
    for (const auto& shots : pr.gammas) {
      const double g = aggregate_gamma(shots, configured.aggregation);
      way_gamma.push_back(g);
      gsum += g;
      gs.min = std::min(gs.min, g);
      gs.max = std::max(gs.max, g);
      ++gs.count;
    }
    line["gamma"] = way_gamma;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      IouTally ep_tally;
      for (std::size_t q = 0; q < ep.query.size(); ++q) {
        const CalibrationRecord rec = apply_tacc(pr.guidance[q], pr.logits[q], pr.gammas, variants[v]);
        const auto pred = row_argmax(rec.logits);
        tallies[v].add(pred, ep.query[q].labels, local_to_global, targets);
        ep_tally.add(pred, ep.query[q].labels, local_to_global, targets);
      }
      ordered_json iou = ordered_json::object();
      for (const auto& [c, val] : ep_tally.result().per_class) iou[bank.name_of(c)] = val;
      line[variants[v].enabled ? "tacc_on" : "tacc_off"] = {{"iou", iou}};
    }
    res.episode_lines.push_back(line);
  }
  gs.mean = gs.count ? gsum / static_cast<double>(gs.count) : 0.0;
  if (gs.count == 0) gs.min = 0.0;

  const double wall =
      deterministic_mode() ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (std::size_t v = 0; v < variants.size(); ++v) {
    MetricsReport r;
    r.label = variants[v].enabled ? "tacc_on" : "tacc_off";
    r.tacc = variants[v];
    const IouResult ir = tallies[v].result();
    for (const auto& [c, val] : ir.per_class) r.per_class_iou[bank.name_of(c)] = val;
    r.miou = ir.mean;
    r.episodes = jobs.size();
    r.gamma = gs;
    r.wall_clock = wall;
    r.config_hash = cfg.hash();
    r.seed = cfg.seed();
    res.reports.push_back(r);
  }
  res.summary = {{"type", "summary"},
                 {"episodes", jobs.size()},
                 {"n_way", n_way},
                 {"k_shot", k_shot},
                 {"split", cfg.count("split")},
                 {"combinations", res.combinations},
                 {"combination_order", "lexicographic"},
                 {"config_hash", cfg.hash()},
                 {"seed", cfg.seed()},
                 {"wall_clock", wall}};
  res.summary["reports"] = ordered_json::array();
  for (const auto& r : res.reports) res.summary["reports"].push_back(r.to_json());
  if (sink != nullptr) {
    for (const auto& l : res.episode_lines) *sink << l.dump() << '\n';
    *sink << res.summary.dump() << '\n';
  }
  return res;
}

inline Predictor model_predictor(const LoadedModel& model, const Workspace& ws, FeatureCache& cache) {
  return [&model, &ws, &cache](const Episode& ep) {
    const EpisodeOutput out = run_episode(model.encoder, model.fusion, cache, ep, ws.embeddings.matrix(ep.class_names));
    EpisodePrediction p;
    for (const auto& q : out.queries) {
      p.logits.push_back(q.logits.value());
      p.guidance.push_back(q.guidance);
    }
    p.gammas = out.gammas;
    return p;
  };
}

inline EvalResult evaluate(const RunConfig& cfg, const Workspace& ws, const LoadedModel& model, std::ostream* sink = nullptr) {
  if (model.fusion.config().n_way != cfg.count("n_way")) {
    throw ConfigError("checkpoint was trained " + std::to_string(model.fusion.config().n_way) + "-way, config asks for " +
                      std::to_string(cfg.count("n_way")) + "-way");
  }
  if (!model.meta.contains("train_classes")) throw FormatError("model checkpoint lacks train_classes");
  const auto train_classes = model.meta.at("train_classes").get<std::vector<int>>();
  FeatureCache cache(model.encoder, model.fusion);
  return evaluate_with(cfg, ws.bank, model_predictor(model, ws, cache), train_classes, sink);
}

// ---------------------------------------------------------------------------
// Ablation tables

struct AblationVariant {
  std::string name;
  std::vector<std::pair<std::string, nlohmann::json>> overrides;
  bool retrain = true;  // false: reuse the first trained model of the table
};

inline std::vector<AblationVariant> ablation_table(const std::string& table) {
  using V = std::vector<std::pair<std::string, nlohmann::json>>;
  if (table == "fusion") {
    return {{"baseline", V{{"mcf.enabled", false}, {"msf.enabled", false}}},
            {"mcf", V{{"mcf.enabled", true}, {"msf.enabled", false}}},
            {"msf", V{{"mcf.enabled", false}, {"msf.enabled", true}}},
            {"mcf+msf", V{{"mcf.enabled", true}, {"msf.enabled", true}}}};
  }
  if (table == "heads") {
    return {{"if_only", V{{"heads.if", true}, {"heads.uf", false}}},
            {"uf_only", V{{"heads.if", false}, {"heads.uf", true}}},
            {"if+uf", V{{"heads.if", true}, {"heads.uf", true}}}};
  }
  if (table == "tacc") {
    return {{"1:0", V{{"tacc.mode", "fixed:1:0"}}, true},
            {"1:0.5", V{{"tacc.mode", "fixed:1:0.5"}}, false},
            {"1:1", V{{"tacc.mode", "fixed:1:1"}}, false},
            {"0:1", V{{"tacc.mode", "fixed:0:1"}}, false},
            {"gamma:1", V{{"tacc.mode", "adaptive"}}, false}};
  }
  if (table == "aggregation") {
    return {{"mean", V{{"tacc.aggregation", "mean"}}, true},
            {"max", V{{"tacc.aggregation", "max"}}, false},
            {"min", V{{"tacc.aggregation", "min"}}, false}};
  }
  if (table == "gate") {
    return {{"linear", V{{"msf.gate", "linear"}}}, {"sigmoid", V{{"msf.gate", "sigmoid"}}}};
  }
  if (table == "blocks") {
    return {{"K=1", V{{"fusion.K", 1}}}, {"K=2", V{{"fusion.K", 2}}}, {"K=4", V{{"fusion.K", 4}}}};
  }
  throw ConfigError("unknown ablation table '" + table + "' (expected fusion|heads|tacc|aggregation|gate|blocks)");
}

/// Meta-trains (when needed) and evaluates each variant on top of one pretrained encoder.
/// Emits one JSON object per variant.
inline std::vector<ordered_json> ablate(const RunConfig& base, const Workspace& ws, const Encoder& pretrained,
                                        const std::string& table, std::ostream* sink = nullptr) {
  const Checkpoint enc_ck = pretrained.to_checkpoint();
  std::optional<LoadedModel> model;
  std::vector<ordered_json> rows;
  for (const auto& v : ablation_table(table)) {
    RunConfig cfg = base;
    for (const auto& [k, val] : v.overrides) cfg.set(k, val);
    cfg.validate();
    if (v.retrain || !model) {
      Encoder enc = Encoder::from_checkpoint(enc_ck);
      model.emplace(load_model(meta_train(cfg, ws, enc).checkpoint));
    }
    const EvalResult er = evaluate(cfg, ws, *model);
    ordered_json row = {{"type", "ablation"}, {"table", table}, {"variant", v.name}, {"overrides", ordered_json::object()}};
    for (const auto& [k, val] : v.overrides) row["overrides"][k] = val;
    for (const auto& r : er.reports) row[r.label] = {{"miou", r.miou}, {"per_class_iou", r.per_class_iou}};
    row["config_hash"] = cfg.hash();
    if (sink != nullptr) *sink << row.dump() << '\n';
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mmfss
