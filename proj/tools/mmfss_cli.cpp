// mmfss: command-line driver for data generation, both training stages, evaluation and
// ablations.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include "mmfss/mmfss.hpp"

namespace fs = std::filesystem;
using namespace mmfss;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfigError = 2, kDivergence = 3, kLeakage = 4 };

struct Common {
  std::string preset = "desk";
  std::string config_file;
  std::map<std::string, std::string> overrides;
  bool print_config = false;
};

// Every RunConfig key becomes --<key>; n_way, k_shot, seed and split use the short
// --n-way / --k-shot / --seed / --split spellings.
void add_config_flags(CLI::App* sub, Common& c) {
  sub->add_option("--preset", c.preset, "Base configuration: desk or full")->capture_default_str();
  sub->add_option("--config", c.config_file, "JSON file with dotted or nested config keys");
  sub->add_flag("--print-config", c.print_config, "Print the effective configuration to stderr");
  static const std::map<std::string, std::string> renamed{
      {"n_way", "--n-way"}, {"k_shot", "--k-shot"}, {"seed", "--seed"}, {"split", "--split"}};
  const RunConfig defaults;
  for (const auto& key : defaults.keys()) {
    auto it = renamed.find(key);
    const std::string flag = it != renamed.end() ? it->second : "--" + key;
    sub->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.overrides[key] = v; },
                                          "config key " + key + " (default " + defaults.values().at(key).dump() + ")");
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = RunConfig::preset(c.preset);
  if (!c.config_file.empty()) cfg.merge_file(c.config_file);
  for (const auto& [k, v] : c.overrides) cfg.set_text(k, v);
  cfg.validate();
  if (c.print_config) std::cerr << cfg.values().dump(2) << '\n';
  return cfg;
}

std::unique_ptr<std::ostream> open_out(const std::string& path) {
  if (path.empty() || path == "-") return nullptr;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw FormatError("cannot write " + path);
  return f;
}

Encoder load_encoder(const std::string& path) {
  Encoder enc = Encoder::from_checkpoint(Checkpoint::load(path));
  if (!enc.frozen()) throw ConfigError("encoder checkpoint " + path + " is not frozen; run pretrain first");
  return enc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal few-shot 3D point cloud segmentation"};
  app.require_subcommand(1);
  Common common;

  std::string out, data, encoder_path, checkpoint, metrics, log_path, table, embeddings;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene bank and class embeddings");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--embeddings", embeddings, "Use this embedding file instead of synthetic embeddings");
  add_config_flags(gen, common);

  auto* pre = app.add_subcommand("pretrain", "Align backbone + IF head to teacher features, then freeze them");
  pre->add_option("--data", data, "Scene bank directory")->required();
  pre->add_option("--out", out, "Encoder checkpoint to write")->required();
  add_config_flags(pre, common);

  auto* meta = app.add_subcommand("meta-train", "Episodic training of UF head, fusion and decoder on base classes");
  meta->add_option("--data", data, "Scene bank directory")->required();
  meta->add_option("--encoder", encoder_path, "Pretrained encoder checkpoint")->required();
  meta->add_option("--out-dir", out, "Directory for periodic checkpoints and model.json")->required();
  meta->add_option("--log", log_path, "Training loss log (JSONL); default <out-dir>/train_log.jsonl");
  add_config_flags(meta, common);

  auto* ev = app.add_subcommand("eval", "Evaluate a model checkpoint on novel-class episodes");
  ev->add_option("--data", data, "Scene bank directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--metrics", metrics, "Metrics JSONL path; '-' or omitted writes to stdout");
  add_config_flags(ev, common);

  auto* abl = app.add_subcommand("ablate", "Train and evaluate one ablation table");
  abl->add_option("--data", data, "Scene bank directory")->required();
  abl->add_option("--encoder", encoder_path, "Pretrained encoder checkpoint")->required();
  abl->add_option("--table", table, "fusion | heads | tacc | aggregation | gate | blocks")->required();
  abl->add_option("--out", out, "Results JSONL path; '-' or omitted writes to stdout");
  add_config_flags(abl, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    const RunConfig cfg = resolve(common);

    if (gen->parsed()) {
      std::unique_ptr<EmbeddingBank> emb;
      if (!embeddings.empty()) emb = std::make_unique<EmbeddingBank>(load_embeddings(embeddings));
      const Workspace ws = make_workspace(cfg, emb.get());
      save_workspace(ws, out);
      std::size_t points = 0;
      for (const auto& s : ws.bank.scenes) points += s.size();
      std::cerr << "wrote " << ws.bank.scenes.size() << " scenes (" << points << " points) to " << out << '\n';
    } else if (pre->parsed()) {
      const Workspace ws = load_workspace(data, cfg);
      PretrainReport rep;
      Encoder enc = run_pretrain(cfg, ws, &rep);
      Checkpoint ck = enc.to_checkpoint();
      ck.meta["config_hash"] = cfg.hash();
      ck.meta["holdout_loss"] = {rep.initial_holdout_loss, rep.final_holdout_loss};
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      ck.save(out);
      std::cerr << "pretrain: " << rep.steps << " steps, holdout alignment loss " << rep.initial_holdout_loss << " -> "
                << rep.final_holdout_loss << '\n';
    } else if (meta->parsed()) {
      const Workspace ws = load_workspace(data, cfg);
      const Encoder enc = load_encoder(encoder_path);
      fs::create_directories(out);
      std::ofstream log(log_path.empty() ? (fs::path(out) / "train_log.jsonl").string() : log_path);
      MetaTrainResult res = meta_train(cfg, ws, enc, out, &log);
      res.checkpoint.save((fs::path(out) / "model.json").string());
      std::cerr << "meta-train: " << res.losses.size() << " episodes";
      if (!res.losses.empty()) std::cerr << ", final loss " << res.losses.back();
      std::cerr << '\n';
    } else if (ev->parsed()) {
      const Workspace ws = load_workspace(data, cfg);
      const LoadedModel model = load_model(Checkpoint::load(checkpoint));
      auto file = open_out(metrics);
      const EvalResult res = evaluate(cfg, ws, model, file ? file.get() : &std::cout);
      for (const auto& r : res.reports) std::cerr << r.label << ": mIoU " << r.miou << " over " << r.episodes << " episodes\n";
    } else if (abl->parsed()) {
      const Workspace ws = load_workspace(data, cfg);
      const Encoder enc = load_encoder(encoder_path);
      auto file = open_out(out);
      ablate(cfg, ws, enc, table, file ? file.get() : &std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const SplitLeakageError& e) {
    std::cerr << e.what() << '\n';
    return kLeakage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
