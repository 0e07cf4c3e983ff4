#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "rforge/composite.hpp"
#include "rforge/config.hpp"
#include "rforge/evalkit.hpp"
#include "rforge/net.hpp"
#include "rforge/scenegen.hpp"

// End-to-end orchestration: corpus -> dataset -> training -> evaluation, one
// run directory holding every artifact. All stage randomness derives from one
// seed through named sub-seeds so any stage can be reproduced on its own.

namespace rforge {

struct PipelineError : std::runtime_error {
  std::string stage;
  PipelineError(const std::string& stage_, const std::string& cause)
      : std::runtime_error("pipeline stage '" + stage_ + "' failed: " + cause), stage(stage_) {}
};

inline std::map<std::string, std::string> pipeline_defaults(const std::string& preset = "desk") {
  std::map<std::string, std::string> d = {
      {"scenes", "600"},     {"image_size", "128"},   {"instances", "2"},
      {"regime", "FullySupervised"}, {"per_target", "1"}, {"feather_band", "3"},
      {"holdout", "0.1"},    {"train_preset", "desk"}, {"seed", "0"},
      {"out", ""},
  };
  if (preset == "smoke") {
    d["scenes"] = "60";
    d["image_size"] = "64";
    d["train_preset"] = "smoke";
  } else if (preset != "desk") {
    throw ParamError("pipeline: unknown preset " + preset);
  }
  return d;
}

struct PipelineResult {
  std::filesystem::path run_dir;
  std::map<std::string, std::filesystem::path> artifacts;
  double held_out_auc = 0;
};

inline PipelineResult run_pipeline(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::path out = cfg.get("out");
  if (out.empty()) throw ParamError("pipeline: 'out' directory required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw IoError("pipeline: cannot create run directory " + out.string());

  PipelineResult result;
  result.run_dir = out;
  {
    std::ofstream resolved(out / "config.resolved", std::ios::binary);
    resolved << cfg.resolved_text();
  }

  std::string stage = "gen-corpus";
  try {
    // 1. corpus
    CorpusConfig ccfg;
    ccfg.scenes = int(cfg.get_int("scenes"));
    ccfg.width = ccfg.height = int(cfg.get_int("image_size"));
    ccfg.instances_per_scene = int(cfg.get_int("instances"));
    Corpus corpus = generate_corpus(ccfg, sub_seed(cfg.seed, "corpus"), out / "corpus");
    result.artifacts["corpus"] = out / "corpus" / "index.jsonl";

    // 2. dataset
    stage = "gen-dataset";
    Regime regime = parse_regime(cfg.get("regime"));
    DatasetOptions dopts;
    dopts.per_target = int(cfg.get_int("per_target"));
    dopts.feather_band = cfg.get_double("feather_band");
    DatasetManifest manifest =
        generate_dataset(corpus, regime, sub_seed(cfg.seed, "dataset"), dopts, out / "dataset");
    result.artifacts["manifest"] = out / "dataset" / "manifest.jsonl";

    // 3. training on the train split
    stage = "train";
    auto [train_split, held_split] = split_by_scene(manifest, cfg.get_double("holdout"));
    if (train_split.records.empty() || held_split.records.empty())
      throw ParamError("holdout split left an empty part");
    TrainConfig tcfg = train_preset(cfg.get("train_preset"));
    tcfg.seed = sub_seed(cfg.seed, "train");
    Network<float> net0 = build_network<float>(sub_seed(cfg.seed, "init"));
    TrainResult trained = train(net0, train_split, tcfg);
    save_network(trained.params, out / "model.rlnw");
    result.artifacts["model"] = out / "model.rlnw";
    {
      std::ofstream trace(out / "train_trace.jsonl", std::ios::binary);
      for (size_t i = 0; i < trained.loss_trace.size(); ++i) {
        nlohmann::ordered_json j;
        j["iteration"] = i;
        j["loss"] = trained.loss_trace[i];
        trace << j.dump() << "\n";
      }
    }

    // 4. evaluation on the held-out split
    stage = "evaluate";
    Network<double> scorer = network_cast<double>(trained.params);
    ScoredSet held_scores;
    std::ofstream report(out / "report.jsonl", std::ios::binary);
    for (const auto& r : held_split.records) {
      double s = forward_score(scorer, read_image(held_split.resolve(r)));
      held_scores.scores.push_back(s);
      held_scores.labels.push_back(r.label == "natural" ? 1 : 0);
      nlohmann::ordered_json j;
      j["path"] = r.path;
      j["label"] = r.label;
      j["score"] = s;
      report << j.dump() << "\n";
    }
    result.held_out_auc = roc_auc(held_scores);
    result.artifacts["report"] = out / "report.jsonl";
    {
      nlohmann::ordered_json metrics;
      metrics["held_out_auc"] = result.held_out_auc;
      metrics["train_records"] = train_split.records.size();
      metrics["held_out_records"] = held_split.records.size();
      std::ofstream mf(out / "metrics.json", std::ios::binary);
      mf << metrics.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::ofstream marker(out / "FAILED", std::ios::binary);
    marker << stage << ": " << e.what() << "\n";
    throw PipelineError(stage, e.what());
  }
  return result;
}

}  // namespace rforge
