// rforge: realism-model pipeline tool.
//
//   gen-corpus   procedural scene corpus with masks and casts
//   gen-dataset  natural + composite pretext dataset in one of four regimes
//   train        pretext training (SGD + momentum)
//   score        realism score of one image
//   features     penultimate-layer features for a manifest
//   adjust       color-compatibility optimization of a composite
//   mine         hard-negative mining rounds
//   select       best-fitting object selection
//   evaluate     auc | cv | thurstone | report
//   report       ranked score manifest
//   pipeline     corpus -> dataset -> train -> evaluate in one run directory

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rforge/coloropt.hpp"
#include "rforge/composite.hpp"
#include "rforge/config.hpp"
#include "rforge/evalkit.hpp"
#include "rforge/net.hpp"
#include "rforge/objselect.hpp"
#include "rforge/pipeline.hpp"
#include "rforge/scenegen.hpp"

using namespace rforge;
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CliState {
  bool json = false;
};

TrainConfig load_train_config(const std::string& preset, uint64_t seed) {
  TrainConfig cfg;
  if (fs::exists(preset)) {
    for (const auto& [k, v] : parse_config_file(preset)) {
      if (k == "rate") cfg.rate = std::stod(v);
      else if (k == "decay") cfg.decay = std::stod(v);
      else if (k == "decay_step") cfg.decay_step = std::stoi(v);
      else if (k == "momentum") cfg.momentum = std::stod(v);
      else if (k == "batch") cfg.batch = std::stoi(v);
      else if (k == "max_iterations") cfg.max_iterations = std::stoi(v);
      else if (k == "head_lr_mult") cfg.head_lr_mult = std::stod(v);
      else throw ParamError("train preset file: unknown key " + k);
    }
  } else {
    cfg = train_preset(preset);
  }
  cfg.seed = seed;
  return cfg;
}

std::vector<ordered_json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ordered_json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(ordered_json::parse(line));
  }
  return rows;
}

int label_to_binary(const json& v) {
  if (v.is_number()) return v.get<int>() != 0;
  std::string s = v.get<std::string>();
  if (s == "natural" || s == "realistic" || s == "1") return 1;
  if (s == "composite" || s == "unrealistic" || s == "0") return 0;
  throw ParamError("unrecognized label: " + s);
}

ordered_json adjust_report(const ColorAdjust& g, double e_identity, double e_star, int starts,
                           int iterations) {
  ordered_json j;
  j["g"] = {{"gains", g.gains}, {"biases", g.biases}};
  j["E_identity"] = e_identity;
  j["E_star"] = e_star;
  j["starts"] = starts;
  j["iterations"] = iterations;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discriminative realism model pipeline"};
  app.require_subcommand(1);
  CliState state;
  app.add_flag("--json", state.json, "machine-readable output");

  // ---- gen-corpus
  auto* cmd_corpus = app.add_subcommand("gen-corpus", "generate a labeled scene corpus");
  std::string corpus_out;
  int corpus_scenes = 600, corpus_size = 128, corpus_instances = 2;
  uint64_t corpus_seed = 0;
  cmd_corpus->add_option("--out", corpus_out, "output directory")->required();
  cmd_corpus->add_option("--scenes", corpus_scenes, "scene count");
  cmd_corpus->add_option("--size", corpus_size, "square image size");
  cmd_corpus->add_option("--instances", corpus_instances, "objects per scene");
  cmd_corpus->add_option("--seed", corpus_seed, "corpus seed");

  // ---- gen-dataset
  auto* cmd_dataset = app.add_subcommand("gen-dataset", "generate a pretext dataset");
  std::string ds_regime = "FullySupervised", ds_corpus, ds_out;
  uint64_t ds_seed = 0;
  int ds_per_target = 1;
  double ds_band = 3;
  cmd_dataset->add_option("--regime", ds_regime,
                          "FullySupervised|PartiallySupervised|Unsupervised|RandomPaste");
  cmd_dataset->add_option("--corpus", ds_corpus, "corpus directory")->required();
  cmd_dataset->add_option("--seed", ds_seed, "dataset seed");
  cmd_dataset->add_option("--out", ds_out, "output directory")->required();
  cmd_dataset->add_option("--per-target", ds_per_target, "composites per target");
  cmd_dataset->add_option("--feather-band", ds_band, "feather band in pixels");

  // ---- train
  auto* cmd_train = app.add_subcommand("train", "train the pretext model");
  std::string tr_manifest, tr_preset = "desk", tr_out = "model.rlnw";
  uint64_t tr_seed = 0;
  cmd_train->add_option("--manifest", tr_manifest, "dataset manifest")->required();
  cmd_train->add_option("--preset", tr_preset, "preset name or key=value file");
  cmd_train->add_option("--out", tr_out, "weights output path");
  cmd_train->add_option("--seed", tr_seed, "training seed");

  // ---- score
  auto* cmd_score = app.add_subcommand("score", "realism score of an image");
  std::string sc_model, sc_image;
  cmd_score->add_option("--model", sc_model)->required();
  cmd_score->add_option("--image", sc_image)->required();

  // ---- features
  auto* cmd_features = app.add_subcommand("features", "penultimate-layer features");
  std::string ft_model, ft_manifest, ft_out;
  cmd_features->add_option("--model", ft_model)->required();
  cmd_features->add_option("--manifest", ft_manifest)->required();
  cmd_features->add_option("--out", ft_out)->required();

  // ---- adjust
  auto* cmd_adjust = app.add_subcommand("adjust", "optimize the foreground color adjustment");
  std::string aj_model, aj_bg, aj_fg, aj_alpha, aj_out, aj_baseline = "cnn", aj_report;
  double aj_w = 50.0;
  int aj_starts = 8;
  uint64_t aj_seed = 0;
  cmd_adjust->add_option("--model", aj_model)->required();
  cmd_adjust->add_option("--bg", aj_bg, "background image")->required();
  cmd_adjust->add_option("--fg", aj_fg, "full-frame foreground image")->required();
  cmd_adjust->add_option("--alpha", aj_alpha, "alpha mask PNG")->required();
  cmd_adjust->add_option("--w", aj_w, "regularizer weight");
  cmd_adjust->add_option("--starts", aj_starts, "optimizer starts");
  cmd_adjust->add_option("--baseline", aj_baseline, "cutpaste|reinhard|cnn");
  cmd_adjust->add_option("--out", aj_out, "adjusted composite PNG")->required();
  cmd_adjust->add_option("--report", aj_report, "write the JSON report here too");
  cmd_adjust->add_option("--seed", aj_seed);

  // ---- mine
  auto* cmd_mine = app.add_subcommand("mine", "hard-negative mining rounds");
  std::string mn_model, mn_manifest, mn_out, mn_corpus;
  int mn_rounds = 3, mn_per_round = 24;
  double mn_w = 0.0;
  uint64_t mn_seed = 0;
  cmd_mine->add_option("--model", mn_model)->required();
  cmd_mine->add_option("--manifest", mn_manifest)->required();
  cmd_mine->add_option("--rounds", mn_rounds);
  cmd_mine->add_option("--out-dir", mn_out)->required();
  cmd_mine->add_option("--corpus", mn_corpus, "corpus root (derived from the manifest if omitted)");
  cmd_mine->add_option("--w", mn_w, "regularizer weight while mining");
  cmd_mine->add_option("--per-round", mn_per_round);
  cmd_mine->add_option("--seed", mn_seed);

  // ---- select
  auto* cmd_select = app.add_subcommand("select", "best-fitting object selection");
  std::string se_model, se_scene, se_pool, se_mode = "realism", se_report;
  int se_instance = 0, se_k = 25;
  bool se_adjust = false;
  uint64_t se_seed = 0;
  cmd_select->add_option("--model", se_model)->required();
  cmd_select->add_option("--scene", se_scene, "target scene id")->required();
  cmd_select->add_option("--instance", se_instance, "target instance index");
  cmd_select->add_option("--pool", se_pool, "corpus directory providing candidates")->required();
  cmd_select->add_option("--mode", se_mode, "realism|shape|random");
  cmd_select->add_option("--k", se_k, "candidate pool size (by shape similarity)");
  cmd_select->add_flag("--adjust", se_adjust, "run the color optimization per candidate");
  cmd_select->add_option("--out-report", se_report, "ranking report JSONL")->required();
  cmd_select->add_option("--seed", se_seed);

  // ---- evaluate
  auto* cmd_eval = app.add_subcommand("evaluate", "evaluation statistics");
  cmd_eval->require_subcommand(1);
  auto* ev_auc = cmd_eval->add_subcommand("auc", "AUC of {score,label} rows");
  std::string ev_auc_scores;
  ev_auc->add_option("--scores", ev_auc_scores, "JSONL rows {score,label}")->required();
  auto* ev_cv = cmd_eval->add_subcommand("cv", "stratified k-fold SVM evaluation");
  std::string ev_cv_features;
  int ev_cv_folds = 10;
  double ev_cv_c = 1.0;
  uint64_t ev_cv_seed = 0;
  ev_cv->add_option("--features", ev_cv_features, "JSONL rows {features,label}")->required();
  ev_cv->add_option("--folds", ev_cv_folds);
  ev_cv->add_option("--C", ev_cv_c);
  ev_cv->add_option("--seed", ev_cv_seed);
  auto* ev_th = cmd_eval->add_subcommand("thurstone", "Case V scaling of pairwise judgments");
  std::string ev_th_pairs, ev_th_out;
  ev_th->add_option("--pairs", ev_th_pairs, "JSONL rows {item_a,item_b,wins_a,wins_b[,group]}")
      ->required();
  ev_th->add_option("--out", ev_th_out, "write per-item scores here");
  auto* ev_report = cmd_eval->add_subcommand("report", "ranked score manifest");
  std::string ev_rep_scores, ev_rep_out;
  ev_report->add_option("--scores", ev_rep_scores, "JSONL rows {id,score}")->required();
  ev_report->add_option("--out", ev_rep_out)->required();

  // ---- report (top-level alias)
  auto* cmd_report = app.add_subcommand("report", "ranked score manifest");
  std::string rp_scores, rp_out, rp_percentiles = "25,50,75,100";
  cmd_report->add_option("--scores", rp_scores, "JSONL rows {id,score}")->required();
  cmd_report->add_option("--out", rp_out)->required();
  cmd_report->add_option("--percentiles", rp_percentiles, "comma-separated band edges");

  // ---- pipeline
  auto* cmd_pipe = app.add_subcommand("pipeline", "corpus -> dataset -> train -> evaluate");
  std::string pl_preset = "desk", pl_config, pl_out;
  std::vector<std::string> pl_sets;
  uint64_t pl_seed = 0;
  bool pl_seed_given = false;
  cmd_pipe->add_option("--preset", pl_preset, "desk|smoke defaults");
  cmd_pipe->add_option("--config", pl_config, "key=value config file");
  cmd_pipe->add_option("--set", pl_sets, "key=value override (repeatable)");
  cmd_pipe->add_option("--out", pl_out, "run directory");
  cmd_pipe->add_option("--seed", pl_seed)->each([&](const std::string&) { pl_seed_given = true; });

  // let the global --json flag appear after a subcommand name too
  for (auto* sub : app.get_subcommands({})) {
    sub->fallthrough();
    for (auto* nested : sub->get_subcommands({})) nested->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_corpus) {
      CorpusConfig cfg;
      cfg.scenes = corpus_scenes;
      cfg.width = cfg.height = corpus_size;
      cfg.instances_per_scene = corpus_instances;
      Corpus corpus = generate_corpus(cfg, corpus_seed, corpus_out);
      size_t instances = 0;
      for (const auto& s : corpus.scenes) instances += s.instances.size();
      if (state.json) {
        ordered_json j;
        j["scenes"] = corpus.scenes.size();
        j["instances"] = instances;
        j["index"] = (fs::path(corpus_out) / "index.jsonl").string();
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "wrote " << corpus.scenes.size() << " scenes (" << instances
                  << " instances) under " << corpus_out << "\n";
      }
    } else if (*cmd_dataset) {
      Corpus corpus = load_corpus(ds_corpus);
      DatasetOptions opts;
      opts.per_target = ds_per_target;
      opts.feather_band = ds_band;
      DatasetManifest m = generate_dataset(corpus, parse_regime(ds_regime), ds_seed, opts, ds_out);
      size_t composites = 0;
      for (const auto& r : m.records) composites += (r.label == "composite");
      if (state.json) {
        ordered_json j;
        j["records"] = m.records.size();
        j["composites"] = composites;
        j["manifest"] = (fs::path(ds_out) / "manifest.jsonl").string();
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "wrote " << m.records.size() << " records (" << composites
                  << " composites) to " << ds_out << "/manifest.jsonl\n";
      }
    } else if (*cmd_train) {
      TrainConfig cfg = load_train_config(tr_preset, tr_seed);
      DatasetManifest manifest = load_manifest(tr_manifest);
      Network<float> net0 = build_network<float>(sub_seed(tr_seed, "init"));
      TrainResult result = train(net0, manifest, cfg);
      save_network(result.params, tr_out);
      double final_loss = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
      if (state.json) {
        ordered_json j;
        j["model"] = tr_out;
        j["iterations"] = result.loss_trace.size();
        j["final_loss"] = final_loss;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "trained " << result.loss_trace.size() << " iterations, final loss "
                  << final_loss << ", saved " << tr_out << "\n";
      }
    } else if (*cmd_score) {
      Network<double> net = network_cast<double>(load_network(sc_model));
      double s = forward_score(net, read_image(sc_image));
      if (state.json) {
        ordered_json j;
        j["score"] = s;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << s << "\n";
      }
    } else if (*cmd_features) {
      Network<float> net = load_network(ft_model);
      DatasetManifest manifest = load_manifest(ft_manifest);
      std::ofstream out(ft_out, std::ios::binary);
      if (!out) throw IoError("cannot write " + ft_out);
      for (const auto& r : manifest.records) {
        std::vector<float> f = extract_features(net, read_image(manifest.resolve(r)));
        ordered_json j;
        j["path"] = r.path;
        j["label"] = r.label;
        j["features"] = f;
        out << j.dump() << "\n";
      }
      if (!state.json)
        std::cout << "wrote features for " << manifest.records.size() << " records to " << ft_out
                  << "\n";
      else
        std::cout << ordered_json{{"records", manifest.records.size()}, {"out", ft_out}}.dump()
                  << "\n";
    } else if (*cmd_adjust) {
      Network<double> net = network_cast<double>(load_network(aj_model));
      Image bg = read_image(aj_bg), fg = read_image(aj_fg);
      // the alpha mask may be feathered: read gray values as fractions
      pngio::DecodedPng d = pngio::decode_png(read_file_bytes(aj_alpha));
      Mask alpha(d.width, d.height);
      for (size_t i = 0; i < alpha.v.size(); ++i)
        alpha.v[i] = float(d.samples[i * size_t(d.channels)]) / 255.f;
      CompositeProblem problem(fg, bg, alpha, aj_w);
      ColorAdjust g;
      double e_star = 0;
      int iterations = 0, starts_used = 0;
      double e_identity = energy(net, ColorAdjust::identity(), problem);
      if (aj_baseline == "cutpaste") {
        g = ColorAdjust::identity();
        e_star = e_identity;
      } else if (aj_baseline == "reinhard") {
        g = reinhard_match(problem);
        e_star = energy(net, g, problem);
      } else if (aj_baseline == "cnn") {
        OptimizeOptions opts;
        opts.starts = aj_starts;
        opts.seed = aj_seed;
        OptimizeResult res = optimize_color(net, problem, opts);
        g = res.adjust;
        e_star = res.energy;
        starts_used = int(res.starts.size());
        for (const auto& t : res.starts) iterations += t.iterations;
      } else {
        throw ParamError("adjust: unknown baseline " + aj_baseline);
      }
      write_png(aj_out, apply_adjust(g, problem));
      ordered_json rep = adjust_report(g, e_identity, e_star, starts_used, iterations);
      if (!aj_report.empty()) {
        std::ofstream rf(aj_report, std::ios::binary);
        rf << rep.dump() << "\n";
      }
      if (state.json) {
        std::cout << rep.dump() << "\n";
      } else {
        std::cout << "adjustment " << g.str() << "\n"
                  << "energy " << e_identity << " -> " << e_star << ", wrote " << aj_out << "\n";
      }
    } else if (*cmd_mine) {
      Network<float> model = load_network(mn_model);
      DatasetManifest manifest = load_manifest(mn_manifest);
      Corpus corpus =
          load_corpus(mn_corpus.empty() ? derive_corpus_root(manifest) : fs::path(mn_corpus));
      MiningConfig cfg;
      cfg.per_round = mn_per_round;
      cfg.w = mn_w;
      cfg.seed = mn_seed;
      cfg.work_dir = mn_out;
      std::vector<Network<float>> models =
          mine_hard_negatives(model, manifest, corpus, mn_rounds, cfg);
      ordered_json j;
      auto files = ordered_json::array();
      for (size_t k = 0; k < models.size(); ++k) {
        fs::path p = fs::path(mn_out) / ("model_iter" + std::to_string(k) + ".rlnw");
        save_network(models[k], p);
        files.push_back(p.string());
      }
      j["models"] = files;
      if (state.json) std::cout << j.dump() << "\n";
      else
        std::cout << "mined " << mn_rounds << " rounds, wrote " << models.size() << " models to "
                  << mn_out << "\n";
    } else if (*cmd_select) {
      Network<double> net = network_cast<double>(load_network(se_model));
      Corpus corpus = load_corpus(se_pool);
      std::vector<LabeledScene> scenes = load_all_scenes(corpus);
      size_t scene_idx = scenes.size();
      for (size_t i = 0; i < scenes.size(); ++i)
        if (scenes[i].scene_id == se_scene) scene_idx = i;
      if (scene_idx == scenes.size()) throw ParamError("select: unknown scene " + se_scene);
      const LabeledScene& bg = scenes[scene_idx];
      if (se_instance < 0 || size_t(se_instance) >= bg.instances.size())
        throw ParamError("select: instance index out of range");
      SelectionRequest request;
      request.target = bg.instances[size_t(se_instance)];
      request.mode = parse_selection_mode(se_mode);
      request.adjust = se_adjust;
      request.seed = se_seed;
      // candidate pool: the k most shape-similar same-category objects
      std::vector<ObjectRecord> all;
      for (const auto& s : scenes)
        for (const auto& inst : s.instances) all.push_back(inst);
      auto ranked = find_source_candidates(request.target, all, size_t(se_k));
      for (const auto& rc : ranked) request.pool.push_back(all[rc.pool_index]);
      if (request.pool.empty()) throw ParamError("select: no eligible candidates");
      SelectionResult result = select_best_object(net, request, scenes);
      std::ofstream out(se_report, std::ios::binary);
      if (!out) throw IoError("cannot write " + se_report);
      for (size_t r = 0; r < result.ranking.size(); ++r) {
        const auto& row = result.ranking[r];
        const ObjectRecord& cand = request.pool[row.candidate_index];
        ordered_json j;
        j["candidate_id"] = cand.image_id + ":i" + std::to_string(row.candidate_index);
        j["energy_or_ssd"] = row.value;
        j["rank"] = r + 1;
        out << j.dump() << "\n";
      }
      const ObjectRecord& chosen = request.pool[result.chosen];
      if (state.json) {
        ordered_json j;
        j["chosen"] = chosen.image_id + ":i" + std::to_string(result.chosen);
        j["candidates"] = result.ranking.size();
        j["report"] = se_report;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "chose candidate from " << chosen.image_id << " (of "
                  << result.ranking.size() << "), report in " << se_report << "\n";
      }
    } else if (*cmd_eval) {
      if (*ev_auc) {
        ScoredSet set;
        for (const auto& row : read_jsonl(ev_auc_scores)) {
          set.scores.push_back(row.at("score").get<double>());
          set.labels.push_back(label_to_binary(row.at("label")));
        }
        double auc = roc_auc(set);
        if (state.json)
          std::cout << ordered_json{{"auc", auc}, {"n", set.scores.size()}}.dump() << "\n";
        else std::cout << "AUC " << auc << " over " << set.scores.size() << " rows\n";
      } else if (*ev_cv) {
        std::vector<std::vector<double>> features;
        std::vector<int> labels;
        for (const auto& row : read_jsonl(ev_cv_features)) {
          features.push_back(row.at("features").get<std::vector<double>>());
          labels.push_back(label_to_binary(row.at("label")));
        }
        KfoldResult r = kfold_eval(features, labels, ev_cv_folds, ev_cv_seed, ev_cv_c);
        if (state.json) {
          ordered_json j;
          j["fold_auc"] = r.fold_auc;
          j["mean_auc"] = r.mean_auc;
          std::cout << j.dump() << "\n";
        } else {
          std::cout << "fold AUC:";
          for (double a : r.fold_auc) std::printf(" %.4f", a);
          std::printf("\nmean AUC %.4f\n", r.mean_auc);
        }
      } else if (*ev_th) {
        auto rows = read_jsonl(ev_th_pairs);
        std::map<std::string, int> item_ids;
        auto item_of = [&](const json& v) {
          std::string name = v.is_string() ? v.get<std::string>() : v.dump();
          auto [it, fresh] = item_ids.insert({name, int(item_ids.size())});
          (void)fresh;
          return it->second;
        };
        std::map<std::string, std::vector<ordered_json>> groups;
        for (const auto& row : rows) {
          std::string g = row.contains("group") ? row.at("group").get<std::string>() : "";
          item_of(row.at("item_a"));
          item_of(row.at("item_b"));
          groups[g].push_back(row);
        }
        const int n = int(item_ids.size());
        std::vector<std::string> names(static_cast<size_t>(n));
        for (const auto& [name, id] : item_ids) names[size_t(id)] = name;
        std::vector<std::vector<double>> per_group_scores;
        for (const auto& [gname, grows] : groups) {
          PairwiseTable table(n);
          for (const auto& row : grows) {
            int a = item_of(row.at("item_a"));
            int b = item_of(row.at("item_b"));
            table.add(a, b, row.at("wins_a").get<int>());
            table.add(b, a, row.at("wins_b").get<int>());
          }
          per_group_scores.push_back(thurstone_case_v(table));
        }
        // normalize per group column, then average per item across groups
        std::vector<double> final_scores(static_cast<size_t>(n), 0.0);
        if (per_group_scores.size() > 1) {
          std::vector<std::vector<double>> matrix(
              static_cast<size_t>(n), std::vector<double>(per_group_scores.size()));
          for (size_t g = 0; g < per_group_scores.size(); ++g)
            for (int i = 0; i < n; ++i) matrix[size_t(i)][g] = per_group_scores[g][size_t(i)];
          matrix = normalize_per_item(matrix);
          for (int i = 0; i < n; ++i) {
            for (size_t g = 0; g < per_group_scores.size(); ++g)
              final_scores[size_t(i)] += matrix[size_t(i)][g];
            final_scores[size_t(i)] /= double(per_group_scores.size());
          }
        } else {
          final_scores = per_group_scores[0];
        }
        ordered_json out_rows = ordered_json::array();
        for (int i = 0; i < n; ++i)
          out_rows.push_back(
              ordered_json{{"item", names[size_t(i)]}, {"score", final_scores[size_t(i)]}});
        if (!ev_th_out.empty()) {
          std::ofstream f(ev_th_out, std::ios::binary);
          for (const auto& r : out_rows) f << r.dump() << "\n";
        }
        if (state.json) {
          std::cout << out_rows.dump() << "\n";
        } else {
          std::printf("%-24s %10s\n", "item", "score");
          for (int i = 0; i < n; ++i)
            std::printf("%-24s %10.4f\n", names[size_t(i)].c_str(), final_scores[size_t(i)]);
        }
      } else if (*ev_report) {
        std::vector<double> scores;
        std::vector<std::string> ids;
        for (const auto& row : read_jsonl(ev_rep_scores)) {
          scores.push_back(row.at("score").get<double>());
          ids.push_back(row.at("id").get<std::string>());
        }
        auto rows = rank_report(scores, ids);
        std::ofstream out(ev_rep_out, std::ios::binary);
        for (const auto& r : rows) out << rank_row_json(r).dump() << "\n";
        if (!state.json) std::cout << "wrote " << rows.size() << " rows to " << ev_rep_out << "\n";
        else std::cout << ordered_json{{"rows", rows.size()}, {"out", ev_rep_out}}.dump() << "\n";
      }
    } else if (*cmd_report) {
      std::vector<double> scores;
      std::vector<std::string> ids;
      for (const auto& row : read_jsonl(rp_scores)) {
        scores.push_back(row.at("score").get<double>());
        ids.push_back(row.at("id").get<std::string>());
      }
      std::vector<double> percentiles;
      std::stringstream ss(rp_percentiles);
      std::string tok;
      while (std::getline(ss, tok, ',')) percentiles.push_back(std::stod(tok));
      auto rows = rank_report(scores, ids, percentiles);
      std::ofstream out(rp_out, std::ios::binary);
      for (const auto& r : rows) out << rank_row_json(r).dump() << "\n";
      if (!state.json) std::cout << "wrote " << rows.size() << " rows to " << rp_out << "\n";
      else std::cout << ordered_json{{"rows", rows.size()}, {"out", rp_out}}.dump() << "\n";
    } else if (*cmd_pipe) {
      std::vector<std::pair<std::string, std::string>> flags;
      for (const auto& kv : pl_sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ParamError("--set expects key=value, got " + kv);
        flags.push_back({kv.substr(0, eq), kv.substr(eq + 1)});
      }
      if (!pl_out.empty()) flags.push_back({"out", pl_out});
      if (pl_seed_given) flags.push_back({"seed", std::to_string(pl_seed)});
      std::optional<fs::path> cfg_file;
      if (!pl_config.empty()) cfg_file = pl_config;
      RunConfig cfg =
          resolve_config(pipeline_defaults(pl_preset), cfg_file, flags, environment_config());
      PipelineResult result = run_pipeline(cfg);
      if (state.json) {
        ordered_json j;
        j["run_dir"] = result.run_dir.string();
        j["held_out_auc"] = result.held_out_auc;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "pipeline complete in " << result.run_dir.string() << ", held-out AUC "
                  << result.held_out_auc << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
