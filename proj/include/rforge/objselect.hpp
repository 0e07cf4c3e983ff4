#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "rforge/coloropt.hpp"
#include "rforge/composite.hpp"
#include "rforge/scenegen.hpp"

// Best-fitting-object selection: given a background location, each candidate
// source object is composited in and the pool is ranked by the realism energy
// (argmin), by shape distance, or by a seeded random draw.

namespace rforge {

enum class SelectionMode { RealismCNN, Shape, Random };

inline SelectionMode parse_selection_mode(const std::string& tag) {
  if (tag == "realism" || tag == "RealismCNN") return SelectionMode::RealismCNN;
  if (tag == "shape" || tag == "Shape") return SelectionMode::Shape;
  if (tag == "random" || tag == "Random") return SelectionMode::Random;
  throw ParamError("unknown selection mode: " + tag);
}

struct SelectionRequest {
  ObjectRecord target;               // must belong to one of the scenes
  std::vector<ObjectRecord> pool;    // candidate source objects
  SelectionMode mode = SelectionMode::RealismCNN;
  bool adjust = false;               // run the full color optimization per candidate
  double w = 50.0;
  double feather_band = 3;
  OptimizeOptions opt;               // used when adjust is set
  uint64_t seed = 0;
};

struct RankedSelection {
  size_t candidate_index;
  double value;  // energy (realism), shape SSD, or draw order
};

struct SelectionResult {
  size_t chosen = 0;
  std::vector<RankedSelection> ranking;  // ascending by value
};

template <typename S>
SelectionResult select_best_object(const Network<S>& net, const SelectionRequest& request,
                                   const std::vector<LabeledScene>& scenes) {
  if (request.pool.empty()) throw ParamError("select_best_object: empty candidate pool");
  std::map<std::string, size_t> scene_index;
  for (size_t i = 0; i < scenes.size(); ++i) scene_index[scenes[i].scene_id] = i;
  if (!scene_index.count(request.target.image_id))
    throw ParamError("select_best_object: target scene not loaded");
  const LabeledScene& bg = scenes[scene_index.at(request.target.image_id)];

  SelectionResult result;
  const size_t n = request.pool.size();
  switch (request.mode) {
    case SelectionMode::RealismCNN: {
      std::vector<double> values(n);
      std::vector<std::string> errors(n);
      parallel_for(int64_t(n), [&](int64_t i) {
        try {
          const ObjectRecord& cand = request.pool[size_t(i)];
          const LabeledScene& src = scenes.at(scene_index.at(cand.image_id));
          CompositeParts parts =
              make_composite_parts(bg, request.target, src, cand, request.feather_band);
          CompositeProblem problem = problem_from_parts(parts, bg.image, request.w);
          if (request.adjust) {
            OptimizeOptions opt = request.opt;
            opt.seed = sub_seed(request.seed, "select-adjust") ^ uint64_t(i);
            values[size_t(i)] = optimize_color(net, problem, opt).energy;
          } else {
            values[size_t(i)] = energy(net, ColorAdjust::identity(), problem);
          }
        } catch (const std::exception& e) {
          errors[size_t(i)] = e.what();
        }
      });
      for (const auto& e : errors)
        if (!e.empty()) throw ParamError("select_best_object: " + e);
      for (size_t i = 0; i < n; ++i) result.ranking.push_back({i, values[i]});
      std::sort(result.ranking.begin(), result.ranking.end(),
                [](const RankedSelection& a, const RankedSelection& b) {
                  if (a.value != b.value) return a.value < b.value;
                  return a.candidate_index < b.candidate_index;
                });
      break;
    }
    case SelectionMode::Shape: {
      MaskDescriptor td = mask_descriptor(request.target.mask);
      std::vector<double> values(n);
      parallel_for(int64_t(n),
                   [&](int64_t i) { values[size_t(i)] = shape_ssd(td, mask_descriptor(request.pool[size_t(i)].mask)); });
      for (size_t i = 0; i < n; ++i) result.ranking.push_back({i, values[i]});
      // same tie order as the source-candidate search: (ssd, image_id, index)
      std::sort(result.ranking.begin(), result.ranking.end(),
                [&](const RankedSelection& a, const RankedSelection& b) {
                  if (a.value != b.value) return a.value < b.value;
                  const std::string& ia = request.pool[a.candidate_index].image_id;
                  const std::string& ib = request.pool[b.candidate_index].image_id;
                  if (ia != ib) return ia < ib;
                  return a.candidate_index < b.candidate_index;
                });
      break;
    }
    case SelectionMode::Random: {
      Rng rng(sub_seed(request.seed, "select-random"));
      std::vector<size_t> perm(n);
      for (size_t i = 0; i < n; ++i) perm[i] = i;
      rng.shuffle(perm);
      for (size_t i = 0; i < n; ++i) result.ranking.push_back({perm[i], double(i)});
      break;
    }
  }
  result.chosen = result.ranking.front().candidate_index;
  return result;
}

}  // namespace rforge
