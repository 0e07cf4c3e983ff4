#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rforge/common.hpp"
#include "rforge/composite.hpp"
#include "rforge/image.hpp"
#include "rforge/lbfgsb.hpp"
#include "rforge/net.hpp"
#include "rforge/scenegen.hpp"

// Color-compatibility optimization: a per-channel affine adjustment of the
// pasted foreground is tuned to minimize
//
//   E(g) = -score(I_g) + w * reg(g),   I_g = alpha * g(F) + (1-alpha) * B
//
// by multi-start projected quasi-Newton descent. The energy is evaluated on
// the unclamped composite so its gradient stays exact; clamping happens only
// when an image is materialized.

namespace rforge {

// ---------------------------------------------------------------------------
// Problem statement
// ---------------------------------------------------------------------------

struct ColorAdjust {
  std::array<double, 3> gains{1, 1, 1};
  std::array<double, 3> biases{0, 0, 0};

  static ColorAdjust identity() { return {}; }
  bool is_identity() const {
    return gains == std::array<double, 3>{1, 1, 1} && biases == std::array<double, 3>{0, 0, 0};
  }
  std::array<double, 6> flat() const {
    return {gains[0], gains[1], gains[2], biases[0], biases[1], biases[2]};
  }
  static ColorAdjust from_flat(const std::array<double, 6>& v) {
    return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
  }
  std::string str() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "g=(%.4f,%.4f,%.4f) b=(%.4f,%.4f,%.4f)", gains[0], gains[1],
                  gains[2], biases[0], biases[1], biases[2]);
    return buf;
  }
};

struct OptimizationError : std::runtime_error {
  ColorAdjust adjust;
  OptimizationError(const std::string& msg, const ColorAdjust& g)
      : std::runtime_error(msg + " at " + g.str()), adjust(g) {}
};

struct CompositeProblem {
  Image fg;     // warped source object pixels, full frame
  Image bg;     // background
  Mask alpha;   // feathered blending weights
  double w = 50.0;
  std::vector<size_t> fg_pixels;  // indices with alpha > 0

  CompositeProblem() = default;
  CompositeProblem(Image fg_, Image bg_, Mask alpha_, double w_ = 50.0)
      : fg(std::move(fg_)), bg(std::move(bg_)), alpha(std::move(alpha_)), w(w_) {
    if (!fg.same_shape(bg) || fg.width != alpha.width || fg.height != alpha.height)
      throw DimensionError("CompositeProblem: operand shapes differ");
    if (w < 0) throw ParamError("CompositeProblem: w must be >= 0");
    for (size_t i = 0; i < alpha.v.size(); ++i)
      if (alpha.v[i] > 0.f) fg_pixels.push_back(i);
  }

  size_t foreground_count() const { return fg_pixels.size(); }
};

inline CompositeProblem problem_from_parts(const CompositeParts& parts, const Image& bg,
                                           double w = 50.0) {
  return CompositeProblem(parts.warped_fg, bg, parts.feathered_alpha, w);
}

// ---------------------------------------------------------------------------
// Composite under an adjustment
// ---------------------------------------------------------------------------

// Materializes I_g as an Image (clamped to [0,1]).
inline Image apply_adjust(const ColorAdjust& g, const CompositeProblem& p) {
  Image out(p.fg.width, p.fg.height);
  for (size_t i = 0; i < p.fg.pixel_count(); ++i) {
    float a = p.alpha.v[i];
    float b = 1.f - a;
    for (int c = 0; c < 3; ++c) {
      float adj = float(g.gains[c]) * p.fg.px[3 * i + c] + float(g.biases[c]);
      float v = a * adj + b * p.bg.px[3 * i + c];
      out.px[3 * i + c] = std::clamp(v, 0.f, 1.f);
    }
  }
  return out;
}

// Unclamped I_g as a CHW tensor; the energy and its gradient operate on this.
template <typename S>
Tensor<S> composite_tensor(const ColorAdjust& g, const CompositeProblem& p) {
  const int H = p.fg.height, W = p.fg.width;
  Tensor<S> t({3, H, W});
  for (int c = 0; c < 3; ++c) {
    S gain = S(g.gains[c]), bias = S(g.biases[c]);
    for (size_t i = 0; i < p.fg.pixel_count(); ++i) {
      S a = S(p.alpha.v[i]);
      S adj = gain * S(p.fg.px[3 * i + c]) + bias;
      t.v[size_t(c) * H * W + i] = a * adj + (S(1) - a) * S(p.bg.px[3 * i + c]);
    }
  }
  return t;
}

// Realism score of the (unclamped) composite under the adjustment.
template <typename S>
double score_composite(const Network<S>& net, const ColorAdjust& g, const CompositeProblem& p) {
  Workspace<S> ws;
  Tensor<S> ig = composite_tensor<S>(g, p);
  return forward(net, resample_chw(ig, net.in_h, net.in_w), ws);
}

// ---------------------------------------------------------------------------
// Regularizer and energy
// ---------------------------------------------------------------------------

// (1/N) sum over foreground pixels of the color-change norm plus the pairwise
// channel-difference terms that discourage hue drift.
inline double reg_penalty(const ColorAdjust& g, const CompositeProblem& p) {
  const size_t N = p.fg_pixels.size();
  if (N == 0) throw ParamError("reg_penalty: no foreground pixels (alpha identically 0)");
  double total = 0;
  for (size_t i : p.fg_pixels) {
    double a = p.alpha.v[i];
    double delta[3];
    for (int c = 0; c < 3; ++c)
      delta[c] = (g.gains[c] - 1.0) * p.fg.px[3 * i + c] + g.biases[c];
    double norm2 = 0;
    for (int c = 0; c < 3; ++c) norm2 += (a * delta[c]) * (a * delta[c]);
    total += std::sqrt(norm2);
    total += std::abs(delta[0] - delta[1]) + std::abs(delta[0] - delta[2]) +
             std::abs(delta[1] - delta[2]);
  }
  return total / double(N);
}

template <typename S>
double energy(const Network<S>& net, const ColorAdjust& g, const CompositeProblem& p) {
  return -score_composite(net, g, p) + p.w * reg_penalty(g, p);
}

// Analytic gradient of the energy with respect to (gains, biases). Absolute
// values contribute their sign as a sub-gradient, zero at kinks.
template <typename S>
std::array<double, 6> energy_gradient(const Network<S>& net, const ColorAdjust& g,
                                      const CompositeProblem& p) {
  std::array<double, 6> out{};
  const size_t N = p.fg_pixels.size();
  if (N == 0) return out;  // I_g does not depend on g

  const int H = p.fg.height, W = p.fg.width;
  Workspace<S> ws;
  Tensor<S> ig = composite_tensor<S>(g, p);
  forward(net, resample_chw(ig, net.in_h, net.in_w), ws);
  backward(net, ws, S(1), static_cast<ParamGrads<S>*>(nullptr), true);
  Tensor<S> grad = resample_chw_backward(ws.dact[0], H, W);  // CHW, d score / d I_g

  for (size_t i : p.fg_pixels) {
    double a = p.alpha.v[i];
    for (int c = 0; c < 3; ++c) {
      double gpix = double(grad.v[size_t(c) * H * W + i]);
      double cval = p.fg.px[3 * i + c];
      out[size_t(c)] += -gpix * a * cval;      // d(-f)/d gain_c
      out[size_t(3 + c)] += -gpix * a;         // d(-f)/d bias_c
    }
  }

  // regularizer sub-gradient
  std::array<double, 6> reg{};
  for (size_t i : p.fg_pixels) {
    double a = p.alpha.v[i];
    double cval[3], delta[3];
    for (int c = 0; c < 3; ++c) {
      cval[c] = p.fg.px[3 * i + c];
      delta[c] = (g.gains[c] - 1.0) * cval[c] + g.biases[c];
    }
    double norm = 0;
    for (int c = 0; c < 3; ++c) norm += (a * delta[c]) * (a * delta[c]);
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (int c = 0; c < 3; ++c) {
        double coeff = (a * delta[c]) / norm * a;
        reg[size_t(c)] += coeff * cval[c];
        reg[size_t(3 + c)] += coeff;
      }
    }
    const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& pr : pairs) {
      double diff = delta[pr[0]] - delta[pr[1]];
      double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      reg[size_t(pr[0])] += sgn * cval[pr[0]];
      reg[size_t(3 + pr[0])] += sgn;
      reg[size_t(pr[1])] -= sgn * cval[pr[1]];
      reg[size_t(3 + pr[1])] -= sgn;
    }
  }
  for (int j = 0; j < 6; ++j) out[size_t(j)] += p.w * reg[size_t(j)] / double(N);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-start optimization
// ---------------------------------------------------------------------------

struct OptimizeOptions {
  int starts = 8;  // identity plus starts-1 random draws
  int max_iterations = 200;
  double pg_tol = 1e-5;
  int history = 10;
  std::array<double, 2> gain_box{0.2, 3.0};
  std::array<double, 2> bias_box{-0.5, 0.5};
  std::array<double, 2> gain_init{0.7, 1.3};
  std::array<double, 2> bias_init{-0.15, 0.15};
  uint64_t seed = 0;
};

struct StartTrace {
  ColorAdjust start;
  double energy = 0;
  int iterations = 0;
  bool converged = false;
};

struct OptimizeResult {
  ColorAdjust adjust;
  double energy = 0;
  double energy_identity = 0;
  int evaluations = 0;
  std::vector<StartTrace> starts;
};

template <typename S>
OptimizeResult optimize_color(const Network<S>& net, const CompositeProblem& p,
                              const OptimizeOptions& opts = {}) {
  if (p.fg_pixels.empty())
    throw ParamError("optimize_color: no foreground pixels (alpha identically 0)");
  if (opts.starts < 1) throw ParamError("optimize_color: needs at least one start");

  std::vector<double> lo = {opts.gain_box[0], opts.gain_box[0], opts.gain_box[0],
                            opts.bias_box[0], opts.bias_box[0], opts.bias_box[0]};
  std::vector<double> hi = {opts.gain_box[1], opts.gain_box[1], opts.gain_box[1],
                            opts.bias_box[1], opts.bias_box[1], opts.bias_box[1]};

  std::vector<ColorAdjust> starts;
  starts.push_back(ColorAdjust::identity());
  Rng rng(sub_seed(opts.seed, "color-starts"));
  for (int s = 1; s < opts.starts; ++s) {
    ColorAdjust g;
    for (int c = 0; c < 3; ++c) {
      g.gains[c] = rng.uniform(opts.gain_init[0], opts.gain_init[1]);
      g.biases[c] = rng.uniform(opts.bias_init[0], opts.bias_init[1]);
    }
    starts.push_back(g);
  }

  BoxLbfgsOptions lopts;
  lopts.max_iterations = opts.max_iterations;
  lopts.pg_tol = opts.pg_tol;
  lopts.history = opts.history;

  struct StartOutcome {
    BoxLbfgsResult res;
    std::string error;
  };
  std::vector<StartOutcome> outcomes(starts.size());
  parallel_for(int64_t(starts.size()), [&](int64_t si) {
    auto fg = [&](const std::vector<double>& x, std::vector<double>& grad) {
      ColorAdjust g = ColorAdjust::from_flat({x[0], x[1], x[2], x[3], x[4], x[5]});
      double e = energy(net, g, p);
      auto eg = energy_gradient(net, g, p);
      grad.assign(eg.begin(), eg.end());
      if (!std::isfinite(e))
        throw OptimizationError("optimize_color: non-finite energy", g);
      return e;
    };
    auto f0 = starts[size_t(si)].flat();
    try {
      outcomes[size_t(si)].res = minimize_box_lbfgs(
          fg, std::vector<double>(f0.begin(), f0.end()), lo, hi, lopts);
    } catch (const std::exception& e) {
      outcomes[size_t(si)].error = e.what();
    }
  });
  for (const auto& o : outcomes)
    if (!o.error.empty()) throw OptimizationError(o.error, ColorAdjust::identity());

  OptimizeResult result;
  result.energy_identity = energy(net, ColorAdjust::identity(), p);
  size_t best = 0;
  for (size_t si = 0; si < outcomes.size(); ++si) {
    const BoxLbfgsResult& r = outcomes[si].res;
    StartTrace t;
    t.start = starts[si];
    t.energy = r.f;
    t.iterations = r.iterations;
    t.converged = r.converged;
    result.starts.push_back(t);
    result.evaluations += r.evaluations;
    if (r.f < outcomes[best].res.f) best = si;
  }
  result.adjust = ColorAdjust::from_flat({outcomes[best].res.x[0], outcomes[best].res.x[1],
                                          outcomes[best].res.x[2], outcomes[best].res.x[3],
                                          outcomes[best].res.x[4], outcomes[best].res.x[5]});
  result.energy = outcomes[best].res.f;
  return result;
}

// ---------------------------------------------------------------------------
// Mean/std color-transfer baseline
// ---------------------------------------------------------------------------

// Matches per-channel foreground statistics (over alpha > 0 in fg) to the
// visible background statistics (alpha == 0 in bg).
inline ColorAdjust reinhard_match(const CompositeProblem& p) {
  std::vector<size_t> bg_pixels;
  for (size_t i = 0; i < p.alpha.v.size(); ++i)
    if (p.alpha.v[i] == 0.f) bg_pixels.push_back(i);
  if (p.fg_pixels.size() < 2 || bg_pixels.size() < 2)
    throw ParamError("reinhard_match: foreground and background each need >= 2 pixels");

  ColorAdjust g;
  for (int c = 0; c < 3; ++c) {
    double mu_fg = 0, mu_bg = 0;
    for (size_t i : p.fg_pixels) mu_fg += p.fg.px[3 * i + c];
    for (size_t i : bg_pixels) mu_bg += p.bg.px[3 * i + c];
    mu_fg /= double(p.fg_pixels.size());
    mu_bg /= double(bg_pixels.size());
    double var_fg = 0, var_bg = 0;
    for (size_t i : p.fg_pixels) {
      double d = p.fg.px[3 * i + c] - mu_fg;
      var_fg += d * d;
    }
    for (size_t i : bg_pixels) {
      double d = p.bg.px[3 * i + c] - mu_bg;
      var_bg += d * d;
    }
    var_fg /= double(p.fg_pixels.size());
    var_bg /= double(bg_pixels.size());
    double sd_fg = std::sqrt(var_fg), sd_bg = std::sqrt(var_bg);
    if (sd_fg > 0) {
      g.gains[c] = sd_bg / sd_fg;
      g.biases[c] = mu_bg - g.gains[c] * mu_fg;
    } else {
      g.gains[c] = 1.0;
      g.biases[c] = mu_bg - mu_fg;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Hard negative mining
// ---------------------------------------------------------------------------

struct MiningConfig {
  int per_round = 24;       // composites recolored per round
  double w = 0.0;           // regularizer weight while mining (0 = free recoloring)
  OptimizeOptions opt = [] {
    OptimizeOptions o;
    o.starts = 4;
    o.max_iterations = 60;
    return o;
  }();
  TrainConfig retrain = train_preset("mining");
  double feather_band = 3;
  uint64_t seed = 0;
  std::filesystem::path work_dir;
};

// Walks a manifest's natural records back to the corpus they reference.
inline std::filesystem::path derive_corpus_root(const DatasetManifest& manifest) {
  for (const auto& r : manifest.records)
    if (r.label == "natural") {
      std::filesystem::path img = (manifest.dir / r.path).lexically_normal();
      return img.parent_path().parent_path();  // <root>/scenes/x.png
    }
  throw ParamError("derive_corpus_root: manifest has no natural records");
}

// Round k recolors a sampled subset of composites to maximize the current
// model's score (w typically 0), labels the results as composites, and
// retrains. Returns [input model, round 1 model, ..., round n model].
inline std::vector<Network<float>> mine_hard_negatives(const Network<float>& params0,
                                                       const DatasetManifest& manifest,
                                                       const Corpus& corpus, int rounds,
                                                       const MiningConfig& cfg) {
  if (rounds < 1) throw ParamError("mine_hard_negatives: rounds must be >= 1");
  if (cfg.work_dir.empty()) throw ParamError("mine_hard_negatives: work_dir required");
  namespace fs = std::filesystem;
  fs::create_directories(cfg.work_dir / "mined");

  std::vector<LabeledScene> scenes = load_all_scenes(corpus);
  std::map<std::string, size_t> scene_index;
  for (size_t i = 0; i < scenes.size(); ++i) scene_index[scenes[i].scene_id] = i;

  // mining rebuilds problems from provenance, which needs annotated sources
  std::vector<size_t> eligible;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    if (r.label == "composite" && !r.source_is_proposal && r.target_instance >= 0 &&
        r.source_instance >= 0 && scene_index.count(r.target_scene) &&
        scene_index.count(r.source_scene))
      eligible.push_back(i);
  }
  if (eligible.empty())
    throw ParamError("mine_hard_negatives: no composite records with annotated provenance");

  std::vector<Network<float>> models;
  models.push_back(params0);
  DatasetManifest augmented = manifest;

  for (int round = 1; round <= rounds; ++round) {
    Rng rng(sub_seed(cfg.seed, "mining-round") ^ uint64_t(round));
    std::vector<size_t> pool = eligible;
    rng.shuffle(pool);
    size_t take = std::min(size_t(cfg.per_round), pool.size());

    Network<double> scorer = network_cast<double>(models.back());
    std::vector<ManifestRecord> new_records(take);
    parallel_for(int64_t(take), [&](int64_t t) {
      const ManifestRecord& rec = manifest.records[pool[size_t(t)]];
      const LabeledScene& bg = scenes[scene_index.at(rec.target_scene)];
      const LabeledScene& src = scenes[scene_index.at(rec.source_scene)];
      const ObjectRecord& target = bg.instances[size_t(rec.target_instance)];
      const ObjectRecord& source = src.instances[size_t(rec.source_instance)];
      CompositeParts parts = make_composite_parts(bg, target, src, source, cfg.feather_band);
      CompositeProblem problem = problem_from_parts(parts, bg.image, cfg.w);
      OptimizeOptions opt = cfg.opt;
      opt.seed = sub_seed(cfg.seed, "mining-opt") ^ (uint64_t(round) << 32) ^ uint64_t(t);
      OptimizeResult res = optimize_color(scorer, problem, opt);
      Image mined = apply_adjust(res.adjust, problem);
      std::string name = "mined/round" + std::to_string(round) + "_" + std::to_string(t) + ".png";
      write_png(cfg.work_dir / name, mined);
      ManifestRecord nr = rec;
      nr.path = compdetail::relative_or_absolute(cfg.work_dir / name, augmented.dir);
      nr.label = "composite";
      new_records[size_t(t)] = std::move(nr);
    });
    for (auto& nr : new_records) augmented.records.push_back(std::move(nr));

    TrainConfig retrain = cfg.retrain;
    retrain.seed = sub_seed(cfg.seed, "mining-train") ^ uint64_t(round);
    models.push_back(train(models.back(), augmented, retrain).params);
  }
  return models;
}

}  // namespace rforge
