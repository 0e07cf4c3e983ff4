#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rforge/common.hpp"
#include "rforge/image.hpp"
#include "rforge/imageio.hpp"

// Procedural generator of labeled scenes: a two-band background under value
// noise, plus flat or striped convex objects, all rendered under a per-scene
// affine illumination cast. Object swaps between scenes then differ chiefly
// in cast and texture, which is the signal the realism model trains on.

namespace rforge {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

// A segmented object instance.
struct ObjectRecord {
  std::string image_id;
  Mask mask;
  std::string category;
  BBox bbox;
  double area_frac = 0;
};

// Scene-wide per-channel affine illumination: v -> gain*v + bias.
struct ChannelCast {
  std::array<double, 3> gains{1, 1, 1};
  std::array<double, 3> biases{0, 0, 0};

  bool is_identity() const {
    return gains == std::array<double, 3>{1, 1, 1} && biases == std::array<double, 3>{0, 0, 0};
  }
  // composition with another cast's inverse: the exact recoloring that maps a
  // source-cast rendering onto this cast
  std::array<double, 6> correction_from(const ChannelCast& src) const {
    std::array<double, 6> out{};
    for (int c = 0; c < 3; ++c) {
      out[c] = gains[c] / src.gains[c];
      out[3 + c] = biases[c] - out[c] * src.biases[c];
    }
    return out;
  }
};

inline Image apply_cast(const Image& base, const ChannelCast& cast) {
  Image out(base.width, base.height);
  for (size_t i = 0; i < base.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) {
      double v = cast.gains[c] * double(base.px[3 * i + c]) + cast.biases[c];
      out.px[3 * i + c] = float(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

struct LabeledScene {
  std::string scene_id;
  Image image;
  std::vector<ObjectRecord> instances;
  ChannelCast cast;
};

// ---------------------------------------------------------------------------
// Scene specification
// ---------------------------------------------------------------------------

enum class ShapeFamily { Ellipse, Box, Polygon };

struct ObjectSpec {
  std::string category;
  ShapeFamily family = ShapeFamily::Ellipse;
  double cx = 0, cy = 0;
  double rx = 0, ry = 0;     // radii / half extents
  double rotation = 0;       // polygon orientation
  int sides = 5;             // polygon vertex count
  double corner_radius = 0;  // rounded box corners
  std::array<float, 3> albedo{0.5f, 0.5f, 0.5f};
  bool striped = false;
  std::array<float, 3> albedo2{0.5f, 0.5f, 0.5f};
  double stripe_period = 8;
  double stripe_angle = 0;
  double noise_amp = 0.03;
  uint64_t noise_seed = 0;
};

struct BackgroundSpec {
  std::array<float, 3> sky{0.45f, 0.55f, 0.62f};
  std::array<float, 3> ground{0.40f, 0.38f, 0.30f};
  double horizon_frac = 0.5;
  double noise_amp = 0.04;
  uint64_t noise_seed = 0;
};

struct SceneSpec {
  uint64_t seed = 0;
  int width = 128, height = 128;
  ChannelCast cast;
  BackgroundSpec background;
  std::vector<ObjectSpec> objects;
};

inline SceneSpec with_cast(SceneSpec spec, const ChannelCast& cast) {
  spec.cast = cast;
  return spec;
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

namespace scenedetail {

// Smooth value noise in [-1,1]: a coarse random grid, bilinearly interpolated.
struct ValueNoise {
  int cell;
  int gw, gh;
  std::vector<float> grid;

  ValueNoise(uint64_t seed, int w, int h, int cell_px) : cell(cell_px) {
    gw = w / cell + 2;
    gh = h / cell + 2;
    grid.resize(size_t(gw) * gh);
    Rng rng(seed);
    for (auto& g : grid) g = float(rng.uniform(-1.0, 1.0));
  }

  float at(double x, double y) const {
    double u = x / cell, v = y / cell;
    int x0 = int(std::floor(u)), y0 = int(std::floor(v));
    double ax = u - x0, ay = v - y0;
    auto g = [&](int xx, int yy) {
      xx = std::clamp(xx, 0, gw - 1);
      yy = std::clamp(yy, 0, gh - 1);
      return double(grid[size_t(yy) * gw + xx]);
    };
    double top = (1 - ax) * g(x0, y0) + ax * g(x0 + 1, y0);
    double bot = (1 - ax) * g(x0, y0 + 1) + ax * g(x0 + 1, y0 + 1);
    return float((1 - ay) * top + ay * bot);
  }
};

inline bool inside_shape(const ObjectSpec& o, double x, double y) {
  double dx = x - o.cx, dy = y - o.cy;
  switch (o.family) {
    case ShapeFamily::Ellipse: {
      double u = dx / o.rx, v = dy / o.ry;
      return u * u + v * v <= 1.0;
    }
    case ShapeFamily::Box: {
      double ax = std::abs(dx), ay = std::abs(dy);
      if (ax > o.rx || ay > o.ry) return false;
      double qx = std::max(0.0, ax - (o.rx - o.corner_radius));
      double qy = std::max(0.0, ay - (o.ry - o.corner_radius));
      return qx * qx + qy * qy <= o.corner_radius * o.corner_radius;
    }
    case ShapeFamily::Polygon: {
      // convex test against a regular n-gon's edges
      double step = 6.283185307179586477 / o.sides;
      for (int k = 0; k < o.sides; ++k) {
        double a0 = o.rotation + step * k, a1 = o.rotation + step * (k + 1);
        double x0 = o.rx * std::cos(a0), y0 = o.ry * std::sin(a0);
        double x1 = o.rx * std::cos(a1), y1 = o.ry * std::sin(a1);
        double cross = (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0);
        if (cross < 0) return false;
      }
      return true;
    }
  }
  return false;
}

inline std::array<float, 3> object_color(const ObjectSpec& o, const ValueNoise& noise, double x,
                                         double y) {
  std::array<float, 3> base = o.albedo;
  if (o.striped) {
    double t = x * std::cos(o.stripe_angle) + y * std::sin(o.stripe_angle);
    double phase = std::fmod(t / o.stripe_period, 1.0);
    if (phase < 0) phase += 1.0;
    if (phase >= 0.5) base = o.albedo2;
  }
  float n = float(o.noise_amp) * noise.at(x, y);
  return {base[0] + n, base[1] + n, base[2] + n};
}

inline Mask rasterize_object(const ObjectSpec& o, int w, int h) {
  Mask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside_shape(o, x + 0.5, y + 0.5)) m.at(x, y) = 1.f;
  return m;
}

inline bool boxes_disjoint(const BBox& a, const BBox& b, int gap) {
  return a.x1 + gap <= b.x0 || b.x1 + gap <= a.x0 || a.y1 + gap <= b.y0 || b.y1 + gap <= a.y0;
}

}  // namespace scenedetail

// Renders the base (un-cast) image plus instance masks, then applies the cast.
// Instance masks exactly cover the drawn shape pixels. Throws GenerationError
// if a placed object violates the area filter or overlaps a previous one.
inline LabeledScene render_scene(const SceneSpec& spec) {
  const int w = spec.width, h = spec.height;
  Image base(w, h);
  scenedetail::ValueNoise bg_noise(spec.background.noise_seed, w, h, 32);
  int horizon = int(spec.background.horizon_frac * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto& col = y < horizon ? spec.background.sky : spec.background.ground;
      float n = float(spec.background.noise_amp) * bg_noise.at(x + 0.5, y + 0.5);
      for (int c = 0; c < 3; ++c) base.at(x, y, c) = col[c] + n;
    }

  LabeledScene scene;
  scene.cast = spec.cast;
  std::vector<BBox> placed;
  for (size_t oi = 0; oi < spec.objects.size(); ++oi) {
    const ObjectSpec& o = spec.objects[oi];
    Mask mask = scenedetail::rasterize_object(o, w, h);
    size_t area = mask.area();
    double frac = double(area) / (double(w) * h);
    if (frac < 0.05 || frac > 0.50)
      throw GenerationError("render_scene: object " + std::to_string(oi) + " (" + o.category +
                            ") area fraction " + std::to_string(frac) + " outside [0.05,0.50]");
    BBox bbox = tight_bbox(mask);
    for (const BBox& prev : placed)
      if (!scenedetail::boxes_disjoint(bbox, prev, 1))
        throw GenerationError("render_scene: object " + std::to_string(oi) + " (" + o.category +
                              ") overlaps a previous placement");
    placed.push_back(bbox);

    scenedetail::ValueNoise obj_noise(o.noise_seed, w, h, 8);
    for (int y = bbox.y0; y < bbox.y1; ++y)
      for (int x = bbox.x0; x < bbox.x1; ++x)
        if (mask.at(x, y) > 0.f) {
          auto col = scenedetail::object_color(o, obj_noise, x + 0.5, y + 0.5);
          for (int c = 0; c < 3; ++c) base.at(x, y, c) = col[c];
        }

    ObjectRecord rec;
    rec.mask = std::move(mask);
    rec.category = o.category;
    rec.bbox = bbox;
    rec.area_frac = frac;
    scene.instances.push_back(std::move(rec));
  }

  scene.image = apply_cast(base, spec.cast);
  return scene;
}

// ---------------------------------------------------------------------------
// Spec sampling
// ---------------------------------------------------------------------------

struct CorpusConfig {
  int scenes = 600;
  int width = 128;
  int height = 128;
  int instances_per_scene = 2;
  std::vector<std::string> categories = {"ellipse_flat", "ellipse_stripe", "box_flat",
                                         "box_stripe",   "poly_flat",      "poly_stripe"};
  double gain_lo = 0.75, gain_hi = 1.25;
  double bias_lo = -0.10, bias_hi = 0.10;
  double area_lo = 0.06, area_hi = 0.16;  // per-object target area fraction
  int placement_retries = 100;
};

namespace scenedetail {

inline ObjectSpec sample_object(Rng& rng, const std::string& category, int w, int h,
                                double area_lo, double area_hi) {
  ObjectSpec o;
  o.category = category;
  bool stripe = category.find("stripe") != std::string::npos;
  if (category.rfind("ellipse", 0) == 0) o.family = ShapeFamily::Ellipse;
  else if (category.rfind("box", 0) == 0) o.family = ShapeFamily::Box;
  else o.family = ShapeFamily::Polygon;

  double area = rng.uniform(area_lo, area_hi) * w * h;
  double aspect = rng.uniform(0.65, 1.55);
  switch (o.family) {
    case ShapeFamily::Ellipse:
      o.rx = std::sqrt(area * aspect / 3.14159265358979323846);
      o.ry = o.rx / aspect;
      break;
    case ShapeFamily::Box:
      o.rx = std::sqrt(area * aspect / 4.0);
      o.ry = o.rx / aspect;
      o.corner_radius = rng.uniform(0.15, 0.45) * std::min(o.rx, o.ry);
      break;
    case ShapeFamily::Polygon: {
      o.sides = 3 + 2 * int(rng.uniform_int(2));  // 3 or 5
      double unit = o.sides * std::sin(6.283185307179586477 / o.sides) / 2.0;
      o.rx = o.ry = std::sqrt(area / unit);
      o.rotation = rng.uniform(0, 6.283185307179586477);
      break;
    }
  }
  double margin = std::max(o.rx, o.ry) + 2.0;
  o.cx = rng.uniform(margin, w - margin);
  o.cy = rng.uniform(margin, h - margin);

  // albedos stay near a common palette so the per-scene cast dominates
  // appearance; that is the cue composites break
  for (int c = 0; c < 3; ++c) o.albedo[c] = float(rng.uniform(0.40, 0.50));
  o.striped = stripe;
  if (stripe) {
    for (int c = 0; c < 3; ++c) o.albedo2[c] = float(rng.uniform(0.32, 0.42));
    o.stripe_period = rng.uniform(6.0, 14.0);
    o.stripe_angle = rng.uniform(0, 3.14159265358979323846);
  }
  o.noise_amp = rng.uniform(0.01, 0.03);
  o.noise_seed = rng.next();
  return o;
}

}  // namespace scenedetail

// Draws a full scene spec from a seed: background, cast, and object placements
// resolved by rejection so the rendered instances pass the area filter and
// stay pairwise disjoint.
inline SceneSpec sample_scene_spec(uint64_t seed, const CorpusConfig& cfg,
                                   const std::vector<std::string>& category_plan) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.width = cfg.width;
  spec.height = cfg.height;
  for (int c = 0; c < 3; ++c) {
    spec.cast.gains[c] = rng.uniform(cfg.gain_lo, cfg.gain_hi);
    spec.cast.biases[c] = rng.uniform(cfg.bias_lo, cfg.bias_hi);
  }
  // fixed background albedos: the rendered background then reveals the scene
  // cast, which is the reference composites get compared against
  spec.background.sky = {0.55f, 0.55f, 0.55f};
  spec.background.ground = {0.35f, 0.35f, 0.35f};
  spec.background.horizon_frac = rng.uniform(0.30, 0.70);
  spec.background.noise_amp = rng.uniform(0.02, 0.05);
  spec.background.noise_seed = rng.next();

  // Place all objects; if one stalls, restart the whole layout so an unlucky
  // early placement cannot wedge the scene.
  for (int round = 0; round < 20; ++round) {
    spec.objects.clear();
    std::vector<BBox> placed;
    bool all_ok = true;
    for (size_t oi = 0; oi < category_plan.size() && all_ok; ++oi) {
      bool ok = false;
      for (int attempt = 0; attempt < cfg.placement_retries && !ok; ++attempt) {
        // later attempts aim nearer the minimum area so crowded scenes resolve
        double shrink = double(cfg.placement_retries - attempt) / cfg.placement_retries;
        double hi = cfg.area_lo + (cfg.area_hi - cfg.area_lo) * shrink;
        ObjectSpec cand = scenedetail::sample_object(rng, category_plan[oi], cfg.width,
                                                     cfg.height, cfg.area_lo, hi);
        Mask mask = scenedetail::rasterize_object(cand, cfg.width, cfg.height);
        double frac = double(mask.area()) / (double(cfg.width) * cfg.height);
        if (frac < 0.05 || frac > 0.50) continue;
        BBox bbox = tight_bbox(mask);
        bool disjoint = true;
        for (const BBox& prev : placed)
          if (!scenedetail::boxes_disjoint(bbox, prev, 1)) disjoint = false;
        if (!disjoint) continue;
        placed.push_back(bbox);
        spec.objects.push_back(cand);
        ok = true;
      }
      if (!ok) all_ok = false;
    }
    if (all_ok) return spec;
  }
  throw GenerationError("sample_scene_spec: object " +
                        std::to_string(spec.objects.size()) + " (" +
                        category_plan[spec.objects.size()] +
                        ") cannot satisfy the area filter after bounded retries");
}

// The exact spec a corpus scene is rendered from: per-scene seed is
// corpus_seed ^ index, category plan taken round robin from the config so the
// corpus category distribution matches within rounding.
inline SceneSpec scene_spec_for(uint64_t corpus_seed, int scene_index, const CorpusConfig& cfg) {
  std::vector<std::string> plan;
  for (int i = 0; i < cfg.instances_per_scene; ++i) {
    size_t k = (size_t(scene_index) * cfg.instances_per_scene + i) % cfg.categories.size();
    plan.push_back(cfg.categories[k]);
  }
  return sample_scene_spec(corpus_seed ^ uint64_t(scene_index), cfg, plan);
}

inline std::string scene_id_for(int scene_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06d", scene_index);
  return buf;
}

inline LabeledScene make_scene(uint64_t corpus_seed, int scene_index, const CorpusConfig& cfg) {
  LabeledScene scene = render_scene(scene_spec_for(corpus_seed, scene_index, cfg));
  scene.scene_id = scene_id_for(scene_index);
  for (auto& inst : scene.instances) inst.image_id = scene.scene_id;
  return scene;
}

// ---------------------------------------------------------------------------
// Corpus on disk
// ---------------------------------------------------------------------------

struct CorpusInstance {
  std::string mask_path;
  std::string category;
  BBox bbox;
  double area_frac = 0;
};

struct CorpusScene {
  std::string scene_id;
  std::string image_path;
  ChannelCast cast;
  std::vector<CorpusInstance> instances;
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusScene> scenes;
};

inline nlohmann::ordered_json corpus_scene_json(const CorpusScene& s) {
  nlohmann::ordered_json j;
  j["scene_id"] = s.scene_id;
  j["image_path"] = s.image_path;
  j["cast"] = {{"gains", s.cast.gains}, {"biases", s.cast.biases}};
  auto insts = nlohmann::ordered_json::array();
  for (const auto& i : s.instances) {
    nlohmann::ordered_json ij;
    ij["mask_path"] = i.mask_path;
    ij["category"] = i.category;
    ij["bbox"] = {i.bbox.x0, i.bbox.y0, i.bbox.x1, i.bbox.y1};
    ij["area_frac"] = i.area_frac;
    insts.push_back(ij);
  }
  j["instances"] = insts;
  return j;
}

inline Corpus generate_corpus(const CorpusConfig& cfg, uint64_t seed,
                              const std::filesystem::path& out_dir) {
  if (cfg.scenes < 1) throw ParamError("generate_corpus: scene count must be >= 1");
  if (cfg.categories.empty()) throw ParamError("generate_corpus: category list is empty");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "scenes", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (!fs::is_directory(out_dir / "scenes") || !fs::is_directory(out_dir / "masks"))
    throw IoError("generate_corpus: cannot create output directory " + out_dir.string());

  Corpus corpus;
  corpus.root = out_dir;
  corpus.scenes.resize(size_t(cfg.scenes));
  parallel_for(cfg.scenes, [&](int64_t si) {
    LabeledScene scene = make_scene(seed, int(si), cfg);
    CorpusScene rec;
    rec.scene_id = scene.scene_id;
    rec.image_path = "scenes/" + scene.scene_id + ".png";
    rec.cast = scene.cast;
    write_png(out_dir / rec.image_path, scene.image);
    for (size_t ii = 0; ii < scene.instances.size(); ++ii) {
      const ObjectRecord& inst = scene.instances[ii];
      CorpusInstance ci;
      ci.mask_path = "masks/" + scene.scene_id + "_i" + std::to_string(ii) + ".png";
      ci.category = inst.category;
      ci.bbox = inst.bbox;
      ci.area_frac = inst.area_frac;
      write_mask_png(out_dir / ci.mask_path, inst.mask);
      rec.instances.push_back(std::move(ci));
    }
    corpus.scenes[size_t(si)] = std::move(rec);
  });

  std::ofstream index(out_dir / "index.jsonl", std::ios::binary);
  if (!index) throw IoError("generate_corpus: cannot write index in " + out_dir.string());
  for (const auto& s : corpus.scenes) index << corpus_scene_json(s).dump() << "\n";
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.jsonl");
  if (!index) throw IoError("load_corpus: cannot open " + (dir / "index.jsonl").string());
  Corpus corpus;
  corpus.root = dir;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    CorpusScene s;
    s.scene_id = j.at("scene_id");
    s.image_path = j.at("image_path");
    for (int c = 0; c < 3; ++c) {
      s.cast.gains[c] = j.at("cast").at("gains")[c];
      s.cast.biases[c] = j.at("cast").at("biases")[c];
    }
    for (const auto& ij : j.at("instances")) {
      CorpusInstance ci;
      ci.mask_path = ij.at("mask_path");
      ci.category = ij.at("category");
      ci.bbox = BBox{ij.at("bbox")[0].get<int>(), ij.at("bbox")[1].get<int>(),
                     ij.at("bbox")[2].get<int>(), ij.at("bbox")[3].get<int>()};
      ci.area_frac = ij.at("area_frac");
      s.instances.push_back(std::move(ci));
    }
    corpus.scenes.push_back(std::move(s));
  }
  return corpus;
}

// Decodes every corpus scene into memory (images and masks).
inline std::vector<LabeledScene> load_all_scenes(const Corpus& corpus);

// Decodes one corpus scene back into memory.
inline LabeledScene load_scene(const Corpus& corpus, size_t index) {
  const CorpusScene& s = corpus.scenes.at(index);
  LabeledScene scene;
  scene.scene_id = s.scene_id;
  scene.cast = s.cast;
  scene.image = read_image(corpus.root / s.image_path);
  for (const auto& ci : s.instances) {
    ObjectRecord rec;
    rec.image_id = s.scene_id;
    rec.mask = read_mask(corpus.root / ci.mask_path);
    rec.category = ci.category;
    rec.bbox = ci.bbox;
    rec.area_frac = ci.area_frac;
    scene.instances.push_back(std::move(rec));
  }
  return scene;
}

inline std::vector<LabeledScene> load_all_scenes(const Corpus& corpus) {
  std::vector<LabeledScene> scenes(corpus.scenes.size());
  parallel_for(int64_t(corpus.scenes.size()),
               [&](int64_t i) { scenes[size_t(i)] = load_scene(corpus, size_t(i)); });
  return scenes;
}

}  // namespace rforge
