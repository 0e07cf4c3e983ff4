#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rforge/common.hpp"
#include "rforge/image.hpp"
#include "rforge/imageio.hpp"
#include "rforge/scenegen.hpp"

// Composite generation by shape-matched object replacement, in four regimes:
// FullySupervised (annotated masks both sides), PartiallySupervised (annotated
// targets, proposal sources), Unsupervised (proposals both sides) and
// RandomPaste (no shape matching at all).

namespace rforge {

// ---------------------------------------------------------------------------
// Shape descriptors
// ---------------------------------------------------------------------------

constexpr int kDescriptorSize = 64;

// Blurred, subsampled view of a mask's tight crop; translation invariant by
// construction.
struct MaskDescriptor {
  std::vector<float> g;  // kDescriptorSize^2 values in [0,1]
};

namespace compdetail {

// Separable Gaussian blur with zero padding outside the grid.
inline std::vector<float> gaussian_blur(const std::vector<float>& src, int w, int h,
                                        double sigma) {
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(size_t(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[size_t(i + radius)] = std::exp(-0.5 * double(i) * i / (sigma * sigma));
    sum += kernel[size_t(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  std::vector<float> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int xx = x + i;
        if (xx >= 0 && xx < w) acc += kernel[size_t(i + radius)] * src[size_t(y) * w + xx];
      }
      tmp[size_t(y) * w + x] = float(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int yy = y + i;
        if (yy >= 0 && yy < h) acc += kernel[size_t(i + radius)] * tmp[size_t(yy) * w + x];
      }
      out[size_t(y) * w + x] = float(acc);
    }
  return out;
}

inline std::vector<float> resample_grid(const std::vector<float>& src, int w, int h, int dw,
                                        int dh) {
  std::vector<float> out(size_t(dw) * dh);
  double sx = double(w) / dw, sy = double(h) / dh;
  for (int y = 0; y < dh; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < dw; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      out[size_t(y) * dw + x] = detail::sample_bilinear(src.data(), w, h, 1, 0, u, v);
    }
  }
  return out;
}

}  // namespace compdetail

// Gaussian blur (sigma 2 in crop coordinates) of the tight mask crop, then a
// bilinear resample to 64x64.
inline MaskDescriptor mask_descriptor(const Mask& mask) {
  BBox box = tight_bbox(mask);  // throws on empty masks
  int cw = box.w(), ch = box.h();
  std::vector<float> crop(size_t(cw) * ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      crop[size_t(y) * cw + x] = mask.at(box.x0 + x, box.y0 + y) > 0.f ? 1.f : 0.f;
  std::vector<float> blurred = compdetail::gaussian_blur(crop, cw, ch, 2.0);
  MaskDescriptor d;
  d.g = compdetail::resample_grid(blurred, cw, ch, kDescriptorSize, kDescriptorSize);
  for (auto& v : d.g) v = std::clamp(v, 0.f, 1.f);
  return d;
}

inline double shape_ssd(const MaskDescriptor& a, const MaskDescriptor& b) {
  double acc = 0;
  for (size_t i = 0; i < a.g.size(); ++i) {
    double diff = double(a.g[i]) - double(b.g[i]);
    acc += diff * diff;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Source search
// ---------------------------------------------------------------------------

struct RankedCandidate {
  size_t pool_index;
  double ssd;
};

// Ranked same-category candidates, excluding anything from the target's own
// image; ties broken by (image_id, pool index). Precomputed descriptors may be
// supplied to avoid rebuilding them across repeated searches over one pool.
inline std::vector<RankedCandidate> find_source_candidates(
    const ObjectRecord& target, const std::vector<ObjectRecord>& pool, size_t k,
    const std::vector<MaskDescriptor>* pool_descriptors = nullptr,
    const MaskDescriptor* target_descriptor = nullptr) {
  if (pool.empty()) throw ParamError("find_source_candidates: empty pool");
  MaskDescriptor own;
  if (!target_descriptor) {
    own = mask_descriptor(target.mask);
    target_descriptor = &own;
  }
  std::vector<RankedCandidate> ranked;
  for (size_t i = 0; i < pool.size(); ++i) {
    const ObjectRecord& cand = pool[i];
    if (cand.image_id == target.image_id) continue;
    if (!target.category.empty() && !cand.category.empty() && cand.category != target.category)
      continue;
    double ssd = pool_descriptors ? shape_ssd(*target_descriptor, (*pool_descriptors)[i])
                                  : shape_ssd(*target_descriptor, mask_descriptor(cand.mask));
    ranked.push_back({i, ssd});
  }
  std::sort(ranked.begin(), ranked.end(), [&](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.ssd != b.ssd) return a.ssd < b.ssd;
    if (pool[a.pool_index].image_id != pool[b.pool_index].image_id)
      return pool[a.pool_index].image_id < pool[b.pool_index].image_id;
    return a.pool_index < b.pool_index;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

// ---------------------------------------------------------------------------
// Composite creation
// ---------------------------------------------------------------------------

struct CompositeParts {
  Image warped_fg;      // source object resampled into the target frame
  Mask warped_mask;     // binary support after the warp
  Mask feathered_alpha;
};

inline CompositeParts make_composite_parts(const LabeledScene& bg_scene,
                                           const ObjectRecord& target,
                                           const LabeledScene& source_scene,
                                           const ObjectRecord& source, double feather_band) {
  if (target.image_id != bg_scene.scene_id)
    throw ParamError("make_composite: target does not belong to the background scene");
  if (source.image_id != source_scene.scene_id)
    throw ParamError("make_composite: source does not belong to the source scene");
  CompositeParts parts;
  auto [img, mask] = warp_to_bbox(source_scene.image, source.mask, source.bbox, target.bbox,
                                  bg_scene.image.width, bg_scene.image.height);
  parts.warped_fg = std::move(img);
  parts.warped_mask = std::move(mask);
  parts.feathered_alpha = feather_mask(parts.warped_mask, feather_band);
  return parts;
}

inline Image make_composite(const LabeledScene& bg_scene, const ObjectRecord& target,
                            const LabeledScene& source_scene, const ObjectRecord& source,
                            double feather_band) {
  CompositeParts parts = make_composite_parts(bg_scene, target, source_scene, source, feather_band);
  return alpha_composite(parts.warped_fg, bg_scene.image, parts.feathered_alpha);
}

// ---------------------------------------------------------------------------
// Region proposals
//
// Stand-in for a full object-proposal system: quantize colors to 8 levels per
// channel, take 4-connected components, fold components below 1% of the image
// into their largest neighbor, then keep regions passing the 5-50% area rule.
// ---------------------------------------------------------------------------

inline std::vector<Mask> propose_regions(const Image& image, uint64_t seed) {
  const int w = image.width, h = image.height;
  const size_t n = size_t(w) * h;
  std::vector<int> code(n);
  for (size_t i = 0; i < n; ++i) {
    int r = std::min(7, int(image.px[3 * i + 0] * 8.f));
    int g = std::min(7, int(image.px[3 * i + 1] * 8.f));
    int b = std::min(7, int(image.px[3 * i + 2] * 8.f));
    code[i] = r * 64 + g * 8 + b;
  }

  // 4-connected components over equal quantized colors
  std::vector<int> comp(n, -1);
  int ncomp = 0;
  std::vector<size_t> stack;
  for (size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    int id = ncomp++;
    stack.push_back(start);
    comp[start] = id;
    while (!stack.empty()) {
      size_t i = stack.back();
      stack.pop_back();
      int x = int(i % w), y = int(i / w);
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        size_t j = size_t(ny) * w + nx;
        if (comp[j] < 0 && code[j] == code[i]) {
          comp[j] = id;
          stack.push_back(j);
        }
      }
    }
  }

  // iteratively merge sub-1% components into their largest touching neighbor
  std::vector<int> parent(static_cast<size_t>(ncomp));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[size_t(a)] != a) a = parent[size_t(a)] = parent[size_t(parent[size_t(a)])];
    return a;
  };
  const size_t min_keep = std::max<size_t>(1, n / 100);
  for (int pass = 0; pass < 64; ++pass) {
    std::vector<size_t> size(size_t(ncomp), 0);
    for (size_t i = 0; i < n; ++i) size[size_t(find(comp[i]))]++;
    std::map<std::pair<int, int>, size_t> contact;  // (small comp, neighbor) -> touch count
    for (size_t i = 0; i < n; ++i) {
      int a = find(comp[i]);
      int x = int(i % w), y = int(i / w);
      if (x + 1 < w) {
        int b = find(comp[i + 1]);
        if (a != b) {
          contact[{a, b}]++;
          contact[{b, a}]++;
        }
      }
      if (y + 1 < h) {
        int b = find(comp[i + w]);
        if (a != b) {
          contact[{a, b}]++;
          contact[{b, a}]++;
        }
      }
    }
    bool changed = false;
    for (int c = 0; c < ncomp; ++c) {
      int rc = find(c);
      if (rc != c || size[size_t(rc)] == 0 || size[size_t(rc)] >= min_keep) continue;
      int best = -1;
      size_t best_size = 0;
      for (const auto& [key, touches] : contact) {
        (void)touches;
        if (key.first != rc) continue;
        int nb = find(key.second);
        if (nb == rc) continue;
        if (size[size_t(nb)] > best_size) {
          best_size = size[size_t(nb)];
          best = nb;
        }
      }
      if (best >= 0) {
        parent[size_t(rc)] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }

  // collect surviving regions in the 5-50% band
  std::map<int, size_t> final_size;
  for (size_t i = 0; i < n; ++i) final_size[find(comp[i])]++;
  std::vector<std::pair<int, size_t>> kept;  // (component, first pixel)
  std::map<int, size_t> first_pixel;
  for (size_t i = 0; i < n; ++i) {
    int c = find(comp[i]);
    if (!first_pixel.count(c)) first_pixel[c] = i;
  }
  for (const auto& [c, sz] : final_size) {
    double frac = double(sz) / double(n);
    if (frac >= 0.05 && frac <= 0.50) kept.push_back({c, first_pixel[c]});
  }
  std::sort(kept.begin(), kept.end(), [&](const auto& a, const auto& b) {
    size_t sa = final_size[a.first], sb = final_size[b.first];
    if (sa != sb) return sa > sb;
    return a.second < b.second;
  });

  std::vector<Mask> out;
  for (const auto& [c, fp] : kept) {
    (void)fp;
    Mask m(w, h);
    for (size_t i = 0; i < n; ++i)
      if (find(comp[i]) == c) m.v[i] = 1.f;
    out.push_back(std::move(m));
  }
  Rng rng(seed);
  rng.shuffle(out);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

enum class Regime { FullySupervised, PartiallySupervised, Unsupervised, RandomPaste };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::FullySupervised: return "FullySupervised";
    case Regime::PartiallySupervised: return "PartiallySupervised";
    case Regime::Unsupervised: return "Unsupervised";
    case Regime::RandomPaste: return "RandomPaste";
  }
  return "?";
}

inline Regime parse_regime(const std::string& tag) {
  if (tag == "FullySupervised" || tag == "fully-supervised") return Regime::FullySupervised;
  if (tag == "PartiallySupervised" || tag == "partially-supervised")
    return Regime::PartiallySupervised;
  if (tag == "Unsupervised" || tag == "unsupervised") return Regime::Unsupervised;
  if (tag == "RandomPaste" || tag == "random-paste") return Regime::RandomPaste;
  throw ParamError("unknown regime tag: " + tag);
}

struct ManifestRecord {
  std::string path;   // relative to the manifest's directory
  std::string label;  // "natural" | "composite"
  std::string regime;
  std::string target_scene;
  int target_instance = -1;  // -1 for natural records
  std::string source_scene;
  int source_instance = -1;
  bool source_is_proposal = false;
  uint64_t seed = 0;
};

struct DatasetManifest {
  std::filesystem::path dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const { return dir / r.path; }
};

inline nlohmann::ordered_json manifest_record_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["label"] = r.label;
  j["regime"] = r.regime;
  nlohmann::ordered_json t;
  t["scene"] = r.target_scene;
  if (r.target_instance >= 0) t["instance"] = r.target_instance;
  j["target"] = t;
  if (!r.source_scene.empty()) {
    nlohmann::ordered_json s;
    s["scene"] = r.source_scene;
    s[r.source_is_proposal ? "proposal" : "instance"] = r.source_instance;
    j["source"] = s;
  }
  j["seed"] = r.seed;
  return j;
}

inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
  for (const auto& r : manifest.records)
    if (!std::filesystem::exists(manifest.dir / r.path))
      throw IoError("write_manifest: missing record path " + (manifest.dir / r.path).string());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("write_manifest: cannot write " + file.string());
  for (const auto& r : manifest.records) out << manifest_record_json(r).dump() << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("load_manifest: cannot open " + file.string());
  DatasetManifest m;
  m.dir = file.parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    ManifestRecord r;
    r.path = j.at("path");
    r.label = j.at("label");
    r.regime = j.at("regime");
    r.target_scene = j.at("target").at("scene");
    if (j.at("target").contains("instance")) r.target_instance = j.at("target").at("instance");
    if (j.contains("source")) {
      r.source_scene = j.at("source").at("scene");
      if (j.at("source").contains("proposal")) {
        r.source_is_proposal = true;
        r.source_instance = j.at("source").at("proposal");
      } else {
        r.source_instance = j.at("source").at("instance");
      }
    }
    r.seed = j.at("seed");
    m.records.push_back(std::move(r));
  }
  return m;
}

struct DatasetOptions {
  int per_target = 1;        // composites per target object (top-k matches)
  double feather_band = 3;
  int unsup_targets_per_image = 1;
};

namespace compdetail {

struct PoolEntry {
  size_t scene_index;
  int instance_index;  // annotated instance or proposal index within its scene
  bool is_proposal;
};

inline std::string relative_or_absolute(const std::filesystem::path& target,
                                        const std::filesystem::path& base) {
  std::filesystem::path rel = target.lexically_relative(base);
  return rel.empty() ? target.generic_string() : rel.generic_string();
}

}  // namespace compdetail

// Builds the natural + composite manifest for one regime over a corpus on
// disk. Composite images are written under out_dir/composites. Deterministic
// in (corpus, regime, seed, opts).
inline DatasetManifest generate_dataset(const Corpus& corpus, Regime regime, uint64_t seed,
                                        const DatasetOptions& opts,
                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (corpus.scenes.empty()) throw ParamError("generate_dataset: empty corpus");
  std::error_code ec;
  fs::create_directories(out_dir / "composites", ec);
  if (!fs::is_directory(out_dir / "composites"))
    throw IoError("generate_dataset: cannot create " + (out_dir / "composites").string());

  std::vector<LabeledScene> scenes = load_all_scenes(corpus);
  const bool targets_annotated =
      regime != Regime::Unsupervised;  // Unsupervised targets come from proposals
  const bool sources_annotated =
      regime == Regime::FullySupervised || regime == Regime::RandomPaste;

  // per-scene proposals where the regime needs them
  std::vector<std::vector<ObjectRecord>> proposals(scenes.size());
  if (!sources_annotated || !targets_annotated) {
    parallel_for(int64_t(scenes.size()), [&](int64_t si) {
      uint64_t pseed = sub_seed(seed, "proposals") ^ uint64_t(si);
      std::vector<Mask> masks = propose_regions(scenes[size_t(si)].image, pseed);
      for (size_t pi = 0; pi < masks.size(); ++pi) {
        ObjectRecord rec;
        rec.image_id = scenes[size_t(si)].scene_id;
        rec.bbox = tight_bbox(masks[pi]);
        rec.area_frac = double(masks[pi].area()) / double(masks[pi].v.size());
        rec.mask = std::move(masks[pi]);
        proposals[size_t(si)].push_back(std::move(rec));
      }
    });
  }

  // flat source pool + descriptors
  std::vector<ObjectRecord> pool;
  std::vector<compdetail::PoolEntry> pool_entries;
  for (size_t si = 0; si < scenes.size(); ++si) {
    if (sources_annotated) {
      for (size_t ii = 0; ii < scenes[si].instances.size(); ++ii) {
        pool.push_back(scenes[si].instances[ii]);
        pool_entries.push_back({si, int(ii), false});
      }
    } else {
      for (size_t pi = 0; pi < proposals[si].size(); ++pi) {
        pool.push_back(proposals[si][pi]);
        pool_entries.push_back({si, int(pi), true});
      }
    }
  }
  std::vector<MaskDescriptor> pool_desc(pool.size());
  if (regime != Regime::RandomPaste)
    parallel_for(int64_t(pool.size()),
                 [&](int64_t i) { pool_desc[size_t(i)] = mask_descriptor(pool[size_t(i)].mask); });

  // targets per scene
  struct Target {
    ObjectRecord rec;
    int instance_index;
    bool is_proposal;
  };
  std::vector<std::vector<Target>> targets(scenes.size());
  for (size_t si = 0; si < scenes.size(); ++si) {
    if (targets_annotated) {
      for (size_t ii = 0; ii < scenes[si].instances.size(); ++ii)
        targets[si].push_back({scenes[si].instances[ii], int(ii), false});
    } else {
      Rng trng(sub_seed(seed, "unsup-targets") ^ uint64_t(si));
      const auto& props = proposals[si];
      if (props.empty()) continue;
      int want = std::min<int>(opts.unsup_targets_per_image, int(props.size()));
      std::vector<int> idx(props.size());
      std::iota(idx.begin(), idx.end(), 0);
      trng.shuffle(idx);
      for (int k = 0; k < want; ++k) targets[si].push_back({props[size_t(idx[size_t(k)])], idx[size_t(k)], true});
    }
  }

  DatasetManifest manifest;
  manifest.dir = out_dir;

  struct Job {
    size_t si;
    size_t ti;
    std::vector<size_t> sources;  // pool indices
    uint64_t seed;
  };
  std::vector<Job> jobs;
  Rng paste_rng(sub_seed(seed, "random-paste"));
  for (size_t si = 0; si < scenes.size(); ++si) {
    for (size_t ti = 0; ti < targets[si].size(); ++ti) {
      const Target& tgt = targets[si][ti];
      Job job{si, ti, {}, sub_seed(seed, "record") ^ (uint64_t(si) << 20) ^ uint64_t(ti)};
      if (regime == Regime::RandomPaste) {
        std::vector<size_t> eligible;
        for (size_t pi = 0; pi < pool.size(); ++pi)
          if (pool[pi].image_id != tgt.rec.image_id) eligible.push_back(pi);
        for (int k = 0; k < opts.per_target && !eligible.empty(); ++k)
          job.sources.push_back(eligible[size_t(paste_rng.uniform_int(int64_t(eligible.size())))]);
      } else if (!pool.empty()) {
        MaskDescriptor td = mask_descriptor(tgt.rec.mask);
        auto ranked =
            find_source_candidates(tgt.rec, pool, size_t(opts.per_target), &pool_desc, &td);
        for (const auto& rc : ranked) job.sources.push_back(rc.pool_index);
      }
      jobs.push_back(std::move(job));
    }
  }

  // composites are independent; render/encode in parallel, record in order
  std::vector<std::vector<ManifestRecord>> job_records(jobs.size());
  parallel_for(int64_t(jobs.size()), [&](int64_t ji) {
    const Job& job = jobs[size_t(ji)];
    const Target& tgt = targets[job.si][job.ti];
    for (size_t k = 0; k < job.sources.size(); ++k) {
      size_t pi = job.sources[k];
      const LabeledScene& src_scene = scenes[pool_entries[pi].scene_index];
      Image comp = make_composite(scenes[job.si], tgt.rec, src_scene, pool[pi], opts.feather_band);
      std::string name = scenes[job.si].scene_id + "_t" + std::to_string(tgt.instance_index) +
                         "_k" + std::to_string(k) + ".png";
      write_png(out_dir / "composites" / name, comp);
      ManifestRecord r;
      r.path = "composites/" + name;
      r.label = "composite";
      r.regime = regime_name(regime);
      r.target_scene = scenes[job.si].scene_id;
      r.target_instance = tgt.instance_index;
      r.source_scene = src_scene.scene_id;
      r.source_instance = pool_entries[pi].instance_index;
      r.source_is_proposal = pool_entries[pi].is_proposal;
      r.seed = job.seed;
      job_records[size_t(ji)].push_back(std::move(r));
    }
  });

  for (size_t si = 0; si < scenes.size(); ++si) {
    ManifestRecord nat;
    nat.path = compdetail::relative_or_absolute(corpus.root / corpus.scenes[si].image_path,
                                                out_dir);
    nat.label = "natural";
    nat.regime = regime_name(regime);
    nat.target_scene = scenes[si].scene_id;
    nat.seed = sub_seed(seed, "natural") ^ uint64_t(si);
    manifest.records.push_back(std::move(nat));
  }
  for (auto& recs : job_records)
    for (auto& r : recs) manifest.records.push_back(std::move(r));

  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

// Splits by target scene: the last ceil(holdout_frac * n_scenes) distinct
// scenes (in first-appearance order) become the held-out part.
inline std::pair<DatasetManifest, DatasetManifest> split_by_scene(const DatasetManifest& manifest,
                                                                  double holdout_frac) {
  std::vector<std::string> scenes;
  for (const auto& r : manifest.records)
    if (std::find(scenes.begin(), scenes.end(), r.target_scene) == scenes.end())
      scenes.push_back(r.target_scene);
  size_t n_holdout = size_t(std::ceil(holdout_frac * double(scenes.size())));
  n_holdout = std::min(n_holdout, scenes.size());
  std::vector<std::string> held(scenes.end() - ptrdiff_t(n_holdout), scenes.end());
  DatasetManifest train, heldout;
  train.dir = heldout.dir = manifest.dir;
  for (const auto& r : manifest.records) {
    bool is_held = std::find(held.begin(), held.end(), r.target_scene) != held.end();
    (is_held ? heldout : train).records.push_back(r);
  }
  return {train, heldout};
}

}  // namespace rforge
