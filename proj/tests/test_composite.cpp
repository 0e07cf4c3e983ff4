#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "rforge/composite.hpp"
#include "oracles.hpp"

using namespace rforge;
namespace fs = std::filesystem;

namespace {

Mask disk_mask(int w, int h, double cx, double cy, double r) {
  Mask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r)
        m.at(x, y) = 1.f;
  return m;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("mask_descriptor basics") {
  SUBCASE("dimensions are always 64x64") {
    Mask m = disk_mask(40, 30, 20, 15, 8);
    MaskDescriptor d = mask_descriptor(m);
    CHECK(d.g.size() == 64 * 64);
  }
  SUBCASE("solid square keeps interior near one, boundary attenuated") {
    Mask m(50, 50, 0.f);
    for (int y = 10; y < 40; ++y)
      for (int x = 10; x < 40; ++x) m.at(x, y) = 1.f;
    MaskDescriptor d = mask_descriptor(m);
    CHECK(d.g[32 * 64 + 32] > 0.99f);
    CHECK(d.g[0] < 0.6f);  // corner of the crop sees the blur falloff
  }
  SUBCASE("translation inside the frame does not change the descriptor") {
    Mask a = disk_mask(64, 64, 20, 20, 9);
    Mask b = disk_mask(64, 64, 37, 29, 9);
    MaskDescriptor da = mask_descriptor(a), db = mask_descriptor(b);
    for (size_t i = 0; i < da.g.size(); ++i)
      CHECK(da.g[i] == doctest::Approx(db.g[i]).epsilon(1e-6));
  }
  SUBCASE("empty mask is rejected") {
    Mask m(8, 8, 0.f);
    CHECK_THROWS_AS(mask_descriptor(m), ParamError);
  }
}

TEST_CASE("shape_ssd") {
  Mask a = disk_mask(32, 32, 16, 16, 10);
  Mask b = disk_mask(32, 32, 16, 16, 5);
  MaskDescriptor da = mask_descriptor(a), db = mask_descriptor(b);

  CHECK(shape_ssd(da, da) == 0.0);
  CHECK(shape_ssd(da, db) == shape_ssd(db, da));
  CHECK(shape_ssd(da, db) > 0.0);

  SUBCASE("all ones vs all zeros is the cell count") {
    MaskDescriptor ones, zeros;
    ones.g.assign(64 * 64, 1.f);
    zeros.g.assign(64 * 64, 0.f);
    CHECK(shape_ssd(ones, zeros) == doctest::Approx(4096.0));
  }
  SUBCASE("random pair matches cell-by-cell accumulation") {
    Rng rng(3);
    MaskDescriptor x, y;
    for (int i = 0; i < 64 * 64; ++i) {
      x.g.push_back(float(rng.uniform()));
      y.g.push_back(float(rng.uniform()));
    }
    double brute = 0;
    for (int i = 0; i < 64 * 64; ++i)
      brute += (double(x.g[i]) - y.g[i]) * (double(x.g[i]) - y.g[i]);
    CHECK(shape_ssd(x, y) == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("find_source_candidates") {
  std::vector<ObjectRecord> pool;
  auto add = [&](const std::string& img, const std::string& cat, const Mask& m) {
    ObjectRecord r;
    r.image_id = img;
    r.category = cat;
    r.mask = m;
    r.bbox = tight_bbox(m);
    r.area_frac = double(m.area()) / double(m.v.size());
    pool.push_back(std::move(r));
  };
  for (int i = 0; i < 6; ++i)
    add("img" + std::to_string(i), "disk", disk_mask(48, 48, 24, 24, 7.0 + i));
  Mask sq(48, 48, 0.f);
  for (int y = 12; y < 36; ++y)
    for (int x = 12; x < 36; ++x) sq.at(x, y) = 1.f;
  add("img9", "square", sq);

  ObjectRecord target = pool[2];  // disk radius 9 in img2

  SUBCASE("self-image exclusion leaves only others; pool of self is empty") {
    std::vector<ObjectRecord> self_only = {target};
    CHECK(find_source_candidates(target, self_only, 5).empty());
  }
  SUBCASE("k larger than eligible pool returns all eligible") {
    auto ranked = find_source_candidates(target, pool, 100);
    CHECK(ranked.size() == 5);  // 6 disks minus self; square excluded by category
  }
  SUBCASE("top-1 equals brute-force argmin of shape_ssd") {
    auto ranked = find_source_candidates(target, pool, 1);
    REQUIRE(ranked.size() == 1);
    MaskDescriptor td = mask_descriptor(target.mask);
    double best = 1e300;
    size_t best_i = 0;
    for (size_t i = 0; i < pool.size(); ++i) {
      if (pool[i].image_id == target.image_id || pool[i].category != target.category) continue;
      double ssd = shape_ssd(td, mask_descriptor(pool[i].mask));
      if (ssd < best) {
        best = ssd;
        best_i = i;
      }
    }
    CHECK(ranked[0].pool_index == best_i);
    CHECK(ranked[0].ssd == doctest::Approx(best));
  }
  SUBCASE("ranking ascends") {
    auto ranked = find_source_candidates(target, pool, 10);
    for (size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i].ssd >= ranked[i - 1].ssd);
  }
}

TEST_CASE("make_composite") {
  CorpusConfig cfg;
  cfg.width = 96;
  cfg.height = 96;
  LabeledScene bg = make_scene(31, 0, cfg);
  LabeledScene src = make_scene(31, 1, cfg);

  SUBCASE("self replacement with band 1 is bit identical") {
    Image out = make_composite(bg, bg.instances[0], bg, bg.instances[0], 1);
    CHECK(out.px == bg.image.px);
  }
  SUBCASE("output dimensions follow the background") {
    Image out = make_composite(bg, bg.instances[0], src, src.instances[0], 3);
    CHECK(out.width == bg.image.width);
    CHECK(out.height == bg.image.height);
  }
  SUBCASE("inserted region carries the source cast statistics") {
    const ObjectRecord& target = bg.instances[0];
    const ObjectRecord& source = src.instances[1];
    CompositeParts parts = make_composite_parts(bg, target, src, source, 1);
    Image comp = alpha_composite(parts.warped_fg, bg.image, parts.feathered_alpha);
    auto inserted = channel_mean(comp, [&](size_t i) { return parts.warped_mask.v[i] > 0.f; });
    auto src_obj = channel_mean(src.image, [&](size_t i) { return source.mask.v[i] > 0.f; });
    for (int c = 0; c < 3; ++c) CHECK(inserted[c] == doctest::Approx(src_obj[c]).epsilon(0.08));
  }
  SUBCASE("membership preconditions are enforced") {
    CHECK_THROWS_AS(make_composite(bg, src.instances[0], src, src.instances[0], 1), ParamError);
  }
}

TEST_CASE("propose_regions") {
  CorpusConfig cfg;
  cfg.width = 96;
  cfg.height = 96;
  LabeledScene scene = make_scene(77, 3, cfg);
  std::vector<Mask> props = propose_regions(scene.image, 5);
  CHECK(!props.empty());
  for (const auto& m : props) {
    double frac = double(m.area()) / double(m.v.size());
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.50);
    CHECK(m.width == 96);
    CHECK(m.height == 96);
  }
  SUBCASE("deterministic in image and seed") {
    std::vector<Mask> again = propose_regions(scene.image, 5);
    REQUIRE(again.size() == props.size());
    for (size_t i = 0; i < props.size(); ++i) CHECK(again[i].v == props[i].v);
  }
  SUBCASE("masks are 4-connected") {
    for (const auto& m : props) {
      std::vector<char> seen(m.v.size(), 0);
      std::vector<std::pair<int, int>> stack;
      size_t area = m.area(), visited = 0;
      for (int y = 0; y < m.height && stack.empty(); ++y)
        for (int x = 0; x < m.width && stack.empty(); ++x)
          if (m.at(x, y) > 0.f) {
            stack.push_back({x, y});
            seen[size_t(y) * m.width + x] = 1;
          }
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        ++visited;
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = x + dx[k], ny = y + dy[k];
          if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
          size_t idx = size_t(ny) * m.width + nx;
          if (m.v[idx] > 0.f && !seen[idx]) {
            seen[idx] = 1;
            stack.push_back({nx, ny});
          }
        }
      }
      CHECK(visited == area);
    }
  }
}

TEST_CASE("generate_dataset regimes") {
  CorpusConfig cfg;
  cfg.scenes = 6;
  cfg.width = 96;
  cfg.height = 96;
  fs::path root = fs::temp_directory_path() / "rforge_composite_tests";
  fs::remove_all(root);
  Corpus corpus = generate_corpus(cfg, 17, root / "corpus");

  SUBCASE("FullySupervised: one composite per annotated instance, labels sane") {
    DatasetManifest m =
        generate_dataset(corpus, Regime::FullySupervised, 3, DatasetOptions{}, root / "fs");
    size_t naturals = 0, composites = 0;
    for (const auto& r : m.records) {
      CHECK((r.label == "natural" || r.label == "composite"));
      if (r.label == "natural") ++naturals;
      else ++composites;
      CHECK(fs::exists(m.resolve(r)));
    }
    CHECK(naturals == 6);
    size_t instances = 0;
    for (const auto& s : corpus.scenes) instances += s.instances.size();
    CHECK(composites == instances);
  }

  SUBCASE("manifest load matches what was generated") {
    DatasetManifest m =
        generate_dataset(corpus, Regime::FullySupervised, 3, DatasetOptions{}, root / "fs1");
    DatasetManifest m1 = load_manifest(root / "fs1" / "manifest.jsonl");
    REQUIRE(m1.records.size() == m.records.size());
    CHECK(m1.records.back().path == m.records.back().path);
    CHECK(m1.records.back().seed == m.records.back().seed);
    CHECK(m1.records.back().target_instance == m.records.back().target_instance);
  }

  SUBCASE("Unsupervised and PartiallySupervised run on proposals") {
    DatasetManifest mu =
        generate_dataset(corpus, Regime::Unsupervised, 3, DatasetOptions{}, root / "un");
    bool any_composite = false;
    for (const auto& r : mu.records)
      if (r.label == "composite") {
        any_composite = true;
        CHECK(r.source_is_proposal);
      }
    CHECK(any_composite);

    DatasetManifest mp =
        generate_dataset(corpus, Regime::PartiallySupervised, 3, DatasetOptions{}, root / "ps");
    for (const auto& r : mp.records)
      if (r.label == "composite") {
        CHECK(r.target_instance >= 0);
        CHECK(r.source_is_proposal);
      }
  }

  SUBCASE("RandomPaste skips shape matching but produces composites") {
    DatasetManifest mr =
        generate_dataset(corpus, Regime::RandomPaste, 3, DatasetOptions{}, root / "rp");
    size_t composites = 0;
    for (const auto& r : mr.records)
      if (r.label == "composite") ++composites;
    CHECK(composites > 0);
  }

  SUBCASE("unknown regime tag is rejected") {
    CHECK_THROWS_AS(parse_regime("SortOfSupervised"), ParamError);
  }
}

TEST_CASE("dataset manifests are byte reproducible under a fixed seed") {
  CorpusConfig cfg;
  cfg.scenes = 3;
  cfg.width = 64;
  cfg.height = 64;
  fs::path root = fs::temp_directory_path() / "rforge_manifest_bytes";
  fs::remove_all(root);
  // parallel layouts so relative paths agree byte for byte
  generate_corpus(cfg, 2, root / "runA" / "corpus");
  generate_corpus(cfg, 2, root / "runB" / "corpus");
  Corpus ca = load_corpus(root / "runA" / "corpus");
  Corpus cb = load_corpus(root / "runB" / "corpus");
  generate_dataset(ca, Regime::FullySupervised, 9, DatasetOptions{}, root / "runA" / "dataset");
  generate_dataset(cb, Regime::FullySupervised, 9, DatasetOptions{}, root / "runB" / "dataset");
  CHECK(file_bytes(root / "runA" / "dataset" / "manifest.jsonl") ==
        file_bytes(root / "runB" / "dataset" / "manifest.jsonl"));
}

TEST_CASE("split_by_scene partitions records") {
  DatasetManifest m;
  m.dir = ".";
  for (int s = 0; s < 10; ++s) {
    ManifestRecord r;
    r.path = "x";
    r.label = "natural";
    r.target_scene = "scene_" + std::to_string(s);
    m.records.push_back(r);
    r.label = "composite";
    m.records.push_back(r);
  }
  auto [train, held] = split_by_scene(m, 0.2);
  CHECK(train.records.size() == 16);
  CHECK(held.records.size() == 4);
  for (const auto& r : held.records)
    CHECK((r.target_scene == "scene_8" || r.target_scene == "scene_9"));
}
