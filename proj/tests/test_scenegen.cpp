#include "doctest.h"

#include <deque>
#include <filesystem>
#include <fstream>
#include <map>

#include "rforge/scenegen.hpp"

using namespace rforge;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.scenes = 4;
  cfg.width = 64;
  cfg.height = 64;
  return cfg;
}

bool mask_connected_4(const Mask& m) {
  size_t area = m.area();
  if (area == 0) return false;
  std::vector<char> seen(m.v.size(), 0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < m.height && queue.empty(); ++y)
    for (int x = 0; x < m.width && queue.empty(); ++x)
      if (m.at(x, y) > 0.f) {
        queue.push_back({x, y});
        seen[size_t(y) * m.width + x] = 1;
      }
  size_t visited = 0;
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    ++visited;
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
      size_t idx = size_t(ny) * m.width + nx;
      if (m.v[idx] > 0.f && !seen[idx]) {
        seen[idx] = 1;
        queue.push_back({nx, ny});
      }
    }
  }
  return visited == area;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("make_scene is deterministic in seed") {
  CorpusConfig cfg = small_config();
  LabeledScene a = make_scene(123, 2, cfg);
  LabeledScene b = make_scene(123, 2, cfg);
  CHECK(a.image.px == b.image.px);
  REQUIRE(a.instances.size() == b.instances.size());
  for (size_t i = 0; i < a.instances.size(); ++i)
    CHECK(a.instances[i].mask.v == b.instances[i].mask.v);
  LabeledScene c = make_scene(124, 2, cfg);
  CHECK(a.image.px != c.image.px);
}

TEST_CASE("identity cast leaves the base render untouched") {
  CorpusConfig cfg = small_config();
  SceneSpec spec = sample_scene_spec(99, cfg, {"ellipse_flat", "box_stripe"});
  LabeledScene cast_scene = render_scene(spec);
  LabeledScene base_scene = render_scene(with_cast(spec, ChannelCast{}));
  // the recorded cast applied to the base reproduces the stored image exactly
  Image recon = apply_cast(base_scene.image, spec.cast);
  CHECK(recon.px == cast_scene.image.px);
  // and an identity cast is a no-op by the same path
  Image recon_id = apply_cast(base_scene.image, ChannelCast{});
  CHECK(recon_id.px == base_scene.image.px);
}

TEST_CASE("cast shifts per-channel means linearly on unclamped pixels") {
  CorpusConfig cfg = small_config();
  SceneSpec spec = sample_scene_spec(7, cfg, {"poly_flat", "ellipse_stripe"});
  spec.cast.gains = {1.2, 0.85, 1.0};
  spec.cast.biases = {0.05, -0.04, 0.08};
  LabeledScene base = render_scene(with_cast(spec, ChannelCast{}));
  LabeledScene cast = render_scene(spec);
  for (int c = 0; c < 3; ++c) {
    double sum_base = 0, sum_cast = 0;
    size_t n = 0;
    for (size_t i = 0; i < base.image.pixel_count(); ++i) {
      double v = spec.cast.gains[c] * base.image.px[3 * i + c] + spec.cast.biases[c];
      if (v <= 0.0 || v >= 1.0) continue;  // exclude clamped pixels
      sum_base += base.image.px[3 * i + c];
      sum_cast += cast.image.px[3 * i + c];
      ++n;
    }
    REQUIRE(n > 0);
    double mean_base = sum_base / double(n), mean_cast = sum_cast / double(n);
    CHECK(mean_cast ==
          doctest::Approx(spec.cast.gains[c] * mean_base + spec.cast.biases[c]).epsilon(1e-5));
  }
}

TEST_CASE("scene instances satisfy the area filter, disjointness and connectivity") {
  CorpusConfig cfg;
  cfg.width = 128;
  cfg.height = 128;
  for (int s = 0; s < 12; ++s) {
    LabeledScene scene = make_scene(42, s, cfg);
    REQUIRE(scene.instances.size() == 2);
    for (const auto& inst : scene.instances) {
      CHECK(inst.area_frac >= 0.05);
      CHECK(inst.area_frac <= 0.50);
      CHECK(mask_connected_4(inst.mask));
      CHECK(inst.bbox.inside(cfg.width, cfg.height));
      BBox tight = tight_bbox(inst.mask);
      CHECK(tight.x0 == inst.bbox.x0);
      CHECK(tight.y1 == inst.bbox.y1);
    }
    // pairwise disjoint
    const auto& a = scene.instances[0].mask;
    const auto& b = scene.instances[1].mask;
    for (size_t i = 0; i < a.v.size(); ++i) CHECK(!(a.v[i] > 0.f && b.v[i] > 0.f));
  }
}

TEST_CASE("generate_corpus writes a loadable deterministic index") {
  CorpusConfig cfg = small_config();
  fs::path root = fs::temp_directory_path() / "rforge_scenegen_tests";
  fs::remove_all(root);
  fs::path dir_a = root / "a", dir_b = root / "b";
  Corpus ca = generate_corpus(cfg, 5, dir_a);
  Corpus cb = generate_corpus(cfg, 5, dir_b);
  CHECK(ca.scenes.size() == 4);
  CHECK(file_bytes(dir_a / "index.jsonl") == file_bytes(dir_b / "index.jsonl"));
  CHECK(file_bytes(dir_a / ca.scenes[1].image_path) == file_bytes(dir_b / cb.scenes[1].image_path));

  Corpus loaded = load_corpus(dir_a);
  REQUIRE(loaded.scenes.size() == ca.scenes.size());
  CHECK(loaded.scenes[2].scene_id == ca.scenes[2].scene_id);
  CHECK(loaded.scenes[2].cast.gains == ca.scenes[2].cast.gains);
  CHECK(loaded.scenes[2].instances[0].category == ca.scenes[2].instances[0].category);
  CHECK(loaded.scenes[2].instances[0].bbox.x0 == ca.scenes[2].instances[0].bbox.x0);

  LabeledScene scene = load_scene(loaded, 0);
  CHECK(scene.image.width == cfg.width);
  REQUIRE(scene.instances.size() == 2);
  CHECK(scene.instances[0].mask.area() > 0);

  SUBCASE("single scene corpus has one index entry") {
    CorpusConfig one = cfg;
    one.scenes = 1;
    generate_corpus(one, 9, root / "one");
    std::ifstream f(root / "one" / "index.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ++lines;
    CHECK(lines == 1);
  }
}

TEST_CASE("generate_corpus validates config and destination") {
  CorpusConfig cfg = small_config();
  cfg.scenes = 0;
  CHECK_THROWS_AS(generate_corpus(cfg, 1, fs::temp_directory_path() / "never"), ParamError);
  cfg.scenes = 1;
  cfg.categories.clear();
  CHECK_THROWS_AS(generate_corpus(cfg, 1, fs::temp_directory_path() / "never"), ParamError);
  CorpusConfig ok = small_config();
  CHECK_THROWS_AS(generate_corpus(ok, 1, "/proc/definitely/not/writable"), IoError);
}

TEST_CASE("category distribution follows the round-robin plan") {
  CorpusConfig cfg = small_config();
  cfg.scenes = 6;  // 12 instances over 6 categories -> exactly 2 each
  fs::path dir = fs::temp_directory_path() / "rforge_scenegen_cats";
  fs::remove_all(dir);
  Corpus c = generate_corpus(cfg, 11, dir);
  std::map<std::string, int> counts;
  for (const auto& s : c.scenes)
    for (const auto& i : s.instances) counts[i.category]++;
  for (const auto& cat : cfg.categories) CHECK(counts[cat] == 2);
}
