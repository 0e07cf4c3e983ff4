#include "doctest.h"

#include <filesystem>

#include "rforge/coloropt.hpp"
#include "oracles.hpp"

using namespace rforge;
namespace fs = std::filesystem;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

CompositeProblem random_problem(Rng& rng, int w, int h, double w_reg = 50.0) {
  Image fg(w, h), bg(w, h);
  for (auto& p : fg.px) p = float(rng.uniform());
  for (auto& p : bg.px) p = float(rng.uniform());
  Mask alpha(w, h, 0.f);
  for (int y = h / 4; y < 3 * h / 4; ++y)
    for (int x = w / 4; x < 3 * w / 4; ++x)
      alpha.at(x, y) = rng.uniform() < 0.3 ? float(rng.uniform(0.2, 1.0)) : 1.f;
  return CompositeProblem(std::move(fg), std::move(bg), std::move(alpha), w_reg);
}

Network<double> random_small_net(uint64_t seed) {
  return network_cast<double>(build_network<float>(seed, 16, 16, {6}, 12));
}

ColorAdjust random_adjust(Rng& rng) {
  ColorAdjust g;
  for (int c = 0; c < 3; ++c) {
    g.gains[c] = rng.uniform(0.6, 1.6);
    g.biases[c] = rng.uniform(-0.2, 0.2);
  }
  return g;
}

// keeps the finite-difference check away from the kink set: any pixel whose
// absolute-value argument could change sign within the FD step would corrupt
// the quotient
bool near_kink(const ColorAdjust& g, const CompositeProblem& p) {
  const double margin = 1e-3;  // 10x the 1e-4 FD step, scaled by |d arg/d x| <= ~2
  for (size_t i : p.fg_pixels) {
    double delta[3];
    double norm2 = 0;
    for (int c = 0; c < 3; ++c) {
      delta[c] = (g.gains[c] - 1.0) * p.fg.px[3 * i + c] + g.biases[c];
      norm2 += delta[c] * delta[c];
    }
    if (std::sqrt(norm2) < margin) return true;
    if (std::abs(delta[0] - delta[1]) < margin || std::abs(delta[0] - delta[2]) < margin ||
        std::abs(delta[1] - delta[2]) < margin)
      return true;
  }
  return false;
}

}  // namespace

TEST_CASE("apply_adjust") {
  Rng rng(3);
  CompositeProblem p = random_problem(rng, 12, 10);

  SUBCASE("identity reproduces the cut-and-paste composite bit-exactly") {
    Image direct = alpha_composite(p.fg, p.bg, p.alpha);
    Image adjusted = apply_adjust(ColorAdjust::identity(), p);
    CHECK(adjusted.px == direct.px);
  }
  SUBCASE("alpha identically zero returns the background for any adjustment") {
    Image fg(6, 6, 0.9f), bg(6, 6, 0.3f);
    Mask alpha(6, 6, 0.f);
    CompositeProblem p0(fg, bg, alpha, 50.0);
    ColorAdjust g{{2.0, 0.5, 1.3}, {0.2, -0.1, 0.4}};
    CHECK(apply_adjust(g, p0).px == bg.px);
  }
  SUBCASE("hand-computed channel values") {
    Image fg(2, 1), bg(2, 1, 0.5f);
    fg.px = {0.3f, 0.4f, 0.6f, 0.2f, 0.1f, 0.9f};
    Mask alpha(2, 1, 1.f);
    CompositeProblem p2(fg, bg, alpha, 50.0);
    ColorAdjust g{{2.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
    Image out = apply_adjust(g, p2);
    CHECK(out.px[0] == doctest::Approx(0.6));   // 2*0.3
    CHECK(out.px[1] == doctest::Approx(0.4));
    CHECK(out.px[3] == doctest::Approx(0.4));   // 2*0.2
    CHECK(out.px[5] == doctest::Approx(0.9));
  }
}

TEST_CASE("reg_penalty") {
  SUBCASE("identity adjustment costs nothing") {
    Rng rng(5);
    CompositeProblem p = random_problem(rng, 9, 9);
    CHECK(reg_penalty(ColorAdjust::identity(), p) == 0.0);
  }
  SUBCASE("equal shift on all channels: no hue term, sqrt(3)*shift per pixel") {
    Image fg(4, 4);
    Rng rng(6);
    for (auto& v : fg.px) v = float(rng.uniform(0.2, 0.8));
    Image bg(4, 4, 0.5f);
    Mask alpha(4, 4, 1.f);
    CompositeProblem p(fg, bg, alpha, 50.0);
    ColorAdjust g{{1, 1, 1}, {0.1, 0.1, 0.1}};
    CHECK(reg_penalty(g, p) == doctest::Approx(std::sqrt(3.0) * 0.1).epsilon(1e-6));
  }
  SUBCASE("single gray pixel with one gain bumped gives 0.3") {
    Image fg(1, 1);
    fg.px = {0.5f, 0.5f, 0.5f};
    Image bg(1, 1, 0.5f);
    Mask alpha(1, 1, 1.f);
    CompositeProblem p(fg, bg, alpha, 50.0);
    ColorAdjust g{{1.2, 1.0, 1.0}, {0, 0, 0}};
    CHECK(reg_penalty(g, p) == doctest::Approx(0.3).epsilon(1e-6));
  }
  SUBCASE("no foreground pixels is an error") {
    Image fg(3, 3), bg(3, 3);
    Mask alpha(3, 3, 0.f);
    CompositeProblem p(fg, bg, alpha, 50.0);
    CHECK_THROWS_AS(reg_penalty(ColorAdjust::identity(), p), ParamError);
  }
  SUBCASE("nonnegative always") {
    Rng rng(7);
    CompositeProblem p = random_problem(rng, 8, 8);
    for (int t = 0; t < 20; ++t) CHECK(reg_penalty(random_adjust(rng), p) >= 0.0);
  }
}

TEST_CASE("energy") {
  Rng rng(8);
  CompositeProblem p = random_problem(rng, 16, 16);
  Network<double> net = random_small_net(2);

  SUBCASE("default weight is 50") {
    CompositeProblem q(p.fg, p.bg, p.alpha);
    CHECK(q.w == 50.0);
  }
  SUBCASE("identity energy is minus the composite score") {
    CHECK(energy(net, ColorAdjust::identity(), p) ==
          -score_composite(net, ColorAdjust::identity(), p));
  }
  SUBCASE("recomposition: energy equals the two terms evaluated independently") {
    for (int t = 0; t < 6; ++t) {
      ColorAdjust g = random_adjust(rng);
      CHECK(energy(net, g, p) == -score_composite(net, g, p) + p.w * reg_penalty(g, p));
    }
  }
}

TEST_CASE("energy_gradient") {
  Rng rng(9);

  SUBCASE("alpha identically zero gives a zero gradient in all six coordinates") {
    Image fg(8, 8, 0.7f), bg(8, 8, 0.2f);
    Mask alpha(8, 8, 0.f);
    CompositeProblem p(fg, bg, alpha, 50.0);
    Network<double> net = random_small_net(4);
    auto g = energy_gradient(net, random_adjust(rng), p);
    for (double v : g) CHECK(v == 0.0);
  }
  SUBCASE("zero network reduces to the regularizer sub-gradient") {
    CompositeProblem p = random_problem(rng, 10, 10);
    Network<double> net = random_small_net(4);
    for (auto& l : net.layers) {
      std::fill(l.w.v.begin(), l.w.v.end(), 0.0);
      std::fill(l.b.v.begin(), l.b.v.end(), 0.0);
    }
    // identity has both reg terms at their kink minimum: sub-gradient is zero
    auto g0 = energy_gradient(net, ColorAdjust::identity(), p);
    for (double v : g0) CHECK(v == 0.0);
  }
  SUBCASE("matches central finite differences away from kinks") {
    int checked = 0;
    for (int trial = 0; trial < 120 && checked < 20; ++trial) {
      Rng trng(100 + trial);
      CompositeProblem p = random_problem(trng, 12, 12, trng.uniform(0, 80));
      Network<double> net = random_small_net(10 + trial);
      ColorAdjust g = random_adjust(trng);
      if (near_kink(g, p)) continue;
      auto grad = energy_gradient(net, g, p);
      auto flat = g.flat();
      bool ok = true;
      for (int j = 0; j < 6; ++j) {
        auto fd_at = [&](double h) {
          auto up = flat, dn = flat;
          up[size_t(j)] += h;
          dn[size_t(j)] -= h;
          double fu = energy(net, ColorAdjust::from_flat(up), p);
          double fd = energy(net, ColorAdjust::from_flat(dn), p);
          return (fu - fd) / (2 * h);
        };
        if (rel_err(grad[size_t(j)], fd_at(1e-4)) <= 1e-3) continue;
        // a relu/pool switch inside the interval is a kink of the energy
        // itself; a smaller step must then converge to the analytic value
        if (rel_err(grad[size_t(j)], fd_at(1e-6)) > 1e-3) ok = false;
      }
      CHECK(ok);
      ++checked;
    }
    CHECK(checked >= 20);
  }
}

TEST_CASE("optimize_color") {
  Rng rng(11);

  SUBCASE("zero network: the regularizer alone is minimized at identity") {
    CompositeProblem p = random_problem(rng, 10, 10);
    Network<double> net = random_small_net(5);
    for (auto& l : net.layers) {
      std::fill(l.w.v.begin(), l.w.v.end(), 0.0);
      std::fill(l.b.v.begin(), l.b.v.end(), 0.0);
    }
    OptimizeOptions opts;
    opts.starts = 4;
    opts.max_iterations = 60;
    OptimizeResult res = optimize_color(net, p, opts);
    CHECK(res.adjust.is_identity());
    CHECK(res.energy == 0.0);
  }
  SUBCASE("result stays inside the box and never beats the identity start upward") {
    for (int t = 0; t < 3; ++t) {
      CompositeProblem p = random_problem(rng, 12, 12, 5.0);
      Network<double> net = random_small_net(40 + t);
      OptimizeOptions opts;
      opts.starts = 4;
      opts.max_iterations = 40;
      opts.seed = t;
      OptimizeResult res = optimize_color(net, p, opts);
      CHECK(res.energy <= res.energy_identity);
      for (int c = 0; c < 3; ++c) {
        CHECK(res.adjust.gains[c] >= opts.gain_box[0]);
        CHECK(res.adjust.gains[c] <= opts.gain_box[1]);
        CHECK(res.adjust.biases[c] >= opts.bias_box[0]);
        CHECK(res.adjust.biases[c] <= opts.bias_box[1]);
      }
      CHECK(res.starts.size() == 4);
    }
  }
  SUBCASE("deterministic in seed") {
    CompositeProblem p = random_problem(rng, 10, 10, 10.0);
    Network<double> net = random_small_net(7);
    OptimizeOptions opts;
    opts.starts = 3;
    opts.max_iterations = 25;
    opts.seed = 42;
    OptimizeResult a = optimize_color(net, p, opts);
    OptimizeResult b = optimize_color(net, p, opts);
    CHECK(a.adjust.gains == b.adjust.gains);
    CHECK(a.adjust.biases == b.adjust.biases);
    CHECK(a.energy == b.energy);
  }
  SUBCASE("alpha identically zero is rejected") {
    Image fg(4, 4), bg(4, 4);
    Mask alpha(4, 4, 0.f);
    CompositeProblem p(fg, bg, alpha, 50.0);
    Network<double> net = random_small_net(1);
    CHECK_THROWS_AS(optimize_color(net, p), ParamError);
  }
}

TEST_CASE("reinhard_match") {
  SUBCASE("matching statistics yield the identity adjustment") {
    // same pixel population in fg region and visible bg
    Image fg(4, 1), bg(4, 1);
    fg.px = {0.1f, 0.1f, 0.1f, 0.3f, 0.3f, 0.3f, 0.1f, 0.1f, 0.1f, 0.3f, 0.3f, 0.3f};
    bg.px = fg.px;
    Mask alpha(4, 1, 0.f);
    alpha.at(0, 0) = alpha.at(1, 0) = 1.f;  // fg = {0.1, 0.3}, bg visible = {0.1, 0.3}
    CompositeProblem p(fg, bg, alpha, 50.0);
    ColorAdjust g = reinhard_match(p);
    for (int c = 0; c < 3; ++c) {
      CHECK(g.gains[c] == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(g.biases[c] == doctest::Approx(0.0).epsilon(1e-9));
    }
  }
  SUBCASE("closed form: fg mu 0.2 sd 0.1, bg mu 0.5 sd 0.2 gives gain 2 bias 0.1") {
    Image fg(4, 1), bg(4, 1);
    // fg pixels {0.1, 0.3} on all channels; bg visible {0.3, 0.7}
    fg.px = {0.1f, 0.1f, 0.1f, 0.3f, 0.3f, 0.3f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    bg.px = {0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.3f, 0.3f, 0.3f, 0.7f, 0.7f, 0.7f};
    Mask alpha(4, 1, 0.f);
    alpha.at(0, 0) = alpha.at(1, 0) = 1.f;
    CompositeProblem p(fg, bg, alpha, 50.0);
    ColorAdjust g = reinhard_match(p);
    for (int c = 0; c < 3; ++c) {
      CHECK(g.gains[c] == doctest::Approx(2.0).epsilon(1e-6));
      CHECK(g.biases[c] == doctest::Approx(0.1).epsilon(1e-6));
    }
    // adjusted foreground mean equals the background mean
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (size_t i : p.fg_pixels) mean += g.gains[c] * p.fg.px[3 * i + c] + g.biases[c];
      mean /= double(p.fg_pixels.size());
      CHECK(mean == doctest::Approx(0.5).epsilon(1e-6));
    }
  }
  SUBCASE("zero foreground variance falls back to a pure shift") {
    Image fg(4, 1, 0.2f), bg(4, 1);
    bg.px = {0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.3f, 0.3f, 0.3f, 0.7f, 0.7f, 0.7f};
    Mask alpha(4, 1, 0.f);
    alpha.at(0, 0) = alpha.at(1, 0) = 1.f;
    CompositeProblem p(fg, bg, alpha, 50.0);
    ColorAdjust g = reinhard_match(p);
    for (int c = 0; c < 3; ++c) {
      CHECK(g.gains[c] == 1.0);
      CHECK(g.biases[c] == doctest::Approx(0.3).epsilon(1e-6));
    }
  }
  SUBCASE("needs two pixels on each side") {
    Image fg(2, 1), bg(2, 1);
    Mask alpha(2, 1, 1.f);
    alpha.at(0, 0) = 0.f;
    CompositeProblem p(fg, bg, alpha, 50.0);
    CHECK_THROWS_AS(reinhard_match(p), ParamError);
  }
}

TEST_CASE("mine_hard_negatives smoke run") {
  fs::path root = fs::temp_directory_path() / "rforge_mining_tests";
  fs::remove_all(root);
  CorpusConfig ccfg;
  ccfg.scenes = 6;
  ccfg.width = 64;
  ccfg.height = 64;
  Corpus corpus = generate_corpus(ccfg, 21, root / "corpus");
  DatasetManifest manifest =
      generate_dataset(corpus, Regime::FullySupervised, 4, DatasetOptions{}, root / "dataset");
  CHECK(derive_corpus_root(manifest) == (root / "corpus"));

  Network<float> net0 = build_network<float>(5, 32, 32, {6}, 12);
  MiningConfig cfg;
  cfg.per_round = 3;
  cfg.opt.starts = 2;
  cfg.opt.max_iterations = 10;
  cfg.retrain = TrainConfig{0.01, 0.1, 1000, 0.9, 8, 40, 10.0, 0};
  cfg.seed = 2;
  cfg.work_dir = root / "mining";
  std::vector<Network<float>> models = mine_hard_negatives(net0, manifest, corpus, 2, cfg);
  REQUIRE(models.size() == 3);
  // round 0 entry is the input model, unmodified
  for (size_t li = 0; li < net0.layers.size(); ++li)
    CHECK(models[0].layers[li].w.v == net0.layers[li].w.v);
  // mined images exist on disk
  CHECK(fs::exists(root / "mining" / "mined" / "round1_0.png"));
  CHECK(fs::exists(root / "mining" / "mined" / "round2_0.png"));
  // the retrained rounds changed the parameters
  CHECK(models[1].layers[0].w.v != models[0].layers[0].w.v);
  CHECK(models[2].layers[0].w.v != models[1].layers[0].w.v);

  SUBCASE("invalid configs are rejected") {
    CHECK_THROWS_AS(mine_hard_negatives(net0, manifest, corpus, 0, cfg), ParamError);
    MiningConfig bad = cfg;
    bad.work_dir.clear();
    CHECK_THROWS_AS(mine_hard_negatives(net0, manifest, corpus, 1, bad), ParamError);
  }
}
