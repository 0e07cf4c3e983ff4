#pragma once

// Independent reference implementations used as test oracles. Everything here
// is deliberately brute force and shares no code with the library paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "rforge/image.hpp"

namespace oracles {

// Exhaustive nearest-background search; outside the image counts as
// background, matching the library's stated convention.
inline double brute_force_distance(const rforge::Mask& m, int x, int y) {
  if (m.at(x, y) <= 0.f) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  // in-image background pixels
  for (int yy = 0; yy < m.height; ++yy)
    for (int xx = 0; xx < m.width; ++xx)
      if (m.at(xx, yy) <= 0.f) {
        double d = std::hypot(double(xx - x), double(yy - y));
        best = std::min(best, d);
      }
  // out-of-image sites: the nearest lies straight out of the closest side
  best = std::min(best, double(x + 1));
  best = std::min(best, double(m.width - x));
  best = std::min(best, double(y + 1));
  best = std::min(best, double(m.height - y));
  return best;
}

// O(n^2) AUC by pair counting, ties worth one half.
inline double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  return wins / double(pairs);
}

// Standard normal CDF by adaptive-step Simpson integration from 0 to x.
inline double normal_cdf_integrated(double x) {
  double a = 0.0, b = std::abs(x);
  int n = std::max(64, int(b * 512)) & ~1;  // even
  double h = (b - a) / n;
  auto phi = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); };
  double s = phi(a) + phi(b);
  for (int i = 1; i < n; ++i) s += phi(a + i * h) * (i % 2 ? 4.0 : 2.0);
  double integral = s * h / 3.0;
  return x >= 0 ? 0.5 + integral : 0.5 - integral;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double r = 0.5 * double(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

}  // namespace oracles
