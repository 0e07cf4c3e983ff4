#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rforge/common.hpp"
#include "rforge/net.hpp"

// Evaluation statistics: rank-based AUC, the inverse normal CDF, Thurstone
// Case V scaling of pairwise comparisons, per-item score normalization,
// stratified k-fold evaluation of the linear head, and ranked reports.

namespace rforge {

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 positive, 0 negative

  void validate() const {
    if (scores.size() != labels.size() || scores.empty())
      throw ParamError("ScoredSet: parallel lists of equal nonzero length required");
  }
};

// Mann-Whitney AUC with average ranks for ties.
inline double roc_auc(const ScoredSet& set) {
  set.validate();
  const size_t n = set.scores.size();
  size_t n_pos = 0;
  for (int l : set.labels) n_pos += (l == 1);
  size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ParamError("roc_auc: both classes required");

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return set.scores[a] < set.scores[b]; });
  double rank_sum_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && set.scores[idx[j + 1]] == set.scores[idx[i]]) ++j;
    double avg_rank = 0.5 * double(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k)
      if (set.labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  return (rank_sum_pos - double(n_pos) * (double(n_pos) + 1.0) / 2.0) /
         (double(n_pos) * double(n_neg));
}

// ---------------------------------------------------------------------------
// Probit
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse standard-normal CDF: rational initial guess (Acklam's coefficients)
// refined by one Newton step against the CDF.
inline double probit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParamError("probit: p must lie strictly in (0,1)");
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // one Newton step: x -= (Phi(x) - p) / phi(x)
  double err = normal_cdf(x) - p;
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  if (pdf > 0) x -= err / pdf;
  return x;
}

// ---------------------------------------------------------------------------
// Thurstone Case V
// ---------------------------------------------------------------------------

struct PairwiseTable {
  int n = 0;
  std::vector<std::vector<int>> counts;  // counts[i][j] = judgments preferring i over j

  explicit PairwiseTable(int items = 0) : n(items), counts(size_t(items), std::vector<int>(size_t(items), 0)) {}

  void add(int winner, int loser, int times = 1) {
    if (winner == loser) throw ParamError("PairwiseTable: self comparison");
    counts[size_t(winner)][size_t(loser)] += times;
  }
};

// Converts clamped pairwise win rates to probit differences and solves the
// least-squares score system under a zero-mean gauge.
inline std::vector<double> thurstone_case_v(const PairwiseTable& table) {
  const int n = table.n;
  if (n < 2) throw ParamError("thurstone_case_v: need at least two items");
  std::vector<std::pair<int, int>> missing;
  std::vector<std::vector<double>> z(size_t(n), std::vector<double>(size_t(n), 0.0));
  std::vector<std::vector<bool>> seen(size_t(n), std::vector<bool>(size_t(n), false));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      int m = table.counts[size_t(i)][size_t(j)] + table.counts[size_t(j)][size_t(i)];
      if (m == 0) {
        missing.push_back({i, j});
        continue;
      }
      double p = double(table.counts[size_t(i)][size_t(j)]) / double(m);
      double clamp_lo = 1.0 / (2.0 * m);
      p = std::min(1.0 - clamp_lo, std::max(clamp_lo, p));
      z[size_t(i)][size_t(j)] = probit(p);
      z[size_t(j)][size_t(i)] = -z[size_t(i)][size_t(j)];
      seen[size_t(i)][size_t(j)] = seen[size_t(j)][size_t(i)] = true;
    }
  if (!missing.empty()) {
    std::string msg = "thurstone_case_v: pairs without judgments:";
    for (auto [i, j] : missing) msg += " (" + std::to_string(i) + "," + std::to_string(j) + ")";
    throw ParamError(msg);
  }

  // normal equations of min sum (s_i - s_j - z_ij)^2 with the mean pinned to 0
  std::vector<std::vector<double>> A(size_t(n), std::vector<double>(size_t(n), 0.0));
  std::vector<double> rhs(size_t(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j || !seen[size_t(i)][size_t(j)]) continue;
      A[size_t(i)][size_t(i)] += 1.0;
      A[size_t(i)][size_t(j)] -= 1.0;
      rhs[size_t(i)] += z[size_t(i)][size_t(j)];
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A[size_t(i)][size_t(j)] += 1.0 / double(n);

  // Gaussian elimination with partial pivoting
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[size_t(r)][size_t(col)]) > std::abs(A[size_t(piv)][size_t(col)])) piv = r;
    std::swap(A[size_t(col)], A[size_t(piv)]);
    std::swap(rhs[size_t(col)], rhs[size_t(piv)]);
    double diag = A[size_t(col)][size_t(col)];
    if (std::abs(diag) < 1e-12) throw ParamError("thurstone_case_v: singular system");
    for (int r = col + 1; r < n; ++r) {
      double f = A[size_t(r)][size_t(col)] / diag;
      for (int k = col; k < n; ++k) A[size_t(r)][size_t(k)] -= f * A[size_t(col)][size_t(k)];
      rhs[size_t(r)] -= f * rhs[size_t(col)];
    }
  }
  std::vector<double> s(static_cast<size_t>(n));
  for (int r = n - 1; r >= 0; --r) {
    double acc = rhs[size_t(r)];
    for (int k = r + 1; k < n; ++k) acc -= A[size_t(r)][size_t(k)] * s[size_t(k)];
    s[size_t(r)] = acc / A[size_t(r)][size_t(r)];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Per-item normalization
// ---------------------------------------------------------------------------

// scores[method][item]: each item's column is scaled to unit population
// standard deviation; zero-variance columns pass through.
inline std::vector<std::vector<double>> normalize_per_item(
    const std::vector<std::vector<double>>& scores) {
  if (scores.size() < 2) throw ParamError("normalize_per_item: need >= 2 methods");
  const size_t methods = scores.size(), items = scores[0].size();
  for (const auto& row : scores)
    if (row.size() != items) throw ParamError("normalize_per_item: ragged score matrix");
  std::vector<std::vector<double>> out = scores;
  for (size_t j = 0; j < items; ++j) {
    double mean = 0;
    for (size_t m = 0; m < methods; ++m) mean += scores[m][j];
    mean /= double(methods);
    double var = 0;
    for (size_t m = 0; m < methods; ++m) {
      double d = scores[m][j] - mean;
      var += d * d;
    }
    var /= double(methods);
    double sd = std::sqrt(var);
    if (sd > 0)
      for (size_t m = 0; m < methods; ++m) out[m][j] = scores[m][j] / sd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified k-fold evaluation of the linear head
// ---------------------------------------------------------------------------

struct KfoldResult {
  std::vector<double> fold_auc;
  double mean_auc = 0;
};

inline KfoldResult kfold_eval(const std::vector<std::vector<double>>& features,
                              const std::vector<int>& labels, int folds, uint64_t seed, double C) {
  if (folds < 2) throw ParamError("kfold_eval: folds must be >= 2");
  if (features.size() != labels.size() || features.empty())
    throw ParamError("kfold_eval: features/labels mismatch");
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (int(pos.size()) < folds || int(neg.size()) < folds)
    throw ParamError("kfold_eval: a class is too small to stratify into " +
                     std::to_string(folds) + " folds");
  Rng rng(sub_seed(seed, "kfold"));
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<int> fold_of(labels.size());
  for (size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = int(i % size_t(folds));
  for (size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = int(i % size_t(folds));

  KfoldResult result;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::vector<double>> train_x;
    std::vector<int> train_y;
    ScoredSet held;
    std::vector<size_t> held_idx;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (fold_of[i] == f) held_idx.push_back(i);
      else {
        train_x.push_back(features[i]);
        train_y.push_back(labels[i]);
      }
    }
    LinearHead head = fit_linear_head(train_x, train_y, C, seed);
    for (size_t i : held_idx) {
      held.scores.push_back(head.score(features[i]));
      held.labels.push_back(labels[i]);
    }
    result.fold_auc.push_back(roc_auc(held));
  }
  for (double a : result.fold_auc) result.mean_auc += a;
  result.mean_auc /= double(folds);
  return result;
}

// ---------------------------------------------------------------------------
// Ranked report
// ---------------------------------------------------------------------------

struct RankRow {
  int rank;          // 1 = highest score
  std::string id;
  double score;
  double percentile;  // 100 * (n - rank + 1) / n
  double band;        // smallest listed percentile edge >= percentile
};

inline std::vector<RankRow> rank_report(const std::vector<double>& scores,
                                        const std::vector<std::string>& ids,
                                        std::vector<double> percentiles = {25, 50, 75, 100}) {
  if (scores.size() != ids.size() || scores.empty())
    throw ParamError("rank_report: scores/ids mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw ParamError("rank_report: scores must be finite");
  std::sort(percentiles.begin(), percentiles.end());
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<RankRow> rows;
  const double n = double(scores.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    RankRow row;
    row.rank = int(r) + 1;
    row.id = ids[idx[r]];
    row.score = scores[idx[r]];
    row.percentile = 100.0 * (n - double(r)) / n;
    row.band = percentiles.empty() ? 100.0 : percentiles.back();
    for (double edge : percentiles)
      if (row.percentile <= edge) {
        row.band = edge;
        break;
      }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::ordered_json rank_row_json(const RankRow& r) {
  nlohmann::ordered_json j;
  j["rank"] = r.rank;
  j["id"] = r.id;
  j["score"] = r.score;
  j["percentile"] = r.percentile;
  j["band"] = r.band;
  return j;
}

}  // namespace rforge
