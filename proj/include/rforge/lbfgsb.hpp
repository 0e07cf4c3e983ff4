#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "rforge/common.hpp"

// Box-constrained limited-memory quasi-Newton descent: L-BFGS two-loop
// directions restricted to the free variables, gradient projection onto the
// box, and a backtracking Armijo line search along the projected path.

namespace rforge {

struct BoxLbfgsOptions {
  int max_iterations = 200;
  double pg_tol = 1e-5;  // convergence on the projected-gradient infinity norm
  int history = 10;
  double armijo_c1 = 1e-4;
  int max_backtracks = 40;
};

struct BoxLbfgsResult {
  std::vector<double> x;
  double f = 0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

namespace lbfgsdetail {

inline double inf_norm(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline std::vector<double> project(const std::vector<double>& x, const std::vector<double>& lo,
                                   const std::vector<double>& hi) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = std::min(hi[i], std::max(lo[i], x[i]));
  return out;
}

}  // namespace lbfgsdetail

// fg(x, grad_out) -> f(x); grad_out is filled with the gradient.
inline BoxLbfgsResult minimize_box_lbfgs(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fg,
    std::vector<double> x0, const std::vector<double>& lo, const std::vector<double>& hi,
    const BoxLbfgsOptions& opts = {}) {
  using namespace lbfgsdetail;
  const size_t n = x0.size();
  if (lo.size() != n || hi.size() != n) throw ParamError("minimize_box_lbfgs: bound size mismatch");

  BoxLbfgsResult res;
  std::vector<double> x = project(x0, lo, hi);
  std::vector<double> g(n), gn(n);
  double f = fg(x, g);
  ++res.evaluations;
  if (!std::isfinite(f)) throw std::runtime_error("minimize_box_lbfgs: non-finite objective");

  std::vector<double> best_x = x;
  double best_f = f;

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  const double eps_active = 1e-12;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter + 1;
    // projected gradient convergence test
    double pg = 0;
    for (size_t i = 0; i < n; ++i) {
      double step = std::min(hi[i], std::max(lo[i], x[i] - g[i])) - x[i];
      pg = std::max(pg, std::abs(step));
    }
    if (pg < opts.pg_tol) {
      res.converged = true;
      break;
    }

    // free-variable mask: bound-active coordinates whose gradient pushes out
    std::vector<char> free_var(n, 1);
    for (size_t i = 0; i < n; ++i)
      if ((x[i] <= lo[i] + eps_active && g[i] > 0) || (x[i] >= hi[i] - eps_active && g[i] < 0))
        free_var[i] = 0;

    // two-loop recursion on the masked gradient
    std::vector<double> q(n);
    for (size_t i = 0; i < n; ++i) q[i] = free_var[i] ? g[i] : 0.0;
    std::vector<double> alpha(s_hist.size());
    for (size_t h = s_hist.size(); h-- > 0;) {
      double a = 0;
      for (size_t i = 0; i < n; ++i) a += s_hist[h][i] * q[i];
      a *= rho_hist[h];
      alpha[h] = a;
      for (size_t i = 0; i < n; ++i) q[i] -= a * y_hist[h][i];
    }
    if (!s_hist.empty()) {
      double sy = 0, yy = 0;
      for (size_t i = 0; i < n; ++i) {
        sy += s_hist.back()[i] * y_hist.back()[i];
        yy += y_hist.back()[i] * y_hist.back()[i];
      }
      double gamma = yy > 0 ? sy / yy : 1.0;
      for (size_t i = 0; i < n; ++i) q[i] *= gamma;
    }
    for (size_t h = 0; h < s_hist.size(); ++h) {
      double beta = 0;
      for (size_t i = 0; i < n; ++i) beta += y_hist[h][i] * q[i];
      beta *= rho_hist[h];
      for (size_t i = 0; i < n; ++i) q[i] += s_hist[h][i] * (alpha[h] - beta);
    }
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = free_var[i] ? -q[i] : 0.0;
    double gd = 0;
    for (size_t i = 0; i < n; ++i) gd += g[i] * d[i];
    if (gd > -1e-14) {  // not a descent direction: restart on steepest descent
      for (size_t i = 0; i < n; ++i) d[i] = free_var[i] ? -g[i] : 0.0;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // backtracking along the projected path
    double t = 1.0;
    bool accepted = false;
    std::vector<double> xn;
    double fn = 0;
    for (int bt = 0; bt < opts.max_backtracks; ++bt, t *= 0.5) {
      std::vector<double> cand(n);
      for (size_t i = 0; i < n; ++i) cand[i] = x[i] + t * d[i];
      cand = project(cand, lo, hi);
      bool moved = false;
      double dirg = 0;
      for (size_t i = 0; i < n; ++i) {
        if (cand[i] != x[i]) moved = true;
        dirg += g[i] * (cand[i] - x[i]);
      }
      if (!moved) continue;
      double fc = fg(cand, gn);
      ++res.evaluations;
      if (!std::isfinite(fc)) continue;
      if (fc <= f + opts.armijo_c1 * dirg) {
        xn = std::move(cand);
        fn = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    // curvature pair
    std::vector<double> s(n), y(n);
    double sy = 0, ss = 0, yy = 0;
    for (size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
      sy += s[i] * y[i];
      ss += s[i] * s[i];
      yy += y[i] * y[i];
    }
    if (sy > 1e-10 * std::sqrt(ss * yy)) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (int(s_hist.size()) > opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(xn);
    f = fn;
    g = gn;
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }

  res.x = best_x;
  res.f = best_f;
  return res;
}

}  // namespace rforge
