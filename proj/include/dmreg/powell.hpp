#ifndef DMREG_POWELL_HPP
#define DMREG_POWELL_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dmreg/core.hpp"

namespace dmreg {

struct PowellConfig {
  /// Length of each initial search direction, per parameter.
  std::vector<double> scales;
  double ftol = 1e-4;  ///< relative decrease per sweep that counts as converged
  int max_iters = 50;  ///< direction-set sweeps
  double xtol = 1e-3;  ///< line-search tolerance in units of the search direction
  double tiny = 1e-10;
  int max_line_evals = 200;

  void validate(std::size_t n) const {
    if (scales.size() != n) throw std::invalid_argument("PowellConfig: one scale per parameter required");
    for (double s : scales)
      if (!(s > 0.0)) throw std::invalid_argument("PowellConfig: scales must be > 0");
    if (!(ftol > 0.0) || !(xtol > 0.0)) throw std::invalid_argument("PowellConfig: tolerances must be > 0");
    if (max_iters < 1) throw std::invalid_argument("PowellConfig: max_iters must be >= 1");
  }
};

enum class PowellStatus { converged, max_iters };

struct PowellResult {
  std::vector<double> x;
  double f = 0.0;
  PowellStatus status = PowellStatus::max_iters;
  int iterations = 0;
  int evaluations = 0;
  std::vector<double> trace;  ///< objective after each sweep, starting with f(x0)
};

using Objective = std::function<double(std::span<const double>)>;

namespace detail {

// Minimizes g(alpha) = f(x + alpha d) by golden-section bracketing and Brent's
// parabolic/golden search. Returns (alpha, g(alpha)) with g(alpha) <= g(0).
class LineSearch {
 public:
  LineSearch(const Objective& f, const PowellConfig& cfg, int& evals) : f_(f), cfg_(cfg), evals_(evals) {}

  std::pair<double, double> minimize(std::span<const double> x, std::span<const double> d, double f0) {
    x_ = x;
    d_ = d;
    point_.resize(x.size());
    budget_ = cfg_.max_line_evals;
    best_alpha_ = 0.0;
    best_f_ = f0;
    double ax = 0.0, bx = 1.0, cx = 0.0;
    double fa = f0, fb = eval(bx), fc = 0.0;
    bracket(ax, bx, cx, fa, fb, fc);
    brent(ax, bx, cx, fb);
    return {best_alpha_, best_f_};
  }

 private:
  double eval(double alpha) {
    for (std::size_t i = 0; i < x_.size(); ++i) point_[i] = x_[i] + alpha * d_[i];
    ++evals_;
    --budget_;
    double v = f_(point_);
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
    if (v < best_f_) {
      best_f_ = v;
      best_alpha_ = alpha;
    }
    return v;
  }

  void bracket(double& ax, double& bx, double& cx, double& fa, double& fb, double& fc) {
    constexpr double gold = 1.618034;
    constexpr double glimit = 100.0;
    constexpr double tiny = 1e-20;
    if (fb > fa) {
      std::swap(ax, bx);
      std::swap(fa, fb);
    }
    cx = bx + gold * (bx - ax);
    fc = eval(cx);
    while (fb > fc && budget_ > 0) {
      const double r = (bx - ax) * (fb - fc);
      const double q = (bx - cx) * (fb - fa);
      double denom = q - r;
      if (std::abs(denom) < tiny) denom = denom < 0 ? -tiny : tiny;
      double u = bx - ((bx - cx) * q - (bx - ax) * r) / (2.0 * denom);
      const double ulim = bx + glimit * (cx - bx);
      double fu;
      if ((bx - u) * (u - cx) > 0.0) {
        fu = eval(u);
        if (fu < fc) {
          ax = bx;
          bx = u;
          fa = fb;
          fb = fu;
          return;
        }
        if (fu > fb) {
          cx = u;
          fc = fu;
          return;
        }
        u = cx + gold * (cx - bx);
        fu = eval(u);
      } else if ((cx - u) * (u - ulim) > 0.0) {
        fu = eval(u);
        if (fu < fc) {
          bx = cx;
          cx = u;
          u = cx + gold * (cx - bx);
          fb = fc;
          fc = fu;
          fu = eval(u);
        }
      } else if ((u - ulim) * (ulim - cx) >= 0.0) {
        u = ulim;
        fu = eval(u);
      } else {
        u = cx + gold * (cx - bx);
        fu = eval(u);
      }
      ax = bx;
      bx = cx;
      cx = u;
      fa = fb;
      fb = fc;
      fc = fu;
    }
  }

  void brent(double ax, double bx, double cx, double fbx) {
    constexpr double cgold = 0.3819660;
    double a = std::min(ax, cx), b = std::max(ax, cx);
    double x = bx, w = bx, v = bx;
    double fx = fbx, fw = fbx, fv = fbx;
    double d = 0.0, e = 0.0;
    while (budget_ > 0) {
      const double xm = 0.5 * (a + b);
      const double tol1 = 0.5 * cfg_.xtol + 1e-10 * std::abs(x);
      const double tol2 = 2.0 * tol1;
      if (std::abs(x - xm) <= (tol2 - 0.5 * (b - a))) return;
      if (std::abs(e) > tol1) {
        const double r = (x - w) * (fx - fv);
        double q = (x - v) * (fx - fw);
        double p = (x - v) * q - (x - w) * r;
        q = 2.0 * (q - r);
        if (q > 0.0) p = -p;
        q = std::abs(q);
        const double etemp = e;
        e = d;
        if (std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (a - x) || p >= q * (b - x)) {
          e = (x >= xm) ? a - x : b - x;
          d = cgold * e;
        } else {
          d = p / q;
          const double u = x + d;
          if (u - a < tol2 || b - u < tol2) d = (xm - x >= 0.0) ? tol1 : -tol1;
        }
      } else {
        e = (x >= xm) ? a - x : b - x;
        d = cgold * e;
      }
      const double u = (std::abs(d) >= tol1) ? x + d : x + (d >= 0.0 ? tol1 : -tol1);
      const double fu = eval(u);
      if (fu <= fx) {
        if (u >= x) a = x; else b = x;
        v = w; w = x; x = u;
        fv = fw; fw = fx; fx = fu;
      } else {
        if (u < x) a = u; else b = u;
        if (fu <= fw || w == x) {
          v = w; w = u;
          fv = fw; fw = fu;
        } else if (fu <= fv || v == x || v == w) {
          v = u;
          fv = fu;
        }
      }
    }
  }

  const Objective& f_;
  const PowellConfig& cfg_;
  int& evals_;
  std::span<const double> x_;
  std::span<const double> d_;
  std::vector<double> point_;
  int budget_ = 0;
  double best_alpha_ = 0.0;
  double best_f_ = 0.0;
};

}  // namespace detail

/// Powell's direction-set minimization. Initial directions are the scaled
/// coordinate axes; after each sweep the direction of largest decrease is
/// replaced by the net displacement when the extrapolation test allows it.
inline PowellResult powell_minimize(const Objective& f, std::span<const double> x0, const PowellConfig& cfg) {
  const std::size_t n = x0.size();
  cfg.validate(n);
  PowellResult res;
  res.x.assign(x0.begin(), x0.end());
  res.f = f(res.x);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) throw NumericError("powell_minimize: objective is not finite at the start point");
  res.trace.push_back(res.f);

  std::vector<std::vector<double>> dirs(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) dirs[i][i] = cfg.scales[i];

  detail::LineSearch line(f, cfg, res.evaluations);
  auto line_min = [&](const std::vector<double>& d) {
    const auto [alpha, fmin] = line.minimize(res.x, d, res.f);
    if (fmin < res.f) {
      for (std::size_t i = 0; i < n; ++i) res.x[i] += alpha * d[i];
      res.f = fmin;
    }
  };

  std::vector<double> pt = res.x;
  std::vector<double> ptt(n), xit(n);
  for (int iter = 1;; ++iter) {
    res.iterations = iter;
    const double fp = res.f;
    std::size_t ibig = 0;
    double del = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double before = res.f;
      line_min(dirs[i]);
      if (before - res.f > del) {
        del = before - res.f;
        ibig = i;
      }
    }
    res.trace.push_back(res.f);
    if (2.0 * (fp - res.f) <= cfg.ftol * (std::abs(fp) + std::abs(res.f)) + cfg.tiny) {
      res.status = PowellStatus::converged;
      return res;
    }
    if (iter >= cfg.max_iters) {
      res.status = PowellStatus::max_iters;
      return res;
    }
    for (std::size_t i = 0; i < n; ++i) {
      ptt[i] = 2.0 * res.x[i] - pt[i];
      xit[i] = res.x[i] - pt[i];
      pt[i] = res.x[i];
    }
    double fptt = f(ptt);
    ++res.evaluations;
    if (!std::isfinite(fptt)) fptt = std::numeric_limits<double>::infinity();
    if (fptt < fp) {
      const double a = fp - res.f - del;
      const double b = fp - fptt;
      const double t = 2.0 * (fp - 2.0 * res.f + fptt) * a * a - del * b * b;
      if (t < 0.0) {
        line_min(xit);
        dirs[ibig] = dirs[n - 1];
        dirs[n - 1] = xit;
      }
    }
  }
}

}  // namespace dmreg

#endif  // DMREG_POWELL_HPP
