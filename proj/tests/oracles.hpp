#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the fitting, distance, or Whitney code under test; only plain vectors
// and the public data types are shared.

#include "qsdiff/qsdiff.hpp"

#include <functional>
#include <vector>

namespace oracle {

using qsdiff::Vec;

// Recorded once from kahane_field_min() below (rho = 0.1, M = 3, m = 4,
// J = 8) and rounded down; tests compare the library against it.
inline constexpr double kKahaneC0 = 0.0514;

// Dorronsoro ratios recorded at J = 5 (m = 4, dilation 2, step 1e-6).
struct DorronsoroFixture {
  int d;
  int frequency;
  double ratio;
};
inline constexpr DorronsoroFixture kDorronsoroFixtures[] = {
    {1, 1, 0.0400316996611},
    {1, 3, 0.0397546297629},
    {2, 1, 0.0209801223342},
};

// Midpoints of the 2^m-cell subdivision of [a, b].
inline std::vector<double> midpoints(double a, double b, int m) {
  const int n = 1 << m;
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = a + (b - a) * (i + 0.5) / n;
  return xs;
}

// 1-D omega in closed form. For A(x) = a x + c, the optimal c leaves
// var(f - a x) / a^2 = var(f) u^2 - 2 cov u + var(x) with u = 1/a, minimized
// at u = cov/var(f). cov = 0 gives only the a -> infinity limit var(x).
struct Omega1d {
  double omega;
  bool attained;
};

inline Omega1d omega_1d(const std::vector<double>& xs, const std::vector<double>& ys, double diam) {
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    vx += (xs[i] - mx) * (xs[i] - mx);
    vy += (ys[i] - my) * (ys[i] - my);
    cxy += (xs[i] - mx) * (ys[i] - my);
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  if (vy <= 0.0 || std::abs(cxy) <= 1e-300) return {std::sqrt(vx) / diam, false};
  const double v = std::max(0.0, vx - cxy * cxy / vy);
  return {std::sqrt(v) / diam, true};
}

inline Omega1d omega_1d(const std::function<double(double)>& f, double a, double b, int m) {
  const auto xs = midpoints(a, b, m);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(f(x));
  return omega_1d(xs, ys, b - a);
}

// Dense grid search over (slope, offset) with zoom refinement; no closed
// form for either parameter.
inline double omega_1d_grid(const std::vector<double>& xs, const std::vector<double>& ys, double diam) {
  const double n = static_cast<double>(xs.size());
  double xbar = 0.0;
  for (double x : xs) xbar += x / n;
  double ymin = ys[0], ymax = ys[0];
  for (double y : ys) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double spread = std::max(ymax - ymin, 1e-6 * (1.0 + std::abs(ymax)));
  // residual y - a (x - xbar) - c: centering keeps a and c uncorrelated
  auto ratio = [&](double a, double c) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - a * (xs[i] - xbar) - c;
      s += r * r;
    }
    return std::sqrt(s / n) / (std::abs(a) * diam);
  };
  auto offset_range = [&](double a) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      lo = std::min(lo, ys[i] - a * (xs[i] - xbar));
      hi = std::max(hi, ys[i] - a * (xs[i] - xbar));
    }
    return std::pair{lo, hi};
  };
  double best = std::numeric_limits<double>::infinity();
  double best_a = 1.0, best_c = 0.0;
  // Slopes: signed log grid spanning 1e-4..1e4 of the data slope scale.
  const double slope_scale = spread / diam;
  for (int sgn : {-1, 1})
    for (int i = 0; i <= 800; ++i) {
      const double a = sgn * slope_scale * std::pow(10.0, -4.0 + 8.0 * i / 800.0);
      const auto [lo, hi] = offset_range(a);
      for (int j = 0; j <= 200; ++j) {
        const double c = lo + (hi - lo) * j / 200.0;
        const double r = ratio(a, c);
        if (r < best) {
          best = r;
          best_a = a;
          best_c = c;
        }
      }
    }
  const auto [lo0, hi0] = offset_range(best_a);
  double da = std::abs(best_a) * 0.02, dc = std::max(hi0 - lo0, 1e-3 * spread) * 0.02;
  for (int round = 0; round < 60; ++round) {
    double ra = best_a, rc = best_c;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const double a = best_a + da * i / 10.0;
        const double c = best_c + dc * j / 10.0;
        if (a == 0.0) continue;
        const double r = ratio(a, c);
        if (r < best) {
          best = r;
          ra = a;
          rc = c;
        }
      }
    // recentre without shrinking while the best point sits on the edge
    const bool edge = std::abs(ra - best_a) >= da * 0.99 || std::abs(rc - best_c) >= dc * 0.99;
    best_a = ra;
    best_c = rc;
    if (!edge) {
      da *= 0.6;
      dc *= 0.6;
    }
  }
  // The a -> infinity limit is the standard deviation of x over diam.
  double mx = 0;
  for (double x : xs) mx += x;
  mx /= n;
  double vx = 0;
  for (double x : xs) vx += (x - mx) * (x - mx);
  return std::min(best, std::sqrt(vx / n) / diam);
}

// Kahane CDF by the literal three-case recursion (no loop unrolling tricks).
inline double kahane(double x, double rho, int depth = 60) {
  const double n = std::floor(x);
  const double t = x - n;
  std::function<double(double, int)> rec = [&](double y, int k) -> double {
    if (k == 0) return y;
    if (y <= 0.0) return 0.0;
    if (y >= 1.0) return 1.0;
    if (y < 1.0 / 3.0) return rho * rec(3.0 * y, k - 1);
    if (y < 2.0 / 3.0) return rho + (1.0 - 2.0 * rho) * rec(3.0 * y - 1.0, k - 1);
    return 1.0 - rho + rho * rec(3.0 * y - 2.0, k - 1);
  };
  return n + rec(t, depth);
}

// Min over the depth-J tree of [0,1] of omega on the dilated cubes M Q.
inline double kahane_field_min(double rho, int depth, double dil, int m, std::vector<double>* per_level = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  if (per_level) per_level->assign(static_cast<std::size_t>(depth + 1), best);
  for (int l = 0; l <= depth; ++l) {
    const double side = std::ldexp(1.0, -l);
    for (long k = 0; k < (1L << l); ++k) {
      const double c = (k + 0.5) * side;
      const double a = c - dil * side / 2, b = c + dil * side / 2;
      const double w = omega_1d([&](double x) { return kahane(x, rho); }, a, b, m).omega;
      best = std::min(best, w);
      if (per_level) (*per_level)[static_cast<std::size_t>(l)] = std::min((*per_level)[static_cast<std::size_t>(l)], w);
    }
  }
  return best;
}

// Axis-aligned cube given by its lower corner and side.
struct Cube {
  Vec lo;
  double side;
};

inline Cube cube_of(const qsdiff::Grid& g, const qsdiff::DyadicCube& q) {
  Vec lo(g.dim);
  const double s = g.base_side / static_cast<double>(1LL << q.level);
  for (int i = 0; i < g.dim; ++i)
    lo(i) = g.corner(i) + g.shift.thirds[i] * g.base_side / 3.0 + static_cast<double>(q.coords[i]) * s;
  return {lo, s};
}

inline double point_cube_distance(const Vec& x, const Cube& c) {
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double lo = c.lo(i), hi = c.lo(i) + c.side;
    const double gap = x(i) < lo ? lo - x(i) : (x(i) > hi ? x(i) - hi : 0.0);
    s += gap * gap;
  }
  return std::sqrt(s);
}

// Brute-force D_S(x) = min over members of dist(x, Q) + diam Q.
inline double region_distance(const qsdiff::Grid& g, const std::vector<qsdiff::DyadicCube>& members, const Vec& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : members) {
    const Cube c = cube_of(g, q);
    best = std::min(best, point_cube_distance(x, c) + c.side * std::sqrt(static_cast<double>(g.dim)));
  }
  return best;
}

// Brute-force dist(x, union of cubes).
inline double set_distance(const qsdiff::Grid& g, const std::vector<qsdiff::DyadicCube>& cubes, const Vec& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : cubes) best = std::min(best, point_cube_distance(x, cube_of(g, q)));
  return best;
}

// Least-squares line y = a x + c over the points.
inline std::pair<double, double> linear_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {a, (sy - a * sx) / n};
}

inline double r_squared(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto [a, c] = linear_fit(xs, ys);
  double my = 0;
  for (double y : ys) my += y;
  my /= static_cast<double>(ys.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ss_res += (ys[i] - a * xs[i] - c) * (ys[i] - a * xs[i] - c);
    ss_tot += (ys[i] - my) * (ys[i] - my);
  }
  return 1.0 - ss_res / ss_tot;
}

// d/dx of psi(t) = 16 t^2 (1-t)^2.
inline double psi(double t) { return 16.0 * t * t * (1 - t) * (1 - t); }
inline double dpsi(double t) { return 32.0 * t * (1 - t) * (1 - 2 * t); }

// Gradient energy of the windowed sine bump, by its analytic derivative on
// a fine midpoint grid.
inline double bump_energy(int d, int freq, double phase, int per_axis) {
  const double h = 1.0 / per_axis;
  double acc = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  const long total = static_cast<long>(std::pow(per_axis, d));
  for (long p = 0; p < total; ++p) {
    long rest = p;
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
      x[static_cast<std::size_t>(i)] = (static_cast<double>(rest % per_axis) + 0.5) * h;
      rest /= per_axis;
    }
    const double arg = 2.0 * M_PI * freq * x[0] + phase;
    double w = 1.0;
    for (int i = 0; i < d; ++i) w *= psi(x[static_cast<std::size_t>(i)]);
    double g2 = 0.0;
    for (int k = 0; k < d; ++k) {
      double partial = 1.0;
      for (int i = 0; i < d; ++i) partial *= i == k ? dpsi(x[static_cast<std::size_t>(i)]) : psi(x[static_cast<std::size_t>(i)]);
      double gk = partial * std::sin(arg);
      if (k == 0) gk += w * 2.0 * M_PI * freq * std::cos(arg);
      g2 += gk * gk;
    }
    acc += g2;
  }
  return acc * std::pow(h, d);
}

}  // namespace oracle
