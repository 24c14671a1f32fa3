#pragma once

// Affine approximation over cubes: least-squares fits, the normalized
// deviation Omega, and the ratio deviation omega (deviation divided by the
// operator norm of the linear part), minimized over all affine maps.

#include "qsdiff/maps.hpp"

namespace qsdiff {

// Midpoint quadrature: the 2^(dm) centers of the level-m subdivision of a
// box, clipped to the map's domain window.
struct NodeSample {
  std::vector<Vec> x;
  std::vector<Vec> fx;
  bool clipped = false;
  int m = 0;
};

inline NodeSample sample_nodes(const MapSpec& f, const Box& q, int m) {
  require(m >= 1 && m * q.dim() <= 24, "quadrature refinement m out of range");
  const int d = q.dim();
  require(d == f.dim_in(), "cube dimension does not match map");
  NodeSample s;
  s.m = m;
  const std::int64_t n = std::int64_t{1} << m;
  std::int64_t total = 1;
  for (int i = 0; i < d; ++i) total *= n;
  const Vec lo = q.lower();
  const double h = std::ldexp(q.side, -m);
  s.x.reserve(static_cast<std::size_t>(total));
  for (std::int64_t idx = 0; idx < total; ++idx) {
    Vec p(d);
    std::int64_t rest = idx;
    for (int i = d - 1; i >= 0; --i) {
      p(i) = lo(i) + (static_cast<double>(rest % n) + 0.5) * h;
      rest /= n;
    }
    if (!f.in_domain(p)) {
      s.clipped = true;
      continue;
    }
    s.fx.push_back(f.eval(p));
    s.x.push_back(std::move(p));
  }
  if (s.x.empty()) throw DomainError("no quadrature nodes inside the map's domain window");
  return s;
}

// Centered first and second moments of the node sample.
struct NodeMoments {
  Vec xbar;
  Vec fbar;
  Mat cxx;  // d x d
  Mat cxf;  // d x D
  double tr_cff = 0.0;

  // Mean squared residual of x -> L x + (fbar - L xbar).
  double residual_sq(const Mat& l) const {
    const double v = tr_cff - 2.0 * (l * cxf).trace() + (l * cxx * l.transpose()).trace();
    return std::max(0.0, v);
  }
};

inline NodeMoments node_moments(const NodeSample& s) {
  const auto n = static_cast<double>(s.x.size());
  const int d = static_cast<int>(s.x.front().size());
  const int D = static_cast<int>(s.fx.front().size());
  NodeMoments mo{Vec::Zero(d), Vec::Zero(D), Mat::Zero(d, d), Mat::Zero(d, D), 0.0};
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    mo.xbar += s.x[i];
    mo.fbar += s.fx[i];
  }
  mo.xbar /= n;
  mo.fbar /= n;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const Vec dx = s.x[i] - mo.xbar;
    const Vec df = s.fx[i] - mo.fbar;
    mo.cxx += dx * dx.transpose();
    mo.cxf += dx * df.transpose();
    mo.tr_cff += df.squaredNorm();
  }
  mo.cxx /= n;
  mo.cxf /= n;
  mo.tr_cff /= n;
  return mo;
}

inline AffineMap affine_with_optimal_offset(const NodeMoments& mo, const Mat& l) {
  return AffineMap(l, mo.fbar - l * mo.xbar);
}

inline Mat lsq_linear(const NodeMoments& mo) {
  // L cxx = cxf^T; pseudo-inverse covers heavily clipped node sets.
  return mo.cxx.completeOrthogonalDecomposition().solve(mo.cxf).transpose();
}

inline double mean_sq_deviation(const NodeSample& s, const AffineMap& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) acc += (s.fx[i] - a(s.x[i])).squaredNorm();
  return acc / static_cast<double>(s.x.size());
}

inline AffineMap lsq_fit(const MapSpec& f, const Box& q, int m) {
  const auto s = sample_nodes(f, q, m);
  const auto mo = node_moments(s);
  return affine_with_optimal_offset(mo, lsq_linear(mo));
}

inline double big_omega(const MapSpec& f, const Box& q, int m) {
  const auto s = sample_nodes(f, q, m);
  const auto mo = node_moments(s);
  const auto a = affine_with_optimal_offset(mo, lsq_linear(mo));
  return std::sqrt(mean_sq_deviation(s, a)) / q.diam();
}

// ---------------------------------------------------------------------------

struct FitResult {
  double omega = 0.0;
  double big_omega = 0.0;
  std::optional<AffineMap> minimizer;  // empty: infimum approached as |A'| -> infinity
  bool attained = false;
  int samples_m = 0;
  bool clipped = false;
  double naive_ratio = 0.0;  // ratio at the plain least-squares map
  AffineMap lsq;

  double op_norm() const { return minimizer ? minimizer->op_norm() : std::numeric_limits<double>::infinity(); }
};

struct SmallOmegaOptions {
  int scale_grid = 33;        // log grid of t in [2^-8, 2^8]
  int random_directions = 8;  // rank-one restarts
  int polish_iterations = 400;
  std::uint64_t seed = 0x0A11CE;
};

namespace detail {

// Squared ratio times diam^2 for linear part l, or +inf when l = 0.
inline double ratio_sq(const NodeMoments& mo, const Mat& l) {
  const double nrm = operator_norm(l);
  if (!(nrm > 0.0)) return std::numeric_limits<double>::infinity();
  return mo.residual_sq(l) / (nrm * nrm);
}

// Best multiple s*u of a unit-norm direction u. The squared ratio is
// a/s^2 - 2b/s + c; returns the optimal s or nullopt when the optimum
// is at s = infinity.
inline std::optional<double> best_scale(const NodeMoments& mo, const Mat& u) {
  const double a = mo.tr_cff;
  const double b = (u * mo.cxf).trace();
  if (!(a > 0.0) || !(b > 0.0)) return std::nullopt;
  return a / b;
}

struct NelderMead {
  template <typename F>
  static Vec minimize(F&& fn, Vec x0, double step, int max_iter) {
    const auto n = x0.size();
    std::vector<Vec> pts(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> vals(static_cast<std::size_t>(n + 1));
    for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step;
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = fn(pts[i]);
    std::vector<std::size_t> order(pts.size());
    for (int it = 0; it < max_iter; ++it) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto i, auto j) { return vals[i] < vals[j]; });
      const auto best = order.front(), worst = order.back(), second = order[order.size() - 2];
      if (!std::isfinite(vals[best])) break;
      if (vals[worst] - vals[best] <= 1e-15 * std::max(1e-300, std::abs(vals[best])) + 1e-300) break;
      Vec centroid = Vec::Zero(n);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += pts[order[i]];
      centroid /= static_cast<double>(n);
      const Vec xr = centroid + (centroid - pts[worst]);
      const double fr = fn(xr);
      if (fr < vals[best]) {
        const Vec xe = centroid + 2.0 * (centroid - pts[worst]);
        const double fe = fn(xe);
        if (fe < fr) {
          pts[worst] = xe;
          vals[worst] = fe;
        } else {
          pts[worst] = xr;
          vals[worst] = fr;
        }
      } else if (fr < vals[second]) {
        pts[worst] = xr;
        vals[worst] = fr;
      } else {
        const bool outside = fr < vals[worst];
        const Vec xc = outside ? Vec(centroid + 0.5 * (xr - centroid)) : Vec(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = fn(xc);
        if (fc < std::min(fr, vals[worst])) {
          pts[worst] = xc;
          vals[worst] = fc;
        } else {
          for (std::size_t i = 1; i < order.size(); ++i) {
            auto& p = pts[order[i]];
            p = pts[best] + 0.5 * (p - pts[best]);
            vals[order[i]] = fn(p);
          }
        }
      }
    }
    std::size_t arg = 0;
    for (std::size_t i = 1; i < vals.size(); ++i)
      if (vals[i] < vals[arg]) arg = i;
    return pts[arg];
  }
};

}  // namespace detail

inline FitResult small_omega(const NodeSample& s, double diam, const SmallOmegaOptions& opt = {}) {
  const auto mo = node_moments(s);
  const int d = static_cast<int>(mo.xbar.size());
  const int D = static_cast<int>(mo.fbar.size());
  const double diam_sq = diam * diam;

  FitResult res;
  res.samples_m = s.m;
  res.clipped = s.clipped;
  const Mat lstar = lsq_linear(mo);
  res.lsq = affine_with_optimal_offset(mo, lstar);
  res.big_omega = std::sqrt(mean_sq_deviation(s, res.lsq)) / diam;

  // Limit value: inf over unit-norm U of mean |U(x - xbar)|^2.
  Eigen::SelfAdjointEigenSolver<Mat> es(mo.cxx, Eigen::EigenvaluesOnly);
  const double limit_sq = std::max(0.0, es.eigenvalues().minCoeff());

  double best_val = std::numeric_limits<double>::infinity();
  Mat best_l;
  auto consider = [&](const Mat& l) {
    const double v = detail::ratio_sq(mo, l);
    if (v < best_val) {
      best_val = v;
      best_l = l;
    }
  };
  auto consider_direction = [&](Mat u) {
    const double nrm = operator_norm(u);
    if (!(nrm > 0.0)) return;
    u /= nrm;
    if ((u * mo.cxf).trace() < 0.0) u = -u;
    if (auto sc = detail::best_scale(mo, u)) consider(*sc * u);
  };

  if (operator_norm(lstar) > 0.0) {
    consider(lstar);
    for (int k = 0; k < opt.scale_grid; ++k) {
      const double t = std::exp2(-8.0 + 16.0 * k / (opt.scale_grid - 1));
      consider(t * lstar);
    }
    consider_direction(lstar);
  }
  CounterRng rng(opt.seed, static_cast<std::uint64_t>(d * 16 + D));
  for (int r = 0; r < opt.random_directions; ++r) {
    Vec u(D), v(d);
    for (int i = 0; i < D; ++i) u(i) = rng.next_normal();
    for (int i = 0; i < d; ++i) v(i) = rng.next_normal();
    consider_direction(u * v.transpose());
  }

  if (std::isfinite(best_val)) {
    auto objective = [&](const Vec& p) {
      return detail::ratio_sq(mo, Eigen::Map<const Mat>(p.data(), D, d));
    };
    Vec p0 = Eigen::Map<const Vec>(best_l.data(), D * d);
    const double step = 0.1 * std::max(operator_norm(best_l), 1e-12);
    Vec p = detail::NelderMead::minimize(objective, p0, step, opt.polish_iterations);
    Mat polished = Eigen::Map<const Mat>(p.data(), D, d);
    consider(polished);
    consider_direction(polished);
  }

  res.naive_ratio = operator_norm(lstar) > 0.0
                        ? std::sqrt(mean_sq_deviation(s, res.lsq)) / (operator_norm(lstar) * diam)
                        : std::numeric_limits<double>::infinity();

  // An image that varies only at rounding level counts as constant.
  double spread = 0.0, mag = 0.0;
  for (const auto& y : s.fx) {
    spread = std::max(spread, (y - mo.fbar).cwiseAbs().maxCoeff());
    mag = std::max(mag, y.cwiseAbs().maxCoeff());
  }
  const bool flat = spread <= 64 * std::numeric_limits<double>::epsilon() * mag;

  if (!flat && std::isfinite(best_val) && best_val < limit_sq * (1.0 - 1e-12)) {
    res.attained = true;
    res.minimizer = affine_with_optimal_offset(mo, best_l);
    // Direct residual: the moment form cancels badly near zero.
    double direct = std::sqrt(mean_sq_deviation(s, *res.minimizer)) / (res.minimizer->op_norm() * diam);
    if (res.naive_ratio < direct) {
      direct = res.naive_ratio;
      res.minimizer = res.lsq;
    }
    res.omega = direct;
  } else {
    res.attained = false;
    res.omega = std::sqrt(limit_sq / diam_sq);
  }
  return res;
}

inline FitResult small_omega(const MapSpec& f, const Box& q, int m, const SmallOmegaOptions& opt = {}) {
  return small_omega(sample_nodes(f, q, m), q.diam(), opt);
}

// Ratio for a given affine map over the quadrature nodes.
inline double omega_ratio(const NodeSample& s, const AffineMap& a, double diam) {
  if (!(a.op_norm() > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(mean_sq_deviation(s, a)) / (a.op_norm() * diam);
}

// ---------------------------------------------------------------------------

struct FitQuality {
  double l1_ratio = 0.0;
  double sup_ratio = 0.0;
  double diam_ratio = 0.0;  // diam f(Q) / (|A'| side Q)
  double diam_lower = 0.0;
  double diam_upper = 0.0;
  bool pass = false;
};

// Pass requires a meaningful lower bracket (2 sqrt(d) sup < 1) and the
// observed diameter ratio inside [lower, upper].
inline FitQuality fit_quality(const MapSpec& f, const Box& q, const AffineMap& a, int m) {
  if (!(a.op_norm() > 0.0)) throw Error("degenerate map: |A'| = 0");
  const double scale = a.op_norm() * q.diam();
  const auto s = sample_nodes(f, q, m);
  FitQuality out;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double e = (s.fx[i] - a(s.x[i])).norm() / scale;
    out.l1_ratio += e;
    out.sup_ratio = std::max(out.sup_ratio, e);
  }
  out.l1_ratio /= static_cast<double>(s.x.size());
  std::vector<Vec> images;
  for (const auto& x : vertex_lattice(q, m)) {
    if (!f.in_domain(x)) continue;
    const Vec fx = f.eval(x);
    out.sup_ratio = std::max(out.sup_ratio, (fx - a(x)).norm() / scale);
    images.push_back(fx);
  }
  const double rd = std::sqrt(static_cast<double>(q.dim()));
  out.diam_ratio = max_pairwise_distance(images) / (a.op_norm() * q.side);
  out.diam_lower = 1.0 - 2.0 * rd * out.sup_ratio;
  out.diam_upper = rd * (1.0 + 2.0 * rd * out.sup_ratio);
  out.pass = out.diam_lower > 0.0 && out.diam_ratio >= out.diam_lower && out.diam_ratio <= out.diam_upper;
  return out;
}

struct AffineSeparation {
  double linear_gap = 0.0;      // |A1' - A2'|
  double mean_gap = 0.0;        // mean over R of |A1 - A2| / diam R
  double ratio = 0.0;           // linear_gap / mean_gap (0 when both vanish)
  double pointwise_kappa = 0.0; // smallest k with |A1-A2|(x) <= k mean (dist(x,R) + diam R)
};

inline AffineSeparation affine_separation(const AffineMap& a1, const AffineMap& a2, const Box& r, int m) {
  require(a1.dim_in() == a2.dim_in() && a1.dim_out() == a2.dim_out(), "affine_separation: shape mismatch");
  require(r.dim() == a1.dim_in(), "affine_separation: cube dimension mismatch");
  const Mat dl = a1.linear() - a2.linear();
  const Vec db = a1.offset() - a2.offset();
  AffineSeparation out;
  out.linear_gap = operator_norm(dl);
  const auto id = MapSpec::identity(r.dim());
  const auto s = sample_nodes(id, r, m);
  for (const auto& x : s.x) out.mean_gap += (dl * x + db).norm();
  out.mean_gap /= static_cast<double>(s.x.size()) * r.diam();
  if (out.mean_gap > 0.0) {
    out.ratio = out.linear_gap / out.mean_gap;
  } else {
    out.ratio = out.linear_gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (out.mean_gap == 0.0) {
    out.pointwise_kappa = (dl.norm() + db.norm()) > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return out;
  }
  const int d = r.dim();
  QuasiRandom qr(d, 7);
  for (int k = 0; k < 256; ++k) {
    Vec u = 2.0 * qr.point(static_cast<std::uint64_t>(k)).array() - 1.0;
    if (u.norm() == 0.0) continue;
    u.normalize();
    for (int j = 0; j <= 12; ++j) {
      const double rad = j == 0 ? 0.0 : 8.0 * r.diam() * std::exp2(-(12 - j) / 2.0);
      const Vec x = r.center + rad * u;
      const double bound = out.mean_gap * (r.dist(x) + r.diam());
      out.pointwise_kappa = std::max(out.pointwise_kappa, (dl * x + db).norm() / bound);
    }
  }
  return out;
}

}  // namespace qsdiff
