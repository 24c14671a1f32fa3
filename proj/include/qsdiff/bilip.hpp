#pragma once

// Bi-Lipschitz subset extraction from a corona decomposition: count how
// many stopping cubes sit above each cube, cut at a generation N, and keep
// the residual sets of the surviving regions.

#include "qsdiff/corona.hpp"

namespace qsdiff {

struct StoppingTree {
  CubeSet t;
  std::unordered_map<DyadicCube, int, DyadicCubeHash> k;  // #{R in T : R contains Q}
  double mass = 0.0;                                      // sum over T of |Q| / |Q0|
  double mass_bound = 0.0;                                // (1 + 2^(d+2)) C_M / eps^2 + 8
  bool mass_bound_holds = false;
  bool k_monotone = true;  // k(parent) <= k(child) <= k(parent) + 1
};

inline StoppingTree build_T(const CoronaDecomposition& dec) {
  const OmegaField& field = *dec.field;
  const int d = field.dim();
  const Grid& g = field.grid();
  StoppingTree out;
  out.t = CubeSet(d);
  for (const auto& s : dec.regions) {
    out.t.insert(s.top);
    for (const auto& q : s.minimal.members()) out.t.insert(q);
  }
  for (const auto& q : dec.bad.members()) out.t.insert(q);
  const double v0 = g.volume(dec.root.level);
  for (const auto& q : out.t.members()) out.mass += g.volume(q.level) / v0;
  const double cm = carleson_sum(field, dec.root).normalized;
  out.mass_bound = (1.0 + std::ldexp(1.0, d + 2)) * cm / sqr(dec.params.eps) + 8.0;
  out.mass_bound_holds = out.mass <= out.mass_bound * (1.0 + 1e-12);
  for (const auto& q : enumerate_cubes(dec.root, dec.depth, d)) {
    const int above = q == dec.root ? 0 : out.k.at(parent(q));
    const int kq = above + (out.t.contains(q) ? 1 : 0);
    out.k[q] = kq;
    if (q != dec.root && (kq < above || kq > above + 1)) out.k_monotone = false;
  }
  return out;
}

struct ExtractionResult {
  CubeSet e;  // depth-floor cubes
  int n = 0;
  double theta = 0.0;
  double measure_fraction = 0.0;
  double removed_fraction = 0.0;          // sum over T cubes with k = N+1 of |Q| / |Q0|
  double boundary_discrepancy = 0.0;      // |Q0 \ removed| - |E|, relative to |Q0|
  std::vector<DyadicCube> kept_tops;      // region tops with k <= N
  StoppingTree tree;
};

struct DepthLimitedExtraction : Error {
  double best_fraction;
  DepthLimitedExtraction(const std::string& what, double best) : Error(what), best_fraction(best) {}
};

// N: the smallest generation cap for which the cubes of T at generation N+1
// weigh less than theta |Q0| and the kept residual sets weigh at least
// (1 - theta) |Q0|.
inline ExtractionResult extract_E(const CoronaDecomposition& dec, double theta) {
  require(theta > 0.0 && theta < 1.0, "theta must lie in (0,1)");
  const OmegaField& field = *dec.field;
  const Grid& g = field.grid();
  const int d = field.dim();
  const double v0 = g.volume(dec.root.level);
  StoppingTree tree = build_T(dec);
  int max_k = 0;
  for (const auto& [q, kq] : tree.k) max_k = std::max(max_k, kq);

  double best = 0.0;
  for (int n = 0; n <= max_k; ++n) {
    double removed = 0.0;
    for (const auto& q : tree.t.members())
      if (tree.k.at(q) == n + 1) removed += g.volume(q.level) / v0;
    CubeSet e(d);
    std::vector<DyadicCube> tops;
    double kept = 0.0;
    for (const auto& s : dec.regions) {
      if (tree.k.at(s.top) > n) continue;
      tops.push_back(s.top);
      for (const auto& q : s.z_approx.members()) {
        e.insert(q);
        kept += g.volume(q.level) / v0;
      }
    }
    best = std::max(best, kept);
    if (removed < theta && kept >= 1.0 - theta) {
      ExtractionResult r;
      r.e = std::move(e);
      r.n = n;
      r.theta = theta;
      r.measure_fraction = kept;
      r.removed_fraction = removed;
      r.boundary_discrepancy = (1.0 - removed) - kept;
      std::sort(tops.begin(), tops.end());
      r.kept_tops = std::move(tops);
      r.tree = std::move(tree);
      return r;
    }
  }
  throw DepthLimitedExtraction("depth-limited extraction: no generation cap reaches the measure bound (best fraction " +
                                   std::to_string(best) + ")",
                               best);
}

// ---------------------------------------------------------------------------

struct DistortionReport {
  double l_lower = std::numeric_limits<double>::infinity();
  double l_upper = 0.0;
  double l = 0.0;
  double scale = 0.0;
  int pairs = 0;
};

// Pairs come from one fixed master sequence over Q0 (log-stratified
// distances) filtered to E, so shrinking E can only drop pairs.
inline DistortionReport distortion_report(const MapSpec& f, const Grid& g, const DyadicCube& q0, const ExtractionResult& res,
                                          int n_pairs, std::uint64_t seed = 5) {
  require(n_pairs >= 100, "distortion_report: need at least 100 pairs");
  if (res.e.empty()) throw Error("distortion_report: E is empty");
  const int d = g.dim;
  const Box b0 = g.box(q0);
  DistortionReport out;
  out.scale = image_diam(f, b0, default_lattice_refinement(d)) / b0.diam();
  if (!(out.scale > 0.0)) throw Error("degenerate image: map is constant on the root cube");
  const int floor_level = res.e.max_level();
  const int depth_span = floor_level - q0.level + 2;
  CounterRng rng(seed, 0xB1);
  const Vec lo = b0.lower();
  auto in_e = [&](const Vec& y) { return b0.contains(y) && res.e.contains(g.locate(y, floor_level)); };
  const int master = 8 * n_pairs;
  for (int i = 0; i < master; ++i) {
    Vec x(d), dir(d);
    for (int k = 0; k < d; ++k) x(k) = lo(k) + b0.side * rng.next();
    for (int k = 0; k < d; ++k) dir(k) = rng.next_normal();
    const double r = b0.diam() * std::exp2(-depth_span * static_cast<double>(i % 16) / 15.0);
    if (dir.norm() == 0.0) continue;
    const Vec y = x + r * dir.normalized();
    if (!in_e(x) || !in_e(y)) continue;
    const double dx = (x - y).norm();
    if (dx == 0.0) continue;
    const double ratio = (f.eval(x) - f.eval(y)).norm() / (out.scale * dx);
    out.l_upper = std::max(out.l_upper, ratio);
    out.l_lower = std::min(out.l_lower, ratio);
    ++out.pairs;
  }
  if (out.pairs < 1) throw Error("distortion_report: fewer than 2 sampled points in E");
  out.l = std::max(out.l_upper, 1.0 / out.l_lower);
  return out;
}

// ---------------------------------------------------------------------------

struct ChainRecord {
  DyadicCube top;
  int cubes = 0;
  double min_log_margin = std::numeric_limits<double>::infinity();  // (N+1) log beta - |log ratio|
};

struct ChainCheck {
  double beta = 0.0;
  double eta2 = 0.0;
  std::vector<ChainRecord> regions;
  bool holds = true;
};

// Image diameter over the part of a box inside the map's domain window.
inline double image_diam_clipped(const MapSpec& f, const Box& q, int m) {
  std::vector<Vec> ys;
  for (const auto& x : vertex_lattice(q, m))
    if (f.in_domain(x)) ys.push_back(f.eval(x));
  return max_pairwise_distance(ys);
}

inline ChainCheck scale_chain_check(const CoronaDecomposition& dec, const ExtractionResult& res, const MapSpec& f,
                                    double delta, std::optional<double> eta2 = std::nullopt, int lattice_m = 0) {
  const OmegaField& field = *dec.field;
  const Grid& g = field.grid();
  const int d = field.dim();
  const double rd = std::sqrt(static_cast<double>(d));
  require(delta > 0.0 && 2.0 * rd * delta < 1.0, "delta must satisfy 0 < 2 sqrt(d) delta < 1");
  if (lattice_m <= 0) lattice_m = std::max(2, default_lattice_refinement(d) - 2);
  ChainCheck out;
  const Box b0 = g.box(dec.root);
  out.eta2 = eta2 ? *eta2 : empirical_eta(f, b0, 4000).eta(2.0);
  out.beta = std::max({2.0, out.eta2, rd * (1.0 + 2.0 * rd * delta) / ((1.0 - 2.0 * rd * delta) * (1.0 - dec.params.tau))});
  const double scale = image_diam_clipped(f, b0, default_lattice_refinement(d)) / b0.diam();
  const double cap = (res.n + 1) * std::log(out.beta);
  std::unordered_set<DyadicCube, DyadicCubeHash> kept(res.kept_tops.begin(), res.kept_tops.end());
  for (const auto& s : dec.regions) {
    if (!kept.count(s.top)) continue;
    ChainRecord rec;
    rec.top = s.top;
    for (const auto& q : s.members.sorted()) {
      const Box mq = g.box(q).dilated(field.dilation());
      const double ratio = image_diam_clipped(f, mq, lattice_m) / mq.diam() / scale;
      rec.min_log_margin = std::min(rec.min_log_margin, cap - std::abs(std::log(ratio)));
      ++rec.cubes;
    }
    if (!(rec.min_log_margin >= 0.0)) out.holds = false;
    out.regions.push_back(rec);
  }
  return out;
}

}  // namespace qsdiff
