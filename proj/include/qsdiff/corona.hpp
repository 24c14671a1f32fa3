#pragma once

// Stopping-time decomposition of a dyadic tree into bad cubes and coherent
// regions on which the fitted affine maps stay close to the top cube's map.

#include "qsdiff/carleson.hpp"

namespace qsdiff {

struct StoppingRegion {
  DyadicCube top;
  CubeSet members;
  CubeSet minimal;   // members above the depth floor with no member children
  CubeSet z_approx;  // members on the depth floor
  CubeSet m1;        // minimal cubes stopped by the omega-sum condition
  CubeSet m2;        // minimal cubes stopped by linear-part drift only
  std::vector<DyadicCube> admission_order;
  std::unordered_map<DyadicCube, AffineMap, DyadicCubeHash> affine;

  explicit StoppingRegion(int d = 1) : members(d), minimal(d), z_approx(d), m1(d), m2(d) {}

  const AffineMap& top_map() const { return affine.at(top); }
};

struct CoronaParams {
  double eps = 0.05;
  double tau = 0.3;
};

struct CoronaDecomposition {
  DyadicCube root;
  CoronaParams params;
  double dilation = 1.0;
  int depth = 0;
  CubeSet bad;
  std::vector<StoppingRegion> regions;
  const OmegaField* field = nullptr;  // must outlive the decomposition
};

inline bool is_bad(const OmegaRecord& r, double eps) { return r.omega >= eps || !r.attained; }

namespace detail {

// Sum of omega^2 over Q and its ancestors up to and including `top`.
inline double ancestor_omega_sq(const OmegaField& field, const DyadicCube& q, const DyadicCube& top) {
  double s = 0.0;
  DyadicCube a = q;
  while (true) {
    s += sqr(field.at(a).omega);
    if (a.level == top.level) break;
    a = parent(a);
  }
  return s;
}

inline bool linear_close(const AffineMap& top, const AffineMap& q, double tau) {
  return operator_norm(top.linear() - q.linear()) <= tau * top.op_norm();
}

}  // namespace detail

inline StoppingRegion build_region(const OmegaField& field, const DyadicCube& q1, double eps, double tau,
                                   const CubeSet& occupied) {
  require(eps > 0.0 && eps < 1.0 && tau > 0.0 && tau < 1.0, "eps and tau must lie in (0,1)");
  const auto& seed = field.at(q1);
  if (seed.omega >= eps || !seed.attained || !seed.affine || occupied.contains(q1))
    throw ParameterError("not a region seed: " + cube_token(q1, field.dim(), field.grid().shift));
  const int d = field.dim();
  StoppingRegion s(d);
  s.top = q1;
  const AffineMap top_map = *seed.affine;
  std::unordered_map<DyadicCube, double, DyadicCubeHash> sums;
  sums[q1] = sqr(seed.omega);
  s.members.insert(q1);
  s.affine.emplace(q1, top_map);
  s.admission_order.push_back(q1);

  std::vector<DyadicCube> frontier{q1};
  while (!frontier.empty()) {
    std::vector<DyadicCube> next;
    for (const auto& q : frontier) {
      if (q.level >= field.deepest_level()) {
        s.z_approx.insert(q);
        continue;
      }
      const double psum = sums.at(q);
      bool ok = true;
      bool sum_fails = false;
      auto kids = children(q, d);
      for (const auto& c : kids) {
        const auto& r = field.at(c);
        if (psum + sqr(r.omega) >= sqr(eps)) sum_fails = true;
        if (!r.attained || !r.affine || !detail::linear_close(top_map, *r.affine, tau) || occupied.contains(c))
          ok = false;
      }
      if (ok && !sum_fails) {
        for (const auto& c : kids) {
          const auto& r = field.at(c);
          sums[c] = psum + sqr(r.omega);
          s.members.insert(c);
          s.affine.emplace(c, *r.affine);
          s.admission_order.push_back(c);
          next.push_back(c);
        }
      } else {
        s.minimal.insert(q);
      }
    }
    std::sort(next.begin(), next.end());
    frontier = std::move(next);
  }
  return s;
}

// m1: some child reaches the omega^2 budget or has no attained map;
// m2: every child passes the budget but some drifts beyond tau.
inline void classify_minimal(StoppingRegion& s, const OmegaField& field, double eps, double tau) {
  s.m1 = CubeSet(field.dim());
  s.m2 = CubeSet(field.dim());
  const AffineMap& top_map = s.top_map();
  for (const auto& q : s.minimal.sorted()) {
    const double psum = detail::ancestor_omega_sq(field, q, s.top);
    bool budget = false;
    bool drift = false;
    for (const auto& c : children(q, field.dim())) {
      const auto& r = field.at(c);
      if (psum + sqr(r.omega) >= sqr(eps) || !r.attained || !r.affine) budget = true;
      else if (!detail::linear_close(top_map, *r.affine, tau)) drift = true;
    }
    if (budget) s.m1.insert(q);
    else if (drift) s.m2.insert(q);
  }
}

inline CoronaDecomposition decompose(const OmegaField& field, const DyadicCube& q0, double eps, double tau) {
  require(eps > 0.0 && eps < 1.0 && tau > 0.0 && tau < 1.0, "eps and tau must lie in (0,1)");
  field.at(q0);
  CoronaDecomposition out;
  out.root = q0;
  out.params = {eps, tau};
  out.dilation = field.dilation();
  out.depth = field.deepest_level() - q0.level;
  out.field = &field;
  out.bad = CubeSet(field.dim());
  CubeSet covered(field.dim());
  const auto cubes = enumerate_cubes(q0, out.depth, field.dim());
  for (const auto& q : cubes)
    if (is_bad(field.at(q), eps)) out.bad.insert(q);
  for (const auto& q : cubes) {
    if (out.bad.contains(q) || covered.contains(q)) continue;
    auto s = build_region(field, q, eps, tau, covered);
    classify_minimal(s, field, eps, tau);
    for (const auto& m : s.members.members()) covered.insert(m);
    out.regions.push_back(std::move(s));
  }
  return out;
}

inline CoronaDecomposition decompose(const OmegaField& field, double eps, double tau) {
  return decompose(field, field.root(), eps, tau);
}

// ---------------------------------------------------------------------------

struct StructureAudit {
  bool partition_exact = true;
  bool coherent = true;
  bool sibling_closed = true;
  bool conditions_hold = true;
  bool bracket_holds = true;  // (1-tau)|A'_top| <= |A'_Q| <= (1+tau)|A'_top|
  bool tiles = true;          // |Q(S)| = |M1| + |M2| + |z|
  bool z_disjoint = true;
  std::string first_failure;
};

inline StructureAudit audit_structure(const CoronaDecomposition& dec) {
  const OmegaField& field = *dec.field;
  const int d = field.dim();
  StructureAudit a;
  auto fail = [&](bool& flag, const std::string& why) {
    if (flag && a.first_failure.empty()) a.first_failure = why;
    flag = false;
  };
  std::unordered_map<DyadicCube, int, DyadicCubeHash> count;
  for (const auto& q : dec.bad.members()) ++count[q];
  for (const auto& s : dec.regions)
    for (const auto& q : s.members.members()) ++count[q];
  const auto cubes = enumerate_cubes(dec.root, dec.depth, d);
  for (const auto& q : cubes)
    if (count[q] != 1) fail(a.partition_exact, "partition: cube " + cube_token(q, d) + " covered " + std::to_string(count[q]) + " times");
  if (count.size() != cubes.size()) fail(a.partition_exact, "partition: stray cubes outside the tree");

  std::unordered_set<DyadicCube, DyadicCubeHash> z_seen;
  const double eps2 = sqr(dec.params.eps);
  for (const auto& s : dec.regions) {
    const AffineMap& top = s.top_map();
    double m_vol = 0.0;
    for (const auto& q : s.members.members()) {
      if (q != s.top) {
        const auto p = parent(q);
        if (!s.members.contains(p)) fail(a.coherent, "coherence: parent missing for " + cube_token(q, d));
        for (const auto& sib : children(p, d))
          if (!s.members.contains(sib)) fail(a.sibling_closed, "sibling closure broken at " + cube_token(q, d));
      }
      if (detail::ancestor_omega_sq(field, q, s.top) >= eps2) fail(a.conditions_hold, "omega budget exceeded at " + cube_token(q, d));
      const auto& aq = s.affine.at(q);
      if (!detail::linear_close(top, aq, dec.params.tau)) fail(a.conditions_hold, "linear drift at " + cube_token(q, d));
      const double ratio = aq.op_norm() / top.op_norm();
      if (ratio < 1.0 - dec.params.tau - 1e-9 || ratio > 1.0 + dec.params.tau + 1e-9)
        fail(a.bracket_holds, "norm bracket at " + cube_token(q, d));
    }
    for (const auto& q : s.m1.members()) m_vol += field.grid().volume(q.level);
    for (const auto& q : s.m2.members()) m_vol += field.grid().volume(q.level);
    for (const auto& q : s.z_approx.members()) {
      m_vol += field.grid().volume(q.level);
      if (!z_seen.insert(q).second) fail(a.z_disjoint, "z sets overlap at " + cube_token(q, d));
    }
    const double top_vol = field.grid().volume(s.top.level);
    if (std::abs(m_vol - top_vol) > 1e-12 * top_vol) fail(a.tiles, "volume identity fails for region " + cube_token(s.top, d));
  }
  return a;
}

struct PackingReport {
  double bad_mass = 0.0;     // sum over bad cubes of |Q| / |Q0|
  double region_mass = 0.0;  // sum over regions of |Q(S)| / |Q0|
  double carleson_constant = 0.0;
  double bad_bound = 0.0;     // C_M / eps^2
  double region_bound = 0.0;  // 4 + 2^(d+1) C_M / eps^2
  bool bad_bound_holds = false;
  bool region_bound_holds = false;
  std::vector<double> m2_fraction;  // |M2(S)| / |Q(S)| per region
  bool m2_diagnostic_holds = true;   // every region below 1/2
  bool z_disjoint = true;
  bool volume_identity = true;
};

inline PackingReport packing_report(const CoronaDecomposition& dec) {
  const OmegaField& field = *dec.field;
  const Grid& g = field.grid();
  const double v0 = g.volume(dec.root.level);
  PackingReport r;
  for (const auto& q : dec.bad.members()) r.bad_mass += g.volume(q.level) / v0;
  for (const auto& s : dec.regions) r.region_mass += g.volume(s.top.level) / v0;
  r.carleson_constant = carleson_sum(field, dec.root).normalized;
  const double e2 = sqr(dec.params.eps);
  r.bad_bound = r.carleson_constant / e2;
  r.region_bound = 4.0 + std::ldexp(1.0, field.dim() + 1) * r.carleson_constant / e2;
  r.bad_bound_holds = r.bad_mass <= r.bad_bound * (1.0 + 1e-12);
  r.region_bound_holds = r.region_mass <= r.region_bound * (1.0 + 1e-12);
  for (const auto& s : dec.regions) {
    double m2 = 0.0;
    for (const auto& q : s.m2.members()) m2 += g.volume(q.level);
    const double frac = m2 / g.volume(s.top.level);
    r.m2_fraction.push_back(frac);
    if (!(frac < 0.5)) r.m2_diagnostic_holds = false;
  }
  const auto audit = audit_structure(dec);
  r.z_disjoint = audit.z_disjoint;
  r.volume_identity = audit.tiles;
  return r;
}

// One line per region: top token, member count, m1/m2 counts, z volume.
inline std::string region_dump(const CoronaDecomposition& dec, bool verbose = false) {
  const OmegaField& field = *dec.field;
  const int d = field.dim();
  std::ostringstream os;
  os << "# top,members,m1,m2,z_volume\n";
  for (const auto& s : dec.regions) {
    double zv = 0.0;
    for (const auto& q : s.z_approx.members()) zv += field.grid().volume(q.level);
    os << cube_token(s.top, d, field.grid().shift) << ',' << s.members.size() << ',' << s.m1.size() << ','
       << s.m2.size() << ',' << zv << '\n';
    if (verbose)
      for (const auto& q : s.admission_order) os << "  " << cube_token(q, d, field.grid().shift) << '\n';
  }
  return os.str();
}

}  // namespace qsdiff
