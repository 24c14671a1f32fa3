#pragma once

// Dyadic cube arithmetic on a root cube: lattice coordinates, ancestors,
// enumeration, shifted grids, and distance functions to unions of cubes.

#include "qsdiff/core.hpp"

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace qsdiff {

using Coords = std::array<std::int64_t, kMaxDim>;

// Axis-aligned closed cube given by center and side length. All point
// geometry (distances, dilations, containment) goes through Box.
struct Box {
  Vec center;
  double side = 1.0;

  int dim() const { return static_cast<int>(center.size()); }
  Vec lower() const { return center.array() - side / 2; }
  Vec upper() const { return center.array() + side / 2; }
  double diam() const { return side * std::sqrt(static_cast<double>(dim())); }
  double volume() const { return std::pow(side, dim()); }
  Box dilated(double lambda) const { return Box{center, side * lambda}; }

  bool contains(const Vec& x, double tol = 0.0) const {
    return ((x - center).cwiseAbs().array() <= side / 2 + tol).all();
  }
  bool contains(const Box& other, double tol = 0.0) const {
    return ((other.center - center).cwiseAbs().array() + other.side / 2 <= side / 2 + tol).all();
  }
  // Euclidean distance from x to the closed cube.
  double dist(const Vec& x) const {
    Vec gap = ((x - center).cwiseAbs().array() - side / 2).max(0.0);
    return gap.norm();
  }
  double dist(const Box& o) const {
    Vec gap = ((o.center - center).cwiseAbs().array() - (side + o.side) / 2).max(0.0);
    return gap.norm();
  }
  // Sup-norm gap between the two cubes (0 when they touch or overlap).
  double dist_inf(const Box& o) const {
    return ((o.center - center).cwiseAbs().array() - (side + o.side) / 2).max(0.0).maxCoeff();
  }
  static Box from_lower(const Vec& lo, double side) { return Box{lo.array() + side / 2, side}; }
};

// Shift of a dyadic grid by v in {0, 1/3}^d (units of the base side).
// thirds[i] == 1 means the axis is shifted by 1/3.
struct ShiftedGridId {
  std::array<int, kMaxDim> thirds{};

  bool is_standard() const {
    return std::all_of(thirds.begin(), thirds.end(), [](int t) { return t == 0; });
  }
  auto operator<=>(const ShiftedGridId&) const = default;

  // All 2^d shifts in lexicographic order, standard grid first.
  static std::vector<ShiftedGridId> all(int d) {
    std::vector<ShiftedGridId> out;
    for (int mask = 0; mask < (1 << d); ++mask) {
      ShiftedGridId id;
      for (int i = 0; i < d; ++i) id.thirds[i] = (mask >> (d - 1 - i)) & 1;
      out.push_back(id);
    }
    return out;
  }
};

// A dyadic cube: refinement level and integer lattice position at that level.
// Cubes of the root's tree satisfy 0 <= coords[i] < 2^level; lattice cubes
// outside the root (used by Whitney windows) may have any integer coords.
struct DyadicCube {
  int level = 0;
  Coords coords{};

  auto operator<=>(const DyadicCube&) const = default;
};

struct DyadicCubeHash {
  std::size_t operator()(const DyadicCube& q) const noexcept {
    std::uint64_t h = 0x9E3779B97F4A7C15ull ^ static_cast<std::uint64_t>(q.level);
    for (auto c : q.coords) {
      h ^= static_cast<std::uint64_t>(c) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

// Root frame: corner, base side, dimension, and optional 1/3 shift.
struct Grid {
  int dim = 1;
  Vec corner = Vec::Zero(1);
  double base_side = 1.0;
  ShiftedGridId shift{};

  static Grid unit(int d) {
    require(d >= 1 && d <= kMaxDim, "dimension must be in 1..3");
    return Grid{d, Vec::Zero(d), 1.0, {}};
  }
  Grid shifted(ShiftedGridId v) const {
    Grid g = *this;
    g.shift = v;
    return g;
  }

  double side(int level) const { return std::ldexp(base_side, -level); }
  double diam(int level) const { return side(level) * std::sqrt(static_cast<double>(dim)); }

  Vec origin() const {
    Vec o = corner;
    for (int i = 0; i < dim; ++i) o(i) += shift.thirds[i] * base_side / 3.0;
    return o;
  }
  Vec lower(const DyadicCube& q) const {
    Vec lo = origin();
    const double s = side(q.level);
    for (int i = 0; i < dim; ++i) lo(i) += static_cast<double>(q.coords[i]) * s;
    return lo;
  }
  Box box(const DyadicCube& q) const { return Box::from_lower(lower(q), side(q.level)); }
  Vec center(const DyadicCube& q) const { return box(q).center; }

  // Half-open lattice cube at `level` containing x.
  DyadicCube locate(const Vec& x, int level) const {
    DyadicCube q{level, {}};
    const Vec o = origin();
    const double s = side(level);
    for (int i = 0; i < dim; ++i) {
      q.coords[i] = static_cast<std::int64_t>(std::floor((x(i) - o(i)) / s));
    }
    return q;
  }

  // Volume of a level-l cube relative to the root: 2^(-d l), exact in binary.
  double relative_volume(int level) const { return std::ldexp(1.0, -dim * level); }
  double volume(int level) const { return std::pow(side(level), dim); }

  bool in_root(const DyadicCube& q) const {
    const std::int64_t n = std::int64_t{1} << q.level;
    for (int i = 0; i < dim; ++i)
      if (q.coords[i] < 0 || q.coords[i] >= n) return false;
    return q.level >= 0;
  }
};

inline DyadicCube parent(const DyadicCube& q) {
  if (q.level <= 0) throw GeometryError("above root: level-0 cube has no parent in the root tree");
  DyadicCube p{q.level - 1, {}};
  for (int i = 0; i < kMaxDim; ++i) p.coords[i] = q.coords[i] >> 1;  // floor division
  return p;
}

// N-th generation ancestor Q^N.
inline DyadicCube ancestor(const DyadicCube& q, int n) {
  require(n >= 0, "ancestor generation must be >= 0");
  if (n > q.level) throw GeometryError("above root: ancestor generation exceeds cube level");
  DyadicCube a{q.level - n, {}};
  for (int i = 0; i < kMaxDim; ++i) a.coords[i] = q.coords[i] >> n;
  return a;
}

// True iff `outer` contains `inner` (both in one lattice); includes equality.
inline bool contains(const DyadicCube& outer, const DyadicCube& inner) {
  if (inner.level < outer.level) return false;
  const int k = inner.level - outer.level;
  for (int i = 0; i < kMaxDim; ++i)
    if ((inner.coords[i] >> k) != outer.coords[i]) return false;
  return true;
}

// Children in lexicographic coordinate order (axis 0 most significant).
inline std::vector<DyadicCube> children(const DyadicCube& q, int d) {
  std::vector<DyadicCube> out;
  out.reserve(std::size_t{1} << d);
  for (int mask = 0; mask < (1 << d); ++mask) {
    DyadicCube c{q.level + 1, {}};
    for (int i = 0; i < d; ++i) c.coords[i] = 2 * q.coords[i] + ((mask >> (d - 1 - i)) & 1);
    out.push_back(c);
  }
  return out;
}

inline std::vector<DyadicCube> siblings_and_self(const DyadicCube& q, int d) {
  return children(parent(q), d);
}

constexpr std::size_t kDefaultMaxCubes = std::size_t{1} << 24;

// All descendants of q0 down to relative depth J, by non-increasing side and
// lexicographic coordinates within a level.
inline std::vector<DyadicCube> enumerate_cubes(const DyadicCube& q0, int depth, int d,
                                               std::size_t max_cubes = kDefaultMaxCubes) {
  require(depth >= 0, "enumerate_cubes: depth must be >= 0");
  std::size_t total = 0;
  for (int j = 0; j <= depth; ++j) {
    total += std::size_t{1} << (d * j);
    if (total > max_cubes) throw ParameterError("enumerate_cubes: depth exceeds configured maximum");
  }
  std::vector<DyadicCube> out;
  out.reserve(total);
  for (int j = 0; j <= depth; ++j) {
    const std::int64_t n = std::int64_t{1} << j;
    const std::int64_t count = std::int64_t{1} << (d * j);
    for (std::int64_t idx = 0; idx < count; ++idx) {
      DyadicCube c{q0.level + j, {}};
      std::int64_t rest = idx;
      for (int i = d - 1; i >= 0; --i) {
        c.coords[i] = q0.coords[i] * n + rest % n;
        rest /= n;
      }
      out.push_back(c);
    }
  }
  return out;
}

inline std::size_t tree_size(int depth, int d) {
  std::size_t total = 0;
  for (int j = 0; j <= depth; ++j) total += std::size_t{1} << (d * j);
  return total;
}

// Closed dilate membership: x in lambda*Q.
inline bool dilated_contains(const Grid& g, const DyadicCube& q, double lambda, const Vec& x) {
  require(lambda >= 1.0, "dilated_contains: lambda must be >= 1");
  return g.box(q).dilated(lambda).contains(x);
}

// ---------------------------------------------------------------------------
// Cube tokens: "level:c1,...,cd@s1,...,sd" with s in {0, 1/3}.

inline std::string cube_token(const DyadicCube& q, int d, ShiftedGridId shift = {}) {
  std::ostringstream os;
  os << q.level << ':';
  for (int i = 0; i < d; ++i) os << (i ? "," : "") << q.coords[i];
  os << '@';
  for (int i = 0; i < d; ++i) os << (i ? "," : "") << (shift.thirds[i] ? "1/3" : "0");
  return os.str();
}

inline std::pair<DyadicCube, ShiftedGridId> parse_cube_token(const std::string& tok, int d) {
  const auto colon = tok.find(':');
  const auto at = tok.find('@');
  if (colon == std::string::npos || at == std::string::npos || at < colon)
    throw ParameterError("malformed cube token: " + tok);
  DyadicCube q;
  ShiftedGridId s;
  q.level = std::stoi(tok.substr(0, colon));
  auto split = [](const std::string& body) {
    std::vector<std::string> parts;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
  };
  const auto cs = split(tok.substr(colon + 1, at - colon - 1));
  const auto ss = split(tok.substr(at + 1));
  if (static_cast<int>(cs.size()) != d || static_cast<int>(ss.size()) != d)
    throw ParameterError("cube token dimension mismatch: " + tok);
  for (int i = 0; i < d; ++i) {
    q.coords[i] = std::stoll(cs[i]);
    if (ss[i] == "0") s.thirds[i] = 0;
    else if (ss[i] == "1/3") s.thirds[i] = 1;
    else throw ParameterError("bad shift in cube token: " + tok);
  }
  return {q, s};
}

// ---------------------------------------------------------------------------
// 1/3-trick: a cube of side 2^-k/3 lies in a side-2^-k cube of one of the
// 2^d grids shifted by {0,1/3}^d. Per axis, among the shifts that work, the
// one whose cube corner is nearest R's corner is chosen (ties: unshifted).

struct ShiftedCube {
  ShiftedGridId shift;
  DyadicCube cube;
};

inline ShiftedCube shifted_containing_cube(const Grid& g, const Box& r) {
  const double ratio = g.base_side / (3.0 * r.side);
  const double kf = std::log2(ratio);
  const int k = static_cast<int>(std::lround(kf));
  if (k < 0 || std::abs(std::ldexp(g.base_side, -k) / 3.0 - r.side) > 1e-12 * g.base_side)
    throw ParameterError("shifted_containing_cube: side must be base_side * 2^-k / 3 with k >= 0");
  const double sq = std::ldexp(g.base_side, -k);
  const double tol = 1e-9 * sq;
  const Vec lo = r.lower();
  ShiftedCube out;
  out.cube.level = k;
  for (int i = 0; i < g.dim; ++i) {
    bool found = false;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 2; ++t) {
      const double o = g.corner(i) + t * g.base_side / 3.0;
      const double n = std::floor((lo(i) - o) / sq + 1e-9);
      const double qlo = o + n * sq;
      const bool fits = lo(i) >= qlo - tol && lo(i) + r.side <= qlo + sq + tol;
      const double gap = lo(i) - qlo;
      if (fits && gap < best_gap - tol) {
        best_gap = gap;
        found = true;
        out.shift.thirds[i] = t;
        out.cube.coords[i] = static_cast<std::int64_t>(n);
      }
    }
    if (!found) throw GeometryError("1/3-trick: no containing shifted cube (internal error)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// CubeSet: membership plus the ancestor "shadow" so that descendant queries
// are O(1). All members share one grid.

class CubeSet {
 public:
  CubeSet() = default;
  explicit CubeSet(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  bool empty() const { return members_.empty(); }
  std::size_t size() const { return members_.size(); }

  bool insert(const DyadicCube& q) {
    if (!members_.insert(q).second) return false;
    max_level_ = std::max(max_level_, q.level);
    DyadicCube a = q;
    while (a.level > 0) {
      a = parent(a);
      if (!shadow_.insert(a).second) break;
    }
    return true;
  }
  bool contains(const DyadicCube& q) const { return members_.count(q) > 0; }
  // Some member contains q (q itself included).
  bool contains_ancestor_of(const DyadicCube& q) const {
    DyadicCube a = q;
    while (true) {
      if (members_.count(a)) return true;
      if (a.level == 0) return false;
      a = parent(a);
    }
  }
  // Some member is contained in q (q itself included).
  bool contains_descendant_of(const DyadicCube& q) const {
    return members_.count(q) > 0 || shadow_.count(q) > 0;
  }
  // q meets the union of members (shares interior points).
  bool meets(const DyadicCube& q) const { return contains_ancestor_of(q) || contains_descendant_of(q); }
  bool in_shadow(const DyadicCube& q) const { return shadow_.count(q) > 0; }

  int max_level() const { return max_level_; }

  std::vector<DyadicCube> sorted() const {
    std::vector<DyadicCube> v(members_.begin(), members_.end());
    std::sort(v.begin(), v.end());
    return v;
  }
  // Sum of member volumes relative to the unit root (2^(-d level) each).
  double relative_volume() const {
    double s = 0.0;
    for (const auto& q : sorted()) s += std::ldexp(1.0, -dim_ * q.level);
    return s;
  }
  const std::unordered_set<DyadicCube, DyadicCubeHash>& members() const { return members_; }

 private:
  int dim_ = 1;
  int max_level_ = 0;
  std::unordered_set<DyadicCube, DyadicCubeHash> members_;
  std::unordered_set<DyadicCube, DyadicCubeHash> shadow_;
};

// ---------------------------------------------------------------------------
// Distance to a union of cubes. In region mode the value is
//   D_S(x) = min_{Q in S} dist(x, Q) + diam Q,
// in set mode it is the Euclidean distance to the union. Evaluation descends
// the ancestor tree of the members and prunes by the box lower bound.

class CubeDistance {
 public:
  enum class Mode { region, set };

  CubeDistance(Grid grid, const CubeSet& cubes, Mode mode) : grid_(std::move(grid)), cubes_(&cubes), mode_(mode) {
    if (cubes.empty()) throw GeometryError("empty region");
    std::unordered_set<DyadicCube, DyadicCubeHash> roots;
    for (const auto& q : cubes.members()) roots.insert(ancestor(q, q.level));
    roots_.assign(roots.begin(), roots.end());
    std::sort(roots_.begin(), roots_.end());
    min_diam_ = mode_ == Mode::region ? grid_.diam(cubes.max_level()) : 0.0;
  }

  const Grid& grid() const { return grid_; }
  Mode mode() const { return mode_; }

  double operator()(const Vec& x) const { return search([&](const Box& b) { return b.dist(x); }).value; }
  // inf over points of the box (exact: the box-to-cube distance).
  double at_box(const Box& b) const { return search([&](const Box& c) { return c.dist(b); }).value; }
  // Member attaining the value at x (first in DFS order among ties).
  DyadicCube argmin(const Vec& x) const { return search([&](const Box& b) { return b.dist(x); }).cube; }

 private:
  struct Hit {
    double value = std::numeric_limits<double>::infinity();
    DyadicCube cube{};
  };

  template <typename DistFn>
  Hit search(DistFn&& dist) const {
    Hit best;
    for (const auto& r : roots_) visit(r, dist, best);
    return best;
  }

  template <typename DistFn>
  void visit(const DyadicCube& node, DistFn& dist, Hit& best) const {
    const Box b = grid_.box(node);
    const double dn = dist(b);
    if (dn + min_diam_ >= best.value) return;
    if (cubes_->contains(node)) {
      const double v = dn + (mode_ == Mode::region ? b.diam() : 0.0);
      if (v < best.value) best = Hit{v, node};
    }
    auto kids = children(node, grid_.dim);
    std::vector<std::pair<double, DyadicCube>> next;
    for (const auto& c : kids) {
      if (cubes_->contains(c) || cubes_->in_shadow(c)) next.emplace_back(dist(grid_.box(c)), c);
    }
    std::sort(next.begin(), next.end());
    for (const auto& [dc, c] : next) visit(c, dist, best);
  }

  Grid grid_;
  const CubeSet* cubes_;
  Mode mode_;
  std::vector<DyadicCube> roots_;
  double min_diam_ = 0.0;
};

}  // namespace qsdiff
