#pragma once

// Whitney decompositions adapted to a stopping region or a compact union of
// cubes, the normalized-bump partition of unity, the glued affine extension
// F_S, its diagnostics, and Whitney lambda-sums.

#include "qsdiff/corona.hpp"

namespace qsdiff {

enum class WhitneyProvider { region, compact };

struct WhitneyPiece {
  DyadicCube r;
  std::optional<DyadicCube> q_tilde;  // region member nearly attaining D_S at the center of r
  std::optional<DyadicCube> q;        // maximal ancestor of q_tilde with diam <= 3 D_S(r)
  double dist_value = 0.0;            // D(r) = inf over r of D
  bool truncated = false;             // stopped at the finest level without passing the test
};

class WhitneyDecomposition {
 public:
  // Smallest odd k with (k - 1)/2 >= 2 sqrt(d): the window k Q(S) then
  // contains every point within 2 diam Q(S) of Q(S).
  static int region_window_factor(int d) {
    int k = 1;
    while ((k - 1) / 2.0 < 2.0 * std::sqrt(static_cast<double>(d))) k += 2;
    return k;
  }

  static WhitneyDecomposition for_region(const StoppingRegion& s, const Grid& grid, int finest_level = -1) {
    const int d = grid.dim;
    WhitneyDecomposition w(grid, WhitneyProvider::region);
    w.provider_ = std::make_shared<CubeSet>(s.members);
    w.skip_ = std::make_shared<CubeSet>(s.z_approx);
    w.top_ = s.top;
    int deepest = s.members.max_level();
    if (finest_level < 0) finest_level = deepest + 5;
    w.finest_level_ = finest_level;
    w.window_level_ = s.top.level;
    const int k = region_window_factor(d);
    const int half = (k - 1) / 2;
    w.window_box_ = grid.box(s.top).dilated(k);
    std::vector<DyadicCube> roots;
    const std::int64_t span = k;
    std::int64_t total = 1;
    for (int i = 0; i < d; ++i) total *= span;
    for (std::int64_t idx = 0; idx < total; ++idx) {
      DyadicCube q{s.top.level, {}};
      std::int64_t rest = idx;
      for (int i = d - 1; i >= 0; --i) {
        q.coords[i] = s.top.coords[i] - half + rest % span;
        rest /= span;
      }
      roots.push_back(q);
    }
    w.window_roots_ = roots;
    w.build();
    return w;
  }

  // Window: lattice cubes at one level forming a cube (e.g. the root cube).
  static WhitneyDecomposition for_compact(const CubeSet& k, const Grid& grid, const std::vector<DyadicCube>& window_roots,
                                          int finest_level) {
    if (k.empty()) throw GeometryError("empty region");
    require(!window_roots.empty(), "whitney: empty window");
    WhitneyDecomposition w(grid, WhitneyProvider::compact);
    w.provider_ = std::make_shared<CubeSet>(k);
    w.skip_ = w.provider_;
    w.finest_level_ = finest_level;
    w.window_level_ = window_roots.front().level;
    w.window_roots_ = window_roots;
    Vec lo = grid.lower(window_roots.front()), hi = lo;
    for (const auto& r : window_roots) {
      require(r.level == w.window_level_, "whitney: window cubes must share a level");
      const Box b = grid.box(r);
      lo = lo.cwiseMin(b.lower());
      hi = hi.cwiseMax(b.upper());
    }
    w.window_box_ = Box{(lo + hi) / 2, (hi - lo).maxCoeff()};
    w.build();
    return w;
  }

  const Grid& grid() const { return grid_; }
  WhitneyProvider provider() const { return kind_; }
  const std::vector<WhitneyPiece>& pieces() const { return pieces_; }
  const Box& window_box() const { return window_box_; }
  const std::vector<DyadicCube>& window_roots() const { return window_roots_; }
  int finest_level() const { return finest_level_; }
  const CubeDistance& distance() const { return *dist_; }
  const CubeSet& provider_cubes() const { return *provider_; }
  const CubeSet& skip_set() const { return *skip_; }
  const DyadicCube& top() const { return top_; }
  std::size_t truncated_count() const {
    return static_cast<std::size_t>(std::count_if(pieces_.begin(), pieces_.end(), [](const auto& p) { return p.truncated; }));
  }

  bool in_window(const Vec& x) const { return window_box_.contains(x, 1e-14 * window_box_.side); }

  // x lies in a skipped cube (z cube of a region, or a cube of K).
  bool in_skip(const Vec& x) const {
    for (int l = 0; l <= skip_->max_level(); ++l)
      if (skip_->contains(grid_.locate(x, l))) return true;
    return false;
  }

  // Pieces j with x in lambda R_j (closed), lambda in [1, 3].
  std::vector<std::size_t> pieces_near(const Vec& x, double lambda) const {
    std::vector<std::size_t> out;
    const int d = grid_.dim;
    int nb = 1;
    for (int i = 0; i < d; ++i) nb *= 3;
    for (int l : levels_) {
      const DyadicCube c = grid_.locate(x, l);
      for (int m = 0; m < nb; ++m) {
        DyadicCube q = c;
        int rest = m;
        for (int i = 0; i < d; ++i) {
          q.coords[i] += rest % 3 - 1;
          rest /= 3;
        }
        auto it = index_.find(q);
        if (it != index_.end() && grid_.box(q).dilated(lambda).contains(x)) out.push_back(it->second);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::optional<std::size_t> piece_of(const DyadicCube& q) const {
    auto it = index_.find(q);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Pieces j != i with 2R_i and 2R_j sharing interior points.
  std::vector<std::size_t> touching_pieces(std::size_t i) const {
    std::vector<std::size_t> out;
    const Box bi = grid_.box(pieces_[i].r).dilated(2.0);
    std::vector<DyadicCube> stack(shadow_roots_.begin(), shadow_roots_.end());
    while (!stack.empty()) {
      const DyadicCube n = stack.back();
      stack.pop_back();
      const Box bn = grid_.box(n);
      // Any piece inside n has its double inside the side/2-neighbourhood of n.
      if (bn.dist_inf(bi) >= bn.side / 2) continue;
      if (auto it = index_.find(n); it != index_.end()) {
        if (it->second != i && bn.dilated(2.0).dist_inf(bi) <= 0.0 && overlaps_open(bn.dilated(2.0), bi))
          out.push_back(it->second);
        continue;
      }
      for (const auto& c : children(n, grid_.dim))
        if (piece_set_.contains(c) || piece_set_.in_shadow(c)) stack.push_back(c);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  WhitneyDecomposition(Grid grid, WhitneyProvider kind) : grid_(std::move(grid)), kind_(kind), piece_set_(grid_.dim) {}

  static bool overlaps_open(const Box& a, const Box& b) {
    return ((a.center - b.center).cwiseAbs().array() < (a.side + b.side) / 2).all();
  }

  void build() {
    dist_ = std::make_shared<CubeDistance>(grid_, *provider_,
                                           kind_ == WhitneyProvider::region ? CubeDistance::Mode::region
                                                                            : CubeDistance::Mode::set);
    std::vector<DyadicCube> stack(window_roots_.rbegin(), window_roots_.rend());
    while (!stack.empty()) {
      const DyadicCube q = stack.back();
      stack.pop_back();
      if (skip_->contains_ancestor_of(q)) continue;
      const Box b = grid_.box(q);
      const double dq = dist_->at_box(b);
      const bool pass = b.diam() <= dq / 20.0;
      if (pass || q.level >= finest_level_) {
        if (!pass && kind_ == WhitneyProvider::compact && skip_->meets(q)) continue;
        WhitneyPiece p;
        p.r = q;
        p.dist_value = dq;
        p.truncated = !pass;
        if (kind_ == WhitneyProvider::region) assign_region_cubes(p, b);
        index_.emplace(q, pieces_.size());
        piece_set_.insert(q);
        pieces_.push_back(p);
        continue;
      }
      auto kids = children(q, grid_.dim);
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
    std::unordered_set<int> lv;
    for (const auto& p : pieces_) lv.insert(p.r.level);
    levels_.assign(lv.begin(), lv.end());
    std::sort(levels_.begin(), levels_.end());
    std::unordered_set<DyadicCube, DyadicCubeHash> roots;
    for (const auto& p : pieces_) roots.insert(p.r.level > 0 ? ancestor(p.r, p.r.level) : p.r);
    shadow_roots_.assign(roots.begin(), roots.end());
    std::sort(shadow_roots_.begin(), shadow_roots_.end());
  }

  void assign_region_cubes(WhitneyPiece& p, const Box& b) {
    const DyadicCube qt = dist_->argmin(b.center);
    p.q_tilde = qt;
    DyadicCube a = qt;
    while (a != top_ && grid_.diam(a.level - 1) <= 3.0 * p.dist_value) a = parent(a);
    p.q = a;
  }

  Grid grid_;
  WhitneyProvider kind_;
  std::shared_ptr<CubeSet> provider_;
  std::shared_ptr<CubeSet> skip_;
  std::shared_ptr<CubeDistance> dist_;
  DyadicCube top_{};
  int finest_level_ = 0;
  int window_level_ = 0;
  Box window_box_;
  std::vector<DyadicCube> window_roots_;
  std::vector<WhitneyPiece> pieces_;
  std::unordered_map<DyadicCube, std::size_t, DyadicCubeHash> index_;
  CubeSet piece_set_;
  std::vector<int> levels_;
  std::vector<DyadicCube> shadow_roots_;
};

// ---------------------------------------------------------------------------
// Bumps: per-axis quintic drop from 1 at t = 1 to 0 at t = 9/8, where t is
// the sup-distance to the center in units of half the side.

inline double bump_profile(double t, double* dt = nullptr) {
  if (t <= 1.0) {
    if (dt) *dt = 0.0;
    return 1.0;
  }
  if (t >= 9.0 / 8.0) {
    if (dt) *dt = 0.0;
    return 0.0;
  }
  const double u = (t - 1.0) * 8.0;
  const double u2 = u * u, u3 = u2 * u;
  if (dt) *dt = -8.0 * 30.0 * u2 * (u2 - 2.0 * u + 1.0);
  return 1.0 - u3 * (10.0 - 15.0 * u + 6.0 * u2);
}

inline double cube_bump(const Box& r, const Vec& x, Vec* grad = nullptr) {
  const int d = r.dim();
  const double half = r.side / 2.0;
  std::array<double, kMaxDim> v{}, dv{};
  double prod = 1.0;
  for (int i = 0; i < d; ++i) {
    const double off = x(i) - r.center(i);
    v[i] = bump_profile(std::abs(off) / half, &dv[i]);
    dv[i] *= (off < 0 ? -1.0 : 1.0) / half;
    prod *= v[i];
  }
  if (grad) {
    grad->setZero(d);
    for (int i = 0; i < d; ++i) {
      double g = dv[i];
      for (int k = 0; k < d; ++k)
        if (k != i) g *= v[k];
      (*grad)(i) = g;
    }
  }
  return prod;
}

struct UnityTerm {
  std::size_t piece = 0;
  double phi = 0.0;
  Vec grad;  // gradient of phi
};

// phi_j = b_j / sum_k b_k over pieces whose 9/8-dilate contains x.
inline std::vector<UnityTerm> partition_of_unity(const WhitneyDecomposition& w, const Vec& x, bool with_gradient = false) {
  const auto near = w.pieces_near(x, 9.0 / 8.0);
  std::vector<UnityTerm> terms;
  const int d = w.grid().dim;
  double total = 0.0;
  Vec total_grad = Vec::Zero(d);
  std::vector<double> raw;
  std::vector<Vec> raw_grad;
  for (auto j : near) {
    Vec g;
    const double b = cube_bump(w.grid().box(w.pieces()[j].r), x, with_gradient ? &g : nullptr);
    if (b <= 0.0) continue;
    terms.push_back(UnityTerm{j, b, Vec()});
    raw.push_back(b);
    if (with_gradient) {
      raw_grad.push_back(g);
      total_grad += g;
    }
    total += b;
  }
  if (!(total > 0.0)) throw PropertyViolation("partition of unity: no bump covers the point");
  for (std::size_t k = 0; k < terms.size(); ++k) {
    terms[k].phi = raw[k] / total;
    if (with_gradient) terms[k].grad = (raw_grad[k] * total - raw[k] * total_grad) / (total * total);
  }
  return terms;
}

// ---------------------------------------------------------------------------

class Extension {
 public:
  enum class Branch { z, whitney, far };

  struct Value {
    Vec y;
    Branch branch = Branch::whitney;
  };

  // Holds references: the region, decomposition and map must outlive it.
  Extension(const StoppingRegion& s, const WhitneyDecomposition& w, const MapSpec& f)
      : s_(&s), w_(&w), f_(f), top_box_(w.grid().box(s.top)) {
    require(w.provider() == WhitneyProvider::region, "extension needs a region-adapted decomposition");
    for (const auto& p : w.pieces())
      if (!p.q) throw GeometryError("whitney piece without an assigned region cube");
  }

  const StoppingRegion& region() const { return *s_; }
  const WhitneyDecomposition& whitney() const { return *w_; }
  const MapSpec& map() const { return f_; }
  const AffineMap& top_map() const { return s_->top_map(); }
  const Box& top_box() const { return top_box_; }

  bool far(const Vec& x) const { return top_box_.dist(x) >= 2.0 * top_box_.diam(); }

  Value eval(const Vec& x) const {
    if (!w_->in_window(x)) {
      if (far(x)) return Value{top_map()(x), Branch::far};
      throw DomainError("extension: point outside the Whitney window");
    }
    if (w_->in_skip(x)) return Value{f_.eval(x), Branch::z};
    Vec y = Vec::Zero(top_map().dim_out());
    for (const auto& t : partition_of_unity(*w_, x)) y += t.phi * map_of(t.piece)(x);
    if (far(x)) {
      const Vec a = top_map()(x);
      if ((y - a).norm() > 1e-10 * std::max(1.0, a.norm()))
        throw PropertyViolation("far-field identity violated: F_S differs from the top map");
    }
    return Value{y, Branch::whitney};
  }

  // DF_S from the analytic bump derivatives.
  Mat gradient(const Vec& x) const {
    if (!w_->in_window(x)) {
      if (far(x)) return top_map().linear();
      throw DomainError("extension: point outside the Whitney window");
    }
    if (w_->in_skip(x)) {
      const double h = 1e-6 * top_box_.side;
      return finite_diff_gradient(f_, x, h).jacobian;
    }
    Mat g = Mat::Zero(top_map().dim_out(), top_map().dim_in());
    for (const auto& t : partition_of_unity(*w_, x, true)) {
      const auto& a = map_of(t.piece);
      g += t.phi * a.linear() + a(x) * t.grad.transpose();
    }
    return g;
  }

  const AffineMap& map_of(std::size_t piece) const { return s_->affine.at(*w_->pieces()[piece].q); }

  MapSpec as_map() const {
    const Extension* self = this;
    return MapSpec::custom(top_map().dim_in(), top_map().dim_out(), [self](const Vec& x) { return self->eval(x).y; },
                           "extension");
  }

 private:
  const StoppingRegion* s_;
  const WhitneyDecomposition* w_;
  MapSpec f_;
  Box top_box_;
};

// ---------------------------------------------------------------------------

struct WhitneyAudit {
  int samples = 0;
  double min_lower_ratio = std::numeric_limits<double>::infinity();  // min D(x) / diam R
  double max_upper_ratio = 0.0;                                      // max D(x) / diam R
  bool bracket_holds = true;
  double max_neighbor_ratio = 1.0;
  bool neighbor_holds = true;
  int max_overlap = 0;  // multiplicity of the doubles on samples
  bool maximality_holds = true;
  bool core_identity_holds = true;  // phi_i = 1 on the half cores
  double max_q_in_r = 0.0;          // smallest M with Q_j in M R_j
  double max_r_in_q = 0.0;          // smallest M with R_j in M Q_j (pieces with diam R <= 2 diam Q(S))
};

inline double containment_factor(const Box& inner, const Box& outer) {
  return (2.0 * (inner.center - outer.center).cwiseAbs().maxCoeff() + inner.side) / outer.side;
}

inline WhitneyAudit audit_whitney(const WhitneyDecomposition& w, int samples, std::uint64_t seed = 11) {
  const Grid& g = w.grid();
  const int d = g.dim;
  WhitneyAudit a;
  QuasiRandom qr(d, seed);
  const Vec lo = w.window_box().lower();
  for (int n = 0; a.samples < samples && n < 50 * samples; ++n) {
    const Vec x = lo + w.window_box().side * qr.point(static_cast<std::uint64_t>(n));
    if (w.in_skip(x)) continue;
    const auto inside = w.pieces_near(x, 1.0);
    if (inside.empty()) continue;
    bool truncated = false;
    for (auto j : inside) truncated |= w.pieces()[j].truncated;
    if (truncated) continue;
    ++a.samples;
    const double dx = w.distance()(x);
    for (auto j : inside) {
      const double dr = g.diam(w.pieces()[j].r.level);
      a.min_lower_ratio = std::min(a.min_lower_ratio, dx / dr);
      a.max_upper_ratio = std::max(a.max_upper_ratio, dx / dr);
    }
    a.max_overlap = std::max(a.max_overlap, static_cast<int>(w.pieces_near(x, 2.0).size()));
  }
  a.bracket_holds = a.min_lower_ratio >= 20.0 * (1.0 - 1e-12) && a.max_upper_ratio <= 60.0 * (1.0 + 1e-12);

  const double top_diam = w.provider() == WhitneyProvider::region ? g.diam(w.top().level) : 0.0;
  for (std::size_t i = 0; i < w.pieces().size(); ++i) {
    const auto& p = w.pieces()[i];
    const Box rb = g.box(p.r);
    if (!p.truncated) {
      if (!(rb.diam() <= p.dist_value / 20.0)) a.maximality_holds = false;
      const bool is_root = std::find(w.window_roots().begin(), w.window_roots().end(), p.r) != w.window_roots().end();
      if (!is_root) {
        const Box pb = g.box(parent(p.r));
        if (pb.diam() <= w.distance().at_box(pb) / 20.0) a.maximality_holds = false;
      }
    }
    for (auto j : w.touching_pieces(i)) {
      const double ratio = g.diam(p.r.level) / g.diam(w.pieces()[j].r.level);
      a.max_neighbor_ratio = std::max(a.max_neighbor_ratio, ratio);
    }
    if (p.q) {
      const Box qb = g.box(*p.q);
      a.max_q_in_r = std::max(a.max_q_in_r, containment_factor(qb, rb));
      if (rb.diam() <= 2.0 * top_diam) a.max_r_in_q = std::max(a.max_r_in_q, containment_factor(rb, qb));
    }
    // Half-core: the center and the corners of (1/2) R_i.
    for (int mask = 0; mask <= (1 << d); ++mask) {
      Vec x = rb.center;
      if (mask < (1 << d))
        for (int k = 0; k < d; ++k) x(k) += ((mask >> k) & 1 ? 0.25 : -0.25) * rb.side;
      if (w.in_skip(x)) continue;
      const auto terms = partition_of_unity(w, x);
      if (terms.size() != 1 || terms.front().piece != i || terms.front().phi != 1.0) a.core_identity_holds = false;
    }
  }
  a.neighbor_holds = a.max_neighbor_ratio <= 2.0;
  return a;
}

// ---------------------------------------------------------------------------

struct ExtensionDiagnostics {
  double grad_deviation_energy = 0.0;  // integral of |DF_S - A'_top|^2
  std::vector<double> energy_density;  // per quadrature node (same order as the node sample)
  Box energy_box;
  int energy_m = 0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  int delta3_outside_ball_nonzero = 0;  // cubes with 2Q missing B_S but Omega > 0
  double grad_ratio = std::numeric_limits<double>::quiet_NaN();   // energy / (|A'|^2 tau^2 |M2|)
  double omega_ratio = std::numeric_limits<double>::quiet_NaN();  // total / (eps^2 |A'|^2 |Q(S)|)
  bool far_field_pass = true;
};

inline ExtensionDiagnostics extension_diagnostics(const Extension& ext, int grid_m, double eps, double tau,
                                                  int levels_below = 3, int m = 2) {
  const auto& w = ext.whitney();
  const Grid& g = w.grid();
  const int d = g.dim;
  const auto& top = ext.top_map();
  ExtensionDiagnostics out;
  out.energy_box = w.window_box();
  out.energy_m = grid_m;
  const auto nodes = sample_nodes(MapSpec::identity(d), w.window_box(), grid_m);
  const double cell = w.window_box().volume() / static_cast<double>(nodes.x.size());
  out.energy_density.reserve(nodes.x.size());
  for (const auto& x : nodes.x) {
    const double e = (ext.gradient(x) - top.linear()).squaredNorm();
    out.energy_density.push_back(e);
    out.grad_deviation_energy += e * cell;
  }

  const Box& tb = ext.top_box();
  const double ball_r = 3.0 * tb.diam();
  const MapSpec fs = ext.as_map();
  const int top_level = ext.region().top.level;
  for (int l = top_level - 2; l <= top_level + levels_below; ++l) {
    const double side = g.side(l);
    // Lattice cubes whose double can meet the bounding box of B_S.
    const Box reach{tb.center, 2.0 * ball_r + 2.0 * side};
    const DyadicCube lo = g.locate(reach.lower(), l);
    const DyadicCube hi = g.locate(reach.upper(), l);
    std::int64_t count = 1;
    std::array<std::int64_t, kMaxDim> span{};
    for (int i = 0; i < d; ++i) {
      span[i] = hi.coords[i] - lo.coords[i] + 1;
      count *= span[i];
    }
    for (std::int64_t idx = 0; idx < count; ++idx) {
      DyadicCube q{l, {}};
      std::int64_t rest = idx;
      for (int i = d - 1; i >= 0; --i) {
        q.coords[i] = lo.coords[i] + rest % span[i];
        rest /= span[i];
      }
      const Box qb = g.box(q);
      const Box q2 = qb.dilated(2.0);
      const bool meets_ball = (q2.dist(tb.center) < ball_r);
      const double om = big_omega(fs, q2, m);
      const double contrib = sqr(om) * qb.volume();
      if (!meets_ball) {
        if (om > 1e-9) ++out.delta3_outside_ball_nonzero;
        continue;
      }
      const double dq = w.distance().at_box(qb);
      if (qb.diam() <= dq / 20.0) out.delta2 += contrib;
      else if (qb.diam() <= tb.diam()) out.delta1 += contrib;
      else out.delta3 += contrib;
    }
  }
  out.far_field_pass = out.delta3_outside_ball_nonzero == 0;
  const double a2 = sqr(top.op_norm());
  double m2 = 0.0;
  for (const auto& q : ext.region().m2.members()) m2 += g.volume(q.level);
  if (m2 > 0.0) out.grad_ratio = out.grad_deviation_energy / (a2 * tau * tau * m2);
  out.omega_ratio = (out.delta1 + out.delta2 + out.delta3) / (eps * eps * a2 * tb.volume());
  return out;
}

// ---------------------------------------------------------------------------
// Whitney lambda-sums for a compact K inside Q0:
//   lambda(Q) = sum over pieces Q_j inside Q of (side Q_j / side Q)^(d + alpha),
// pieces being the maximal cubes of Q0 \ K whose sup-distance to K is at
// least their side, truncated at relative depth J.

struct LambdaSum {
  std::vector<DyadicCube> pieces;
  std::unordered_map<DyadicCube, double, DyadicCubeHash> lambda;
  double total = 0.0;        // sum lambda(Q) |Q| / |Q0|
  double total_bound = 0.0;  // (1 - 2^-alpha)^-1 |Q0 \ K| / |Q0|
  bool per_cube_holds = true;  // lambda(Q) <= |Q \ K| / |Q| <= 1
  bool total_holds = true;
  double worst_per_cube_slack = std::numeric_limits<double>::infinity();
};

namespace detail {

// |Q cap K| / |Q| for a union of cubes of one grid.
inline double covered_fraction(const CubeSet& k, const DyadicCube& q, int d) {
  if (k.contains_ancestor_of(q)) return 1.0;
  if (!k.contains_descendant_of(q)) return 0.0;
  double s = 0.0;
  for (const auto& c : children(q, d)) s += covered_fraction(k, c, d);
  return s / static_cast<double>(1 << d);
}

}  // namespace detail

inline LambdaSum lambda_sum(const CubeSet& k, const Grid& grid, const DyadicCube& q0, int depth, double alpha) {
  require(alpha > 0.0, "alpha must be positive");
  if (k.empty()) throw ParameterError("lambda_sum: K must be nonempty");
  const int d = grid.dim;
  for (const auto& m : k.members())
    require(contains(q0, m) && m.level <= q0.level + depth, "lambda_sum: K must consist of cubes of Q0 above the depth floor");
  const auto kcubes = k.sorted();
  auto sup_gap = [&](const Box& b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : kcubes) best = std::min(best, grid.box(m).dist_inf(b));
    return best;
  };
  LambdaSum out;
  std::vector<DyadicCube> stack{q0};
  while (!stack.empty()) {
    const DyadicCube q = stack.back();
    stack.pop_back();
    if (k.contains_ancestor_of(q)) continue;
    const Box b = grid.box(q);
    if (sup_gap(b) >= b.side || (q.level == q0.level + depth && !k.meets(q))) {
      out.pieces.push_back(q);
      continue;
    }
    if (q.level == q0.level + depth) continue;
    auto kids = children(q, d);
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
  }
  std::sort(out.pieces.begin(), out.pieces.end());
  for (const auto& q : enumerate_cubes(q0, depth, d)) out.lambda[q] = 0.0;
  for (const auto& p : out.pieces) {
    for (int up = 0; p.level - up >= q0.level; ++up) {
      const DyadicCube a = ancestor(p, up);
      out.lambda[a] += std::pow(std::ldexp(1.0, -up), d + alpha);
    }
  }
  const double v0 = grid.volume(q0.level);
  for (const auto& [q, lam] : out.lambda) out.total += lam * grid.volume(q.level) / v0;
  const double free_frac = 1.0 - detail::covered_fraction(k, q0, d);
  out.total_bound = free_frac / (1.0 - std::exp2(-alpha));
  out.total_holds = out.total <= out.total_bound * (1.0 + 1e-12);
  for (const auto& [q, lam] : out.lambda) {
    const double bound = 1.0 - detail::covered_fraction(k, q, d);
    out.worst_per_cube_slack = std::min(out.worst_per_cube_slack, bound - lam);
    if (lam > bound * (1.0 + 1e-12) + 1e-15 || bound > 1.0) out.per_cube_holds = false;
  }
  return out;
}

}  // namespace qsdiff
