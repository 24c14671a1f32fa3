#pragma once

// Multiscale fields of omega over a dyadic tree, Carleson sums of omega^2,
// the Dorronsoro energy ratio, and dyadic BMO / A-infinity tools for
// piecewise-constant weights.

#include "qsdiff/affine_approx.hpp"

namespace qsdiff {

struct OmegaRecord {
  DyadicCube cube;
  double omega = 0.0;
  double big_omega = 0.0;
  std::optional<AffineMap> affine;  // fitted map when the infimum is attained
  bool attained = false;
  bool clipped = false;
};

class OmegaField {
 public:
  OmegaField() = default;
  OmegaField(Grid grid, DyadicCube root, int depth, double dilation, int m)
      : grid_(std::move(grid)), root_(root), depth_(depth), dilation_(dilation), m_(m) {}

  const Grid& grid() const { return grid_; }
  const DyadicCube& root() const { return root_; }
  int depth() const { return depth_; }
  double dilation() const { return dilation_; }
  int m() const { return m_; }
  int dim() const { return grid_.dim; }
  int deepest_level() const { return root_.level + depth_; }

  const std::vector<OmegaRecord>& records() const { return records_; }
  void add(OmegaRecord r) {
    index_.emplace(r.cube, records_.size());
    records_.push_back(std::move(r));
  }
  const OmegaRecord* find(const DyadicCube& q) const {
    auto it = index_.find(q);
    return it == index_.end() ? nullptr : &records_[it->second];
  }
  const OmegaRecord& at(const DyadicCube& q) const {
    if (const auto* r = find(q)) return *r;
    throw ParameterError("cube " + cube_token(q, dim(), grid_.shift) + " is not in the field's tree");
  }
  bool contains(const DyadicCube& q) const { return index_.count(q) > 0; }

 private:
  Grid grid_;
  DyadicCube root_;
  int depth_ = 0;
  double dilation_ = 1.0;
  int m_ = 4;
  std::vector<OmegaRecord> records_;
  std::unordered_map<DyadicCube, std::size_t, DyadicCubeHash> index_;
};

inline OmegaField compute_omega_field(const MapSpec& f, const Grid& grid, const DyadicCube& root, int depth,
                                      double dilation, int m, const SmallOmegaOptions& opt = {}) {
  require(dilation >= 1.0, "dilation M must be >= 1");
  require(depth >= 0, "depth J must be >= 0");
  require(f.dim_in() == grid.dim, "map dimension does not match grid");
  OmegaField field(grid, root, depth, dilation, m);
  for (const auto& q : enumerate_cubes(root, depth, grid.dim)) {
    const Box b = grid.box(q).dilated(dilation);
    const FitResult fit = small_omega(f, b, m, opt);
    field.add(OmegaRecord{q, fit.omega, fit.big_omega, fit.minimizer, fit.attained, fit.clipped});
  }
  return field;
}

// ---------------------------------------------------------------------------

using CubeFilter = std::function<bool(const DyadicCube&)>;

// Accepts cubes that share interior with the union of `set` (same grid).
inline CubeFilter meets_filter(const CubeSet& set) {
  return [&set](const DyadicCube& q) { return set.meets(q); };
}

struct CarlesonSum {
  double total = 0.0;
  double normalized = 0.0;
  std::vector<double> per_level;  // index: level - level(Q0)
};

inline CarlesonSum carleson_sum(const OmegaField& field, const DyadicCube& q0, const CubeFilter& filter = {}) {
  field.at(q0);
  CarlesonSum out;
  const int depth = field.deepest_level() - q0.level;
  out.per_level.assign(static_cast<std::size_t>(depth + 1), 0.0);
  for (const auto& q : enumerate_cubes(q0, depth, field.dim())) {
    if (filter && !filter(q)) continue;
    const auto& r = field.at(q);
    out.per_level[static_cast<std::size_t>(q.level - q0.level)] += sqr(r.omega) * field.grid().volume(q.level);
  }
  for (double v : out.per_level) out.total += v;
  out.normalized = out.total / field.grid().volume(q0.level);
  return out;
}

struct CarlesonNorm {
  double value = 0.0;
  DyadicCube argmax;
};

// Max of normalized subtree sums over roots down to two levels above the
// deepest level.
inline CarlesonNorm carleson_norm(const OmegaField& field) {
  std::unordered_map<DyadicCube, double, DyadicCubeHash> subtree;
  const auto& recs = field.records();
  // Records are stored coarse to fine; fold upward from the finest level.
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    const auto& q = it->cube;
    double s = sqr(it->omega) * field.grid().volume(q.level);
    if (q.level < field.deepest_level())
      for (const auto& c : children(q, field.dim())) s += subtree.at(c);
    subtree[q] = s;
  }
  CarlesonNorm out{0.0, field.root()};
  const int max_root_level = std::max(field.root().level, field.deepest_level() - 2);
  for (const auto& r : recs) {
    if (r.cube.level > max_root_level) continue;
    const double v = subtree.at(r.cube) / field.grid().volume(r.cube.level);
    if (v > out.value) out = CarlesonNorm{v, r.cube};
  }
  return out;
}

struct LevelStats {
  int level = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double sum = 0.0;  // sum of omega^2 |Q|
  int count = 0;
};

inline std::vector<LevelStats> level_profile(const OmegaField& field) {
  std::vector<LevelStats> out;
  for (int l = field.root().level; l <= field.deepest_level(); ++l) {
    LevelStats s;
    s.level = l;
    s.min = std::numeric_limits<double>::infinity();
    out.push_back(s);
  }
  for (const auto& r : field.records()) {
    auto& s = out[static_cast<std::size_t>(r.cube.level - field.root().level)];
    s.min = std::min(s.min, r.omega);
    s.max = std::max(s.max, r.omega);
    s.mean += r.omega;
    s.sum += sqr(r.omega) * field.grid().volume(r.cube.level);
    ++s.count;
  }
  for (auto& s : out) s.mean /= std::max(1, s.count);
  return out;
}

// ---------------------------------------------------------------------------

enum class DorronsoroStatus { ok, degenerate };

struct DorronsoroResult {
  double sum = 0.0;
  double grad_energy = 0.0;
  double ratio = std::numeric_limits<double>::quiet_NaN();
  DorronsoroStatus status = DorronsoroStatus::ok;
};

inline int default_gradient_refinement(int d) { return d == 1 ? 10 : (d == 2 ? 7 : 5); }

// sum = sum over the depth-J tree of Omega(dilation Q)^2 |Q|;
// grad_energy = midpoint quadrature of |Df|^2 over the root cube.
inline DorronsoroResult dorronsoro_ratio(const MapSpec& f, const Grid& grid, const DyadicCube& root, int depth, int m,
                                         double h, double dilation = 2.0, int grad_m = 0) {
  require(h > 0.0, "finite-difference step must be positive");
  require(dilation >= 1.0, "dilation must be >= 1");
  DorronsoroResult out;
  for (const auto& q : enumerate_cubes(root, depth, grid.dim)) {
    const double om = big_omega(f, grid.box(q).dilated(dilation), m);
    out.sum += sqr(om) * grid.volume(q.level);
  }
  if (grad_m <= 0) grad_m = default_gradient_refinement(grid.dim);
  const Box rb = grid.box(root);
  const auto id = MapSpec::identity(grid.dim);
  const auto nodes = sample_nodes(id, rb, grad_m);
  double acc = 0.0;
  for (const auto& x : nodes.x) acc += finite_diff_gradient(f, x, h).jacobian.squaredNorm();
  out.grad_energy = acc / static_cast<double>(nodes.x.size()) * rb.volume();
  if (out.grad_energy == 0.0) {
    if (out.sum > 0.0) throw PropertyViolation("dorronsoro: zero gradient energy with positive Omega sum");
    out.status = DorronsoroStatus::degenerate;
    return out;
  }
  out.ratio = out.sum / out.grad_energy;
  return out;
}

// ---------------------------------------------------------------------------
// Piecewise-constant weights on the leaves of a dyadic tree.

class WeightField {
 public:
  WeightField(int dim, int depth, std::vector<double> leaves) : dim_(dim), depth_(depth), leaves_(std::move(leaves)) {
    require(dim >= 1 && dim <= kMaxDim, "weight dimension must be in 1..3");
    require(depth >= 0 && dim * depth <= 24, "weight depth out of range");
    require(leaves_.size() == (std::size_t{1} << (dim * depth)), "weight leaf count must be 2^(d J)");
    double total = 0.0;
    for (double v : leaves_) {
      require(v >= 0.0 && std::isfinite(v), "weights must be finite and nonnegative");
      total += v;
    }
    require(total > 0.0, "weight must have positive total mass");
  }

  // Density of a monotone 1-D map's increments on the leaves of [a, a + side].
  static WeightField from_increments(const MapSpec& f, const Box& root, int depth) {
    require(f.dim_in() == 1 && f.dim_out() == 1, "increment weights need a 1-D map");
    const std::size_t n = std::size_t{1} << depth;
    std::vector<double> w(n);
    const double lo = root.lower()(0);
    const double h = root.side / static_cast<double>(n);
    double prev = f.eval(Vec::Constant(1, lo))(0);
    for (std::size_t i = 0; i < n; ++i) {
      const double next = f.eval(Vec::Constant(1, lo + h * static_cast<double>(i + 1)))(0);
      w[i] = (next - prev) / h;
      prev = next;
    }
    return WeightField(1, depth, std::move(w));
  }

  int dim() const { return dim_; }
  int depth() const { return depth_; }
  std::size_t leaf_count() const { return leaves_.size(); }
  const std::vector<double>& leaves() const { return leaves_; }

  // Index at relative level l of the ancestor of leaf i.
  std::size_t ancestor_index(std::size_t leaf, int level) const {
    const int shift = depth_ - level;
    const std::size_t n = std::size_t{1} << depth_;
    const std::size_t nl = std::size_t{1} << level;
    std::size_t idx = 0;
    std::size_t rest = leaf;
    std::array<std::size_t, kMaxDim> c{};
    for (int i = dim_ - 1; i >= 0; --i) {
      c[static_cast<std::size_t>(i)] = rest % n;
      rest /= n;
    }
    for (int i = 0; i < dim_; ++i) idx = idx * nl + (c[static_cast<std::size_t>(i)] >> shift);
    return idx;
  }
  std::size_t cubes_at(int level) const { return std::size_t{1} << (dim_ * level); }

  // Relative-level coordinates of cube `idx` as a DyadicCube under root (level 0).
  DyadicCube cube(int level, std::size_t idx) const {
    DyadicCube q{level, {}};
    const std::size_t nl = std::size_t{1} << level;
    for (int i = dim_ - 1; i >= 0; --i) {
      q.coords[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(idx % nl);
      idx /= nl;
    }
    return q;
  }

  std::vector<double> log_weights() const {
    std::vector<double> g(leaves_.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(leaves_[i] > 0.0)) throw ParameterError("weight must be strictly positive");
      g[i] = std::log(leaves_[i]);
    }
    return g;
  }

  // Per-level cube means of a leaf field.
  std::vector<std::vector<double>> level_means(const std::vector<double>& v) const {
    std::vector<std::vector<double>> means(static_cast<std::size_t>(depth_ + 1));
    for (int l = 0; l <= depth_; ++l) {
      auto& m = means[static_cast<std::size_t>(l)];
      m.assign(cubes_at(l), 0.0);
      for (std::size_t i = 0; i < v.size(); ++i) m[ancestor_index(i, l)] += v[i];
      const double per = static_cast<double>(v.size() / cubes_at(l));
      for (auto& x : m) x /= per;
    }
    return means;
  }

 private:
  int dim_;
  int depth_;
  std::vector<double> leaves_;
};

// Leafwise sup over ancestor cubes Q of the mean of |log w - g_ref| on Q.
inline std::vector<double> dyadic_maximal(const WeightField& w, double g_ref) {
  const auto g = w.log_weights();
  std::vector<double> dev(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) dev[i] = std::abs(g[i] - g_ref);
  const auto means = w.level_means(dev);
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int l = 0; l <= w.depth(); ++l)
      out[i] = std::max(out[i], means[static_cast<std::size_t>(l)][w.ancestor_index(i, l)]);
  return out;
}

inline double bmo_dyadic_norm(const WeightField& w) {
  const auto g = w.log_weights();
  const auto gq = w.level_means(g);
  double best = 0.0;
  for (int l = 0; l <= w.depth(); ++l) {
    std::vector<double> acc(w.cubes_at(l), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto a = w.ancestor_index(i, l);
      acc[a] += std::abs(g[i] - gq[static_cast<std::size_t>(l)][a]);
    }
    const double per = static_cast<double>(g.size() / w.cubes_at(l));
    for (double v : acc) best = std::max(best, v / per);
  }
  return best;
}

struct GoodSet {
  std::vector<char> in_e;  // leaf mask
  double threshold = 0.0;
  double bmo = 0.0;
  double measure_fraction = 0.0;
  double max_log_ratio = 0.0;
  double m_ratio = 1.0;  // exp(max_log_ratio)
  bool guarantee_holds = false;
};

inline GoodSet a_infty_good_set(const WeightField& w, double tau) {
  require(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
  const auto g = w.log_weights();
  GoodSet out;
  double g0 = 0.0;
  for (double v : g) g0 += v;
  g0 /= static_cast<double>(g.size());
  out.bmo = bmo_dyadic_norm(w);
  out.threshold = std::ldexp(out.bmo, w.dim()) / tau;
  const auto mx = dyadic_maximal(w, g0);
  out.in_e.assign(g.size(), 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (mx[i] <= out.threshold) {
      out.in_e[i] = 1;
      ++count;
    }
  }
  out.measure_fraction = static_cast<double>(count) / static_cast<double>(g.size());
  const auto wq = w.level_means(w.leaves());
  const double w0 = wq[0][0];
  for (int l = 0; l <= w.depth(); ++l) {
    std::vector<char> meets(w.cubes_at(l), 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (out.in_e[i]) meets[w.ancestor_index(i, l)] = 1;
    for (std::size_t a = 0; a < meets.size(); ++a)
      if (meets[a]) out.max_log_ratio = std::max(out.max_log_ratio, std::abs(std::log(wq[static_cast<std::size_t>(l)][a] / w0)));
  }
  out.m_ratio = std::exp(out.max_log_ratio);
  out.guarantee_holds = out.measure_fraction >= 1.0 - tau;
  return out;
}

struct WeakTypeAudit {
  double worst_ratio = 0.0;  // max over tested lambda of |{M > lambda}| / (2^d mean|h| / lambda)
  int levels_tested = 0;
  bool holds = true;
};

// |{M(g - g_Q0) > lambda}| <= 2^d * mean|g - g_Q0| / lambda, checked at every
// distinct value of the maximal function and just below it.
inline WeakTypeAudit weak_type_audit(const WeightField& w) {
  const auto g = w.log_weights();
  double g0 = 0.0;
  for (double v : g) g0 += v;
  g0 /= static_cast<double>(g.size());
  double l1 = 0.0;
  for (double v : g) l1 += std::abs(v - g0);
  l1 /= static_cast<double>(g.size());
  auto mx = dyadic_maximal(w, g0);
  std::vector<double> sorted = mx;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  WeakTypeAudit out;
  const double n = static_cast<double>(mx.size());
  for (double v : sorted) {
    if (!(v > 0.0)) continue;
    for (double lambda : {v, v * (1.0 - 1e-12)}) {
      const double above =
          static_cast<double>(std::count_if(mx.begin(), mx.end(), [&](double x) { return x > lambda; })) / n;
      const double bound = std::ldexp(l1, w.dim()) / lambda;
      const double r = bound > 0.0 ? above / bound : (above > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      out.worst_ratio = std::max(out.worst_ratio, r);
      ++out.levels_tested;
    }
  }
  out.holds = out.worst_ratio <= 1.0 + 1e-12;
  return out;
}

}  // namespace qsdiff
