#pragma once

// Test maps f: R^d -> R^D and empirical diagnostics on them: image
// diameters, Hoelder brackets, quasisymmetry envelopes, finite differences.

#include "qsdiff/affine_map.hpp"
#include "qsdiff/dyadic.hpp"
#include "qsdiff/rng.hpp"

#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

namespace qsdiff {

// Cumulative distribution of the triadic Kahane measure with edge masses
// (rho, 1 - 2 rho, rho), periodized by F(x + n) = n + F(x).
inline double kahane_cdf(double x, double rho) {
  if (!(rho > 0.0 && rho < 1.0 / 3.0)) throw ParameterError("kahane: rho must lie in (0, 1/3)");
  const double n = std::floor(x);
  double y = x - n;
  double acc = 0.0;
  double scale = 1.0;
  for (int depth = 0; depth < 64 && y > 0.0; ++depth) {
    double t = 3.0 * y;
    // Triadic points land on integers up to rounding; snap them.
    const double r = std::round(t);
    if (std::abs(t - r) < 1e-13) t = r;
    if (t < 1.0) {
      scale *= rho;
      y = t;
    } else if (t < 2.0) {
      acc += scale * rho;
      scale *= 1.0 - 2.0 * rho;
      y = t - 1.0;
    } else if (t < 3.0) {
      acc += scale * (1.0 - rho);
      scale *= rho;
      y = t - 2.0;
    } else {
      acc += scale;
      y = 0.0;
    }
  }
  // Remaining mass of the depth-64 cell, linearly apportioned.
  acc += scale * y;
  return n + acc;
}

// Grid samples at resolution 2^-J_s on a window, multilinearly interpolated.
struct SampledGrid {
  int d = 1;
  int D = 1;
  int js = 0;
  Box window{Vec::Constant(1, 0.5), 1.0};
  std::vector<double> values;  // lattice-major (axis 0 most significant), D per point

  std::int64_t per_axis() const { return (std::int64_t{1} << js) + 1; }
  std::int64_t point_count() const {
    std::int64_t n = 1;
    for (int i = 0; i < d; ++i) n *= per_axis();
    return n;
  }
  std::int64_t index(const std::array<std::int64_t, kMaxDim>& ij) const {
    std::int64_t idx = 0;
    for (int i = 0; i < d; ++i) idx = idx * per_axis() + ij[i];
    return idx;
  }

  Vec interpolate(const Vec& x) const {
    const double h = window.side / static_cast<double>(per_axis() - 1);
    const Vec lo = window.lower();
    std::array<std::int64_t, kMaxDim> base{};
    std::array<double, kMaxDim> frac{};
    for (int i = 0; i < d; ++i) {
      double u = (x(i) - lo(i)) / h;
      u = std::clamp(u, 0.0, static_cast<double>(per_axis() - 1));
      auto b = static_cast<std::int64_t>(std::floor(u));
      if (b >= per_axis() - 1) b = per_axis() - 2;
      if (b < 0) b = 0;
      base[i] = b;
      frac[i] = u - static_cast<double>(b);
    }
    Vec out = Vec::Zero(D);
    for (int mask = 0; mask < (1 << d); ++mask) {
      double w = 1.0;
      auto ij = base;
      for (int i = 0; i < d; ++i) {
        const int bit = (mask >> i) & 1;
        ij[i] += bit;
        w *= bit ? frac[i] : 1.0 - frac[i];
      }
      if (w == 0.0) continue;
      const std::int64_t p = index(ij) * D;
      for (int k = 0; k < D; ++k) out(k) += w * values[static_cast<std::size_t>(p + k)];
    }
    return out;
  }

  // CSV: first data line "d,D,J_s"; then one row per lattice point
  // "i_1,...,i_d,y_1,...,y_D". Lines starting with '#' are ignored.
  static SampledGrid read_csv(std::istream& in, const Box& window) {
    SampledGrid g;
    std::string line;
    auto fields = [](const std::string& s) {
      std::vector<std::string> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(item);
      return out;
    };
    bool have_header = false;
    std::vector<char> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto f = fields(line);
      try {
        if (!have_header) {
          if (f.size() != 3) throw ParameterError("expected header d,D,J_s");
          g.d = std::stoi(f[0]);
          g.D = std::stoi(f[1]);
          g.js = std::stoi(f[2]);
          require(g.d >= 1 && g.d <= kMaxDim && g.D >= 1 && g.js >= 1 && g.js <= 16, "bad header values");
          require(window.dim() == g.d, "window dimension does not match sample dimension");
          g.window = window;
          g.values.assign(static_cast<std::size_t>(g.point_count() * g.D), 0.0);
          seen.assign(static_cast<std::size_t>(g.point_count()), 0);
          have_header = true;
          continue;
        }
        if (static_cast<int>(f.size()) != g.d + g.D) throw ParameterError("wrong field count");
        std::array<std::int64_t, kMaxDim> ij{};
        for (int i = 0; i < g.d; ++i) {
          ij[i] = std::stoll(f[static_cast<std::size_t>(i)]);
          if (ij[i] < 0 || ij[i] >= g.per_axis()) throw ParameterError("lattice index out of range");
        }
        const auto p = g.index(ij);
        if (seen[static_cast<std::size_t>(p)]) throw ParameterError("duplicate lattice point");
        seen[static_cast<std::size_t>(p)] = 1;
        for (int k = 0; k < g.D; ++k)
          g.values[static_cast<std::size_t>(p * g.D + k)] = std::stod(f[static_cast<std::size_t>(g.d + k)]);
      } catch (const std::logic_error& e) {
        throw ParameterError("sampled map CSV line " + std::to_string(lineno) + ": " + e.what());
      } catch (const ParameterError& e) {
        throw ParameterError("sampled map CSV line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!have_header) throw ParameterError("sampled map CSV: missing header");
    for (char s : seen)
      if (!s) throw ParameterError("sampled map CSV: missing lattice points");
    return g;
  }
};

enum class MapKind { identity, affine, kahane, snowflake, bump, sampled, custom };

inline const char* to_string(MapKind k) {
  switch (k) {
    case MapKind::identity: return "identity";
    case MapKind::affine: return "affine";
    case MapKind::kahane: return "kahane";
    case MapKind::snowflake: return "snowflake";
    case MapKind::bump: return "bump";
    case MapKind::sampled: return "sampled";
    case MapKind::custom: return "custom";
  }
  return "?";
}

// Immutable map description. Wrappers (image scaling, domain
// precomposition, domain window) compose as x -> s * base(t x + b).
class MapSpec {
 public:
  using Fn = std::function<Vec(const Vec&)>;

  static MapSpec identity(int d) {
    require(d >= 1 && d <= kMaxDim, "identity: d must be in 1..3");
    return MapSpec(MapKind::identity, d, d, [](const Vec& x) { return x; });
  }

  static MapSpec affine(const AffineMap& a) {
    return MapSpec(MapKind::affine, a.dim_in(), a.dim_out(), [a](const Vec& x) { return a(x); });
  }

  static MapSpec kahane(double rho) {
    if (!(rho > 0.0 && rho < 1.0 / 3.0)) throw ParameterError("kahane: rho must lie in (0, 1/3)");
    MapSpec m(MapKind::kahane, 1, 1, [rho](const Vec& x) { return Vec::Constant(1, kahane_cdf(x(0), rho)); });
    m.param_ = rho;
    return m;
  }

  // f(x)_i = x_i + amplitude/(2 pi) * sin(2 pi freq x_{i+1 mod d} + i/2).
  // The perturbation field has C^1 norm 1, so amplitude * freq < 1/2 keeps
  // |Df - I| <= 1/2 and f bi-Lipschitz.
  static MapSpec snowflake(int d, double amplitude, int frequency) {
    require(d >= 1 && d <= kMaxDim, "snowflake: d must be in 1..3");
    require(frequency >= 1, "snowflake: frequency must be >= 1");
    require(amplitude >= 0.0 && amplitude * frequency < 0.5, "snowflake: amplitude must be < 1/(2 frequency)");
    MapSpec m(MapKind::snowflake, d, d, [d, amplitude, frequency](const Vec& x) {
      Vec y = x;
      for (int i = 0; i < d; ++i) {
        const double arg = 2.0 * M_PI * frequency * x((i + 1) % d) + 0.5 * i;
        y(i) += amplitude / (2.0 * M_PI) * std::sin(arg);
      }
      return y;
    });
    m.param_ = amplitude;
    return m;
  }

  // Windowed sine bump, compactly supported in [0,1]^d:
  // f(x) = prod_i psi(x_i) * sin(2 pi freq x_0 + phase), psi(t) = 16 t^2 (1-t)^2.
  static MapSpec bump(int d, int frequency, double phase = 0.0) {
    require(d >= 1 && d <= kMaxDim, "bump: d must be in 1..3");
    MapSpec m(MapKind::bump, d, 1, [d, frequency, phase](const Vec& x) -> Vec {
      double w = 1.0;
      for (int i = 0; i < d; ++i) {
        const double t = x(i);
        if (t <= 0.0 || t >= 1.0) return Vec::Zero(1);
        w *= 16.0 * t * t * (1.0 - t) * (1.0 - t);
      }
      return Vec::Constant(1, w * std::sin(2.0 * M_PI * frequency * x(0) + phase));
    });
    m.param_ = frequency;
    return m;
  }

  static MapSpec sampled(SampledGrid g) {
    auto grid = std::make_shared<const SampledGrid>(std::move(g));
    MapSpec m(MapKind::sampled, grid->d, grid->D, [grid](const Vec& x) { return grid->interpolate(x); });
    m.window_ = grid->window;
    return m;
  }

  static MapSpec custom(int d, int D, Fn fn, std::string name = "custom") {
    MapSpec m(MapKind::custom, d, D, std::move(fn));
    m.name_ = std::move(name);
    return m;
  }

  // s * f
  MapSpec scaled(double s) const {
    MapSpec m = *this;
    m.image_scale_ *= s;
    return m;
  }
  // x -> f(t x + b)
  MapSpec precomposed(double t, const Vec& b) const {
    require(t != 0.0 && b.size() == d_, "precomposed: need t != 0 and b in R^d");
    MapSpec m = *this;
    m.pre_b_ = m.pre_t_ * b + m.pre_b_;
    m.pre_t_ *= t;
    if (window_) {
      m.window_ = Box{(window_->center - b) / t, window_->side / std::abs(t)};
    }
    return m;
  }
  MapSpec windowed(const Box& w) const {
    require(w.dim() == d_, "windowed: dimension mismatch");
    MapSpec m = *this;
    m.window_ = w;
    return m;
  }

  MapKind kind() const { return kind_; }
  int dim_in() const { return d_; }
  int dim_out() const { return D_; }
  double param() const { return param_; }
  double image_scale() const { return image_scale_; }
  const std::optional<Box>& window() const { return window_; }
  std::string name() const { return kind_ == MapKind::custom ? name_ : to_string(kind_); }

  bool in_domain(const Vec& x) const { return !window_ || window_->contains(x, 1e-12 * window_->side); }

  Vec eval(const Vec& x) const {
    if (x.size() != d_) throw DomainError("eval: point dimension mismatch");
    if (!in_domain(x)) throw DomainError("eval: point outside the map's domain window");
    return image_scale_ * fn_(pre_t_ * x + pre_b_);
  }
  Vec operator()(const Vec& x) const { return eval(x); }

 private:
  MapSpec(MapKind kind, int d, int D, Fn fn)
      : kind_(kind), d_(d), D_(D), fn_(std::move(fn)), pre_b_(Vec::Zero(d)) {}

  MapKind kind_;
  int d_;
  int D_;
  Fn fn_;
  std::string name_;
  double param_ = 0.0;
  double image_scale_ = 1.0;
  double pre_t_ = 1.0;
  Vec pre_b_;
  std::optional<Box> window_;
};

// ---------------------------------------------------------------------------

// Vertex lattice of a box at refinement m: (2^m + 1)^d points including the
// corners. Nested in m, and aligned across dyadic sub-boxes.
inline std::vector<Vec> vertex_lattice(const Box& q, int m) {
  const int d = q.dim();
  const std::int64_t n = (std::int64_t{1} << m) + 1;
  std::int64_t total = 1;
  for (int i = 0; i < d; ++i) total *= n;
  std::vector<Vec> pts;
  pts.reserve(static_cast<std::size_t>(total));
  const Vec lo = q.lower();
  const double h = std::ldexp(q.side, -m);
  for (std::int64_t idx = 0; idx < total; ++idx) {
    Vec p(d);
    std::int64_t rest = idx;
    for (int i = d - 1; i >= 0; --i) {
      p(i) = lo(i) + static_cast<double>(rest % n) * h;
      rest /= n;
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

inline double max_pairwise_distance(const std::vector<Vec>& ys) {
  if (ys.empty()) return 0.0;
  if (ys.front().size() == 1) {
    double lo = ys.front()(0), hi = lo;
    for (const auto& y : ys) {
      lo = std::min(lo, y(0));
      hi = std::max(hi, y(0));
    }
    return hi - lo;
  }
  double best = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t j = i + 1; j < ys.size(); ++j) best = std::max(best, (ys[i] - ys[j]).squaredNorm());
  return std::sqrt(best);
}

// Sampled lower bound for diam f(Q) on the level-m vertex lattice of Q.
inline double image_diam(const MapSpec& f, const Box& q, int m) {
  require(m >= 1, "image_diam: m must be >= 1");
  std::vector<Vec> ys;
  for (const auto& x : vertex_lattice(q, m)) ys.push_back(f.eval(x));
  return max_pairwise_distance(ys);
}

inline int default_lattice_refinement(int d) { return d == 1 ? 12 : (d == 2 ? 6 : 4); }

// ---------------------------------------------------------------------------
// Hoelder bracket:
//   (1/(2C)) u^(1/alpha) <= v <= 2^alpha C u^alpha,
// u = |x-y| / diam K, v = |f(x)-f(y)| / diam f(K).

struct HolderFit {
  double C = 0.0;
  double alpha = 1.0;
  double residual = 0.0;
  int pairs = 0;
};

inline HolderFit holder_fit(const MapSpec& f, const Box& k, int n_pairs, std::uint64_t seed = 1) {
  require(n_pairs >= 100, "holder_fit: need at least 100 pairs");
  const int d = f.dim_in();
  QuasiRandom qr(2 * d, seed);
  const Vec lo = k.lower();
  std::vector<std::pair<double, double>> uv;
  std::vector<Vec> images;
  double diam_img = image_diam(f, k, default_lattice_refinement(d));
  std::vector<std::pair<Vec, Vec>> raw;
  for (int i = 0; i < n_pairs; ++i) {
    const Vec p = qr.point(static_cast<std::uint64_t>(i));
    const Vec x = lo + k.side * p.head(d);
    const Vec y = lo + k.side * p.tail(d);
    const Vec fx = f.eval(x), fy = f.eval(y);
    diam_img = std::max(diam_img, (fx - fy).norm());
    raw.emplace_back(x - y, fx - fy);
  }
  if (diam_img <= 0.0) throw Error("degenerate image: map is constant on K");
  for (const auto& [dx, df] : raw) {
    const double u = dx.norm() / k.diam();
    if (u == 0.0) continue;
    uv.emplace_back(u, df.norm() / diam_img);
  }
  HolderFit best;
  best.C = std::numeric_limits<double>::infinity();
  constexpr int kGrid = 40;
  for (int g = kGrid - 1; g >= 0; --g) {
    const double alpha = std::exp(std::log(0.05) * (1.0 - g / double(kGrid - 1)));
    double c = 0.0;
    for (const auto& [u, v] : uv) {
      if (v == 0.0) {
        c = std::numeric_limits<double>::infinity();
        break;
      }
      c = std::max(c, v / (std::pow(2.0, alpha) * std::pow(u, alpha)));
      c = std::max(c, std::pow(u, 1.0 / alpha) / (2.0 * v));
    }
    if (c < best.C * (1.0 - 1e-12)) best = HolderFit{c, alpha, 0.0, static_cast<int>(uv.size())};
  }
  if (!std::isfinite(best.C)) throw Error("degenerate image: coincident images of distinct points");
  double worst = 0.0;
  for (const auto& [u, v] : uv) {
    const double up = v / (std::pow(2.0, best.alpha) * best.C * std::pow(u, best.alpha)) - 1.0;
    const double dn = std::pow(u, 1.0 / best.alpha) / (2.0 * best.C * v) - 1.0;
    worst = std::max({worst, up, dn});
  }
  best.residual = worst;
  return best;
}

// ---------------------------------------------------------------------------
// Empirical quasisymmetry envelope. Buckets are half-octaves in t centered
// at 2^(k/2), k = -12..12.

struct EtaBucket {
  double t_lo = 0.0;
  double t_hi = 0.0;
  int count = 0;
  double t_at_max = 0.0;
  double h_max = 0.0;
  double envelope = 0.0;  // running max over buckets up to this one
};

struct EtaTable {
  std::vector<EtaBucket> buckets;

  // Bucket containing t (throws if out of range).
  const EtaBucket& at(double t) const {
    for (const auto& b : buckets)
      if (t >= b.t_lo && t < b.t_hi) return b;
    throw ParameterError("eta table: t outside bucket range");
  }
  // Envelope value usable as an eta(t) estimate: first bucket reaching t.
  double eta(double t) const {
    double v = 0.0;
    for (const auto& b : buckets) {
      v = b.envelope;
      if (t < b.t_hi) break;
    }
    return v;
  }
};

inline EtaTable empirical_eta(const MapSpec& f, const Box& q, int n_triples, std::uint64_t seed = 1) {
  require(n_triples >= 1000, "empirical_eta: need at least 1000 triples");
  const int d = f.dim_in();
  constexpr int kHalf = 12;
  EtaTable table;
  for (int k = -kHalf; k <= kHalf; ++k) {
    EtaBucket b;
    b.t_lo = std::exp2((k - 0.5) / 2.0);
    b.t_hi = std::exp2((k + 0.5) / 2.0);
    table.buckets.push_back(b);
  }
  auto record = [&](const Vec& x, const Vec& y, const Vec& z) {
    const double dxy = (x - y).norm(), dxz = (x - z).norm();
    if (dxy == 0.0 || dxz == 0.0) return;  // repeated point: skipped, a fresh draw follows
    const Vec fx = f.eval(x);
    const double fxy = (fx - f.eval(y)).norm();
    const double fxz = (fx - f.eval(z)).norm();
    if (fxy == 0.0 || fxz == 0.0) throw Error("not an embedding on samples");
    const double t = dxy / dxz;
    const double h = fxy / fxz;
    const double kf = 2.0 * std::log2(t);
    const long k = std::lround(kf);
    if (k < -kHalf || k > kHalf) return;
    auto& b = table.buckets[static_cast<std::size_t>(k + kHalf)];
    ++b.count;
    if (h > b.h_max) {
      b.h_max = h;
      b.t_at_max = t;
    }
  };
  QuasiRandom qr(3 * d, seed);
  const Vec lo = q.lower();
  for (int i = 0; i < n_triples; ++i) {
    const Vec p = qr.point(static_cast<std::uint64_t>(i));
    record(lo + q.side * p.segment(0, d), lo + q.side * p.segment(d, d), lo + q.side * p.segment(2 * d, d));
  }
  // Structured triadic triples along axis 0 through the center: (p_i, p_i+1, p_i-1).
  for (int level = 1; level <= 5; ++level) {
    const int n = static_cast<int>(std::lround(std::pow(3.0, level)));
    for (int i = 1; i < n; ++i) {
      Vec x = q.center, y = q.center, z = q.center;
      x(0) = lo(0) + q.side * i / n;
      y(0) = lo(0) + q.side * (i + 1) / n;
      z(0) = lo(0) + q.side * (i - 1) / n;
      record(x, y, z);
      record(x, z, y);
    }
  }
  double running = 0.0;
  for (auto& b : table.buckets) {
    running = std::max(running, b.h_max);
    b.envelope = running;
  }
  return table;
}

// ---------------------------------------------------------------------------

struct Gradient {
  Mat jacobian;  // D x d
  bool one_sided = false;
};

inline Gradient finite_diff_gradient(const MapSpec& f, const Vec& x, double h) {
  require(h > 0.0, "finite_diff_gradient: h must be positive");
  const int d = f.dim_in();
  Gradient g{Mat::Zero(f.dim_out(), d), false};
  for (int i = 0; i < d; ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const bool okp = f.in_domain(xp), okm = f.in_domain(xm);
    if (okp && okm) {
      g.jacobian.col(i) = (f.eval(xp) - f.eval(xm)) / (2.0 * h);
    } else if (okp) {
      g.jacobian.col(i) = (f.eval(xp) - f.eval(x)) / h;
      g.one_sided = true;
    } else if (okm) {
      g.jacobian.col(i) = (f.eval(x) - f.eval(xm)) / h;
      g.one_sided = true;
    } else {
      throw DomainError("finite_diff_gradient: no admissible difference stencil");
    }
  }
  return g;
}

}  // namespace qsdiff
