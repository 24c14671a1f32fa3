#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace qsdiff;

namespace {

// Region holding only the root cube, with nothing on the depth floor.
StoppingRegion root_only_region(int d) {
  StoppingRegion s(d);
  s.top = DyadicCube{};
  s.members.insert(s.top);
  s.minimal.insert(s.top);
  s.affine.emplace(s.top, AffineMap::identity(d));
  s.admission_order.push_back(s.top);
  return s;
}

struct RegionFixture {
  OmegaField field;
  CoronaDecomposition dec;
  RegionFixture(const MapSpec& f, int d, int depth, double eps, double tau)
      : field(compute_omega_field(f, Grid::unit(d), DyadicCube{}, depth, 3.0, d == 1 ? 4 : 3)),
        dec(decompose(field, eps, tau)) {}
  const StoppingRegion& top() const { return dec.regions.front(); }
};

double piece_side_at(const WhitneyDecomposition& w, const Vec& x) {
  double side = w.window_box().side;
  for (auto j : w.pieces_near(x, 1.0)) side = std::min(side, w.grid().side(w.pieces()[j].r.level));
  return side;
}

}  // namespace

TEST(Whitney, RootOnlyRegion) {
  const Grid g = Grid::unit(1);
  const auto s = root_only_region(1);
  const auto w = WhitneyDecomposition::for_region(s, g, 12);
  EXPECT_EQ(w.truncated_count(), 0u);
  double vol = 0.0;
  for (const auto& p : w.pieces()) {
    vol += g.volume(p.r.level);
    const Box b = g.box(p.r);
    EXPECT_LE(b.diam(), p.dist_value / 20 + 1e-15);
    if (contains(DyadicCube{}, p.r)) {
      EXPECT_EQ(p.r.level, 5);  // 1/32 <= 1/20 < 1/16
      ASSERT_TRUE(p.q.has_value());
      EXPECT_EQ(*p.q, DyadicCube{});
    }
  }
  EXPECT_NEAR(vol, w.window_box().volume(), 1e-12);
  const auto a = audit_whitney(w, 10000);
  EXPECT_TRUE(a.bracket_holds);
  EXPECT_TRUE(a.neighbor_holds);
  EXPECT_TRUE(a.maximality_holds);
  EXPECT_TRUE(a.core_identity_holds);
}

TEST(Whitney, FullAffineRegionShrinksTowardZ) {
  const RegionFixture fx(MapSpec::identity(1), 1, 4, 0.05, 0.3);
  const auto& s = fx.top();
  EXPECT_EQ(s.z_approx.size(), 16u);
  const auto w = WhitneyDecomposition::for_region(s, Grid::unit(1));
  int deepest = 0;
  for (const auto& p : w.pieces()) {
    deepest = std::max(deepest, p.r.level);
    EXPECT_FALSE(contains(DyadicCube{}, p.r)) << "pieces stay off z";
  }
  EXPECT_GE(deepest, 4 + 4);
  const auto a = audit_whitney(w, 10000);
  EXPECT_TRUE(a.bracket_holds) << a.min_lower_ratio << " " << a.max_upper_ratio;
  EXPECT_TRUE(a.neighbor_holds);
  EXPECT_TRUE(a.maximality_holds);
}

TEST(Whitney, CompactLeftHalfAgainstBruteForce) {
  for (int d = 1; d <= 2; ++d) {
    const Grid g = Grid::unit(d);
    CubeSet k(d);
    std::vector<DyadicCube> kcubes;
    for (const auto& c : children(DyadicCube{}, d))
      if (c.coords[0] == 0) {
        k.insert(c);
        kcubes.push_back(c);
      }
    const auto w = WhitneyDecomposition::for_compact(k, g, {DyadicCube{}}, d == 1 ? 14 : 9);
    QuasiRandom qr(d, 5);
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
      const Vec x = qr.point(static_cast<std::uint64_t>(i));
      if (x(0) <= 0.5) continue;
      const double dx = oracle::set_distance(g, kcubes, x);
      EXPECT_NEAR(w.distance()(x), dx, 1e-12);
      for (auto j : w.pieces_near(x, 1.0)) {
        const auto& p = w.pieces()[j];
        if (p.truncated) continue;
        const double diam = g.diam(p.r.level);
        EXPECT_GE(dx, 20 * diam - 1e-12);
        EXPECT_LE(dx, 60 * diam + 1e-12);
        ++checked;
      }
    }
    EXPECT_GT(checked, 4000);
    const auto a = audit_whitney(w, 10000);
    EXPECT_TRUE(a.neighbor_holds) << a.max_neighbor_ratio;
    EXPECT_LE(a.max_overlap, 1 << (2 * d));
  }
}

TEST(PartitionOfUnity, SumsAndGradients) {
  const RegionFixture fx(MapSpec::snowflake(2, 0.2, 2), 2, 2, 0.05, 0.3);
  const auto w = WhitneyDecomposition::for_region(fx.top(), Grid::unit(2), 7);
  const auto a = audit_whitney(w, 3000);
  QuasiRandom qr(2, 8);
  const Box win = w.window_box();
  int tested = 0;
  for (int i = 0; i < 3000; ++i) {
    const Vec x = win.lower() + win.side * qr.point(static_cast<std::uint64_t>(i));
    if (w.in_skip(x)) continue;
    const auto terms = partition_of_unity(w, x, true);
    double sum = 0.0;
    Vec grad = Vec::Zero(2);
    for (const auto& t : terms) {
      sum += t.phi;
      grad += t.grad;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_LE(grad.norm(), 1e-6 / piece_side_at(w, x));
    EXPECT_LE(static_cast<int>(terms.size()), std::max(a.max_overlap, 1) * 4);
    ++tested;
  }
  EXPECT_GT(tested, 1000);
}

TEST(PartitionOfUnity, FaceAndCore) {
  const auto s = root_only_region(1);
  const auto w = WhitneyDecomposition::for_region(s, Grid::unit(1), 12);
  // two level-5 pieces meet at 1/2
  const auto face = partition_of_unity(w, make_vec({0.5}));
  ASSERT_EQ(face.size(), 2u);
  EXPECT_DOUBLE_EQ(face[0].phi, 0.5);
  EXPECT_DOUBLE_EQ(face[1].phi, 0.5);
  const auto core = partition_of_unity(w, make_vec({0.5 + 1.0 / 64}));
  ASSERT_EQ(core.size(), 1u);
  EXPECT_EQ(core[0].phi, 1.0);
}

TEST(Extension, BranchesAndIdentities) {
  const RegionFixture fx(fixture::drift_branch(), 1, 6, 0.3, 0.3);
  const auto& s = fx.top();
  const auto w = WhitneyDecomposition::for_region(s, Grid::unit(1));
  const auto f = fixture::drift_branch();
  const Extension ext(s, w, f);
  const AffineMap& top = s.top_map();

  // far field, outside and on the window edge
  for (double x : {-2.0, 3.0, -7.5, 12.0}) {
    const auto v = ext.eval(make_vec({x}));
    EXPECT_NEAR(v.y(0), top(make_vec({x}))(0), 1e-10);
  }
  EXPECT_EQ(ext.eval(make_vec({-9.0})).branch, Extension::Branch::far);

  // z cubes return f itself
  for (const auto& q : s.z_approx.members()) {
    const Vec c = Grid::unit(1).center(q);
    const auto v = ext.eval(c);
    EXPECT_EQ(v.branch, Extension::Branch::z);
    EXPECT_EQ(v.y(0), f.eval(c)(0));
  }

  // half cores reproduce the assigned map
  const Grid g = Grid::unit(1);
  for (std::size_t i = 0; i < w.pieces().size(); ++i) {
    const Box r = g.box(w.pieces()[i].r);
    for (double off : {-0.25, 0.0, 0.25}) {
      const Vec x = r.center + Vec::Constant(1, off * r.side);
      if (w.in_skip(x)) continue;
      EXPECT_NEAR(ext.eval(x).y(0), ext.map_of(i)(x)(0), 1e-10);
      EXPECT_NEAR(ext.gradient(x)(0, 0), ext.map_of(i).linear()(0, 0), 1e-10);
    }
  }
}

TEST(Extension, AnalyticGradientMatchesDifferences) {
  for (int d = 1; d <= 2; ++d) {
    const RegionFixture fx(d == 1 ? fixture::drift_branch() : MapSpec::snowflake(2, 0.2, 2), d, d == 1 ? 6 : 2,
                           d == 1 ? 0.3 : 0.05, 0.3);
    const auto& s = fx.top();
    const auto w = WhitneyDecomposition::for_region(s, Grid::unit(d), d == 1 ? -1 : 7);
    const Extension ext(s, w, d == 1 ? fixture::drift_branch() : MapSpec::snowflake(2, 0.2, 2));
    const MapSpec fs = ext.as_map();
    const double scale = s.top_map().op_norm();
    QuasiRandom qr(d, 13);
    const Box win = w.window_box();
    int tested = 0;
    for (int i = 0; i < 400; ++i) {
      const Vec x = win.lower() + win.side * qr.point(static_cast<std::uint64_t>(i));
      if (w.in_skip(x)) continue;
      const double h = 1e-3 * piece_side_at(w, x);
      // stay clear of z cubes for the stencil
      bool clear = true;
      for (int k = 0; k < d; ++k)
        for (double sg : {-1.0, 1.0}) {
          Vec y = x;
          y(k) += sg * h;
          clear = clear && !w.in_skip(y);
        }
      if (!clear) continue;
      const Mat fd = finite_diff_gradient(fs, x, h).jacobian;
      EXPECT_LE((fd - ext.gradient(x)).cwiseAbs().maxCoeff(), 1e-5 * scale) << "d=" << d << " i=" << i;
      ++tested;
    }
    EXPECT_GT(tested, 100);
  }
}

TEST(Extension, FarFieldInsideWindow) {
  const RegionFixture fx(MapSpec::snowflake(2, 0.2, 2), 2, 2, 0.05, 0.3);
  const auto& s = fx.top();
  const auto w = WhitneyDecomposition::for_region(s, Grid::unit(2), 6);
  const Extension ext(s, w, MapSpec::snowflake(2, 0.2, 2));
  // window is 7 Q0 = [-3, 4]^2; x is 2.9 > 2 sqrt 2 from Q0
  for (const Vec& x : {make_vec({3.9, 0.5}), make_vec({-2.9, -2.9}), make_vec({0.5, 3.95})}) {
    ASSERT_TRUE(ext.far(x));
    EXPECT_NEAR((ext.eval(x).y - s.top_map()(x)).norm(), 0.0, 1e-10);
  }
}

TEST(Extension, AffineDiagnosticsVanish) {
  Mat a(1, 1);
  a << 2.0;
  const auto f = MapSpec::affine(AffineMap(a, make_vec({1.0})));
  const RegionFixture fx(f, 1, 4, 0.05, 0.3);
  const auto w = WhitneyDecomposition::for_region(fx.top(), Grid::unit(1));
  const Extension ext(fx.top(), w, f);
  const auto dg = extension_diagnostics(ext, 8, 0.05, 0.3);
  EXPECT_LE(dg.grad_deviation_energy, 1e-18);
  EXPECT_LE(dg.delta1 + dg.delta2 + dg.delta3, 1e-18);
  EXPECT_TRUE(dg.far_field_pass);
}

TEST(Extension, DriftBranchEnergyIsLocal) {
  const RegionFixture fx(fixture::drift_branch(), 1, 6, 0.3, 0.3);
  const auto& s = fx.top();
  ASSERT_FALSE(s.m2.empty());
  const auto w = WhitneyDecomposition::for_region(s, Grid::unit(1));
  const Extension ext(s, w, fixture::drift_branch());
  const auto dg = extension_diagnostics(ext, 12, 0.3, 0.3);
  EXPECT_GT(dg.grad_deviation_energy, 0.0);
  EXPECT_TRUE(dg.far_field_pass);
  EXPECT_EQ(dg.delta3_outside_ball_nonzero, 0);
  const auto nodes = sample_nodes(MapSpec::identity(1), dg.energy_box, 12);
  const Box branch = Grid::unit(1).box(fixture::drift_branch_cube());
  double in = 0.0, total = 0.0;
  for (std::size_t i = 0; i < nodes.x.size(); ++i) {
    total += dg.energy_density[i];
    if (branch.contains(nodes.x[i])) in += dg.energy_density[i];
  }
  EXPECT_GT(in / total, 0.8);
}

TEST(LambdaSum, WholeCubeAndEmpty) {
  const Grid g = Grid::unit(2);
  CubeSet all(2);
  all.insert(DyadicCube{});
  const auto r = lambda_sum(all, g, DyadicCube{}, 4, 1.0);
  EXPECT_TRUE(r.pieces.empty());
  EXPECT_EQ(r.total, 0.0);
  for (const auto& [q, lam] : r.lambda) EXPECT_EQ(lam, 0.0);
  EXPECT_THROW(lambda_sum(CubeSet(2), g, DyadicCube{}, 4, 1.0), ParameterError);
  EXPECT_THROW(lambda_sum(all, g, DyadicCube{}, 4, 0.0), ParameterError);
}

TEST(LambdaSum, LeftHalfLadder) {
  const Grid g = Grid::unit(1);
  const int depth = 10;
  CubeSet k(1);
  k.insert(DyadicCube{1, {0}});
  for (double alpha : {0.5, 1.0, 2.0}) {
    const auto r = lambda_sum(k, g, DyadicCube{}, depth, alpha);
    // pieces: [1/2 + 2^-j, 1/2 + 2^-(j-1)) for j = 2..depth, plus the floor cube at 1/2
    std::vector<std::pair<double, double>> ladder;  // (lower, side)
    for (int j = 2; j <= depth; ++j) ladder.emplace_back(0.5 + std::ldexp(1.0, -j), std::ldexp(1.0, -j));
    ladder.emplace_back(0.5, std::ldexp(1.0, -depth));
    ASSERT_EQ(r.pieces.size(), ladder.size());
    double want = 0.0;
    for (const auto& [lo, side] : ladder) {
      // ancestors of the piece: sides side * 2^u up to 1
      for (double ls = side; ls <= 1.0 + 1e-15; ls *= 2) want += std::pow(side / ls, 1 + alpha) * ls;
    }
    EXPECT_NEAR(r.total, want, 1e-12);
    EXPECT_LE(r.total, 0.5 / (1 - std::exp2(-alpha)) + 1e-12);
    EXPECT_TRUE(r.total_holds);
    EXPECT_TRUE(r.per_cube_holds);
    EXPECT_DOUBLE_EQ(r.lambda.at(DyadicCube{1, {0}}), 0.0);
  }
}

TEST(LambdaSum, RandomCompactSets) {
  CounterRng rng(31, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 2;
    const int depth = d == 1 ? 7 : 4;
    const Grid g = Grid::unit(d);
    CubeSet k(d);
    const auto cubes = enumerate_cubes(DyadicCube{}, depth, d);
    const int picks = 1 + static_cast<int>(rng.next() * 4);
    for (int p = 0; p < picks; ++p) {
      const auto& q = cubes[static_cast<std::size_t>(rng.next() * static_cast<double>(cubes.size()))];
      if (q.level > 0) k.insert(q);
    }
    if (k.empty()) k.insert(cubes.back());
    for (double alpha : {0.5, 1.0, 2.0}) {
      const auto r = lambda_sum(k, g, DyadicCube{}, depth, alpha);
      EXPECT_TRUE(r.per_cube_holds) << trial;
      EXPECT_TRUE(r.total_holds) << trial;
    }
  }
}
