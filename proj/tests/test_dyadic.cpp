#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace qsdiff;

namespace {

DyadicCube cube1(int level, std::int64_t c) { return DyadicCube{level, {c}}; }
DyadicCube cube2(int level, std::int64_t a, std::int64_t b) { return DyadicCube{level, {a, b}}; }

}  // namespace

TEST(Enumerate, CountsMatchTreeSize) {
  EXPECT_EQ(enumerate_cubes(DyadicCube{}, 2, 1).size(), 7u);
  EXPECT_EQ(enumerate_cubes(DyadicCube{}, 1, 2).size(), 5u);
  const auto only = enumerate_cubes(DyadicCube{}, 0, 3);
  ASSERT_EQ(only.size(), 1u);
  EXPECT_EQ(only[0], DyadicCube{});
  for (int d = 1; d <= 3; ++d)
    for (int j = 0; j <= 4; ++j) EXPECT_EQ(enumerate_cubes(DyadicCube{}, j, d).size(), tree_size(j, d));
}

TEST(Enumerate, SizeThenLexOrder) {
  const auto cubes = enumerate_cubes(DyadicCube{}, 3, 2);
  for (std::size_t i = 1; i < cubes.size(); ++i) {
    EXPECT_LE(cubes[i - 1].level, cubes[i].level);
    if (cubes[i - 1].level == cubes[i].level) EXPECT_LT(cubes[i - 1].coords, cubes[i].coords);
  }
}

TEST(Enumerate, LevelPartitionsRoot) {
  const Grid g = Grid::unit(2);
  for (int j = 0; j <= 4; ++j) {
    double vol = 0.0;
    std::vector<DyadicCube> level;
    for (const auto& q : enumerate_cubes(DyadicCube{}, j, 2))
      if (q.level == j) {
        vol += g.volume(q.level);
        level.push_back(q);
      }
    EXPECT_DOUBLE_EQ(vol, 1.0);
    // every sample point of the root lies in exactly one half-open cube
    QuasiRandom qr(2, 3);
    for (int s = 0; s < 200; ++s) {
      const Vec x = qr.point(static_cast<std::uint64_t>(s));
      int hits = 0;
      for (const auto& q : level) {
        const auto lo = g.lower(q);
        const double side = g.side(q.level);
        if (x(0) >= lo(0) && x(0) < lo(0) + side && x(1) >= lo(1) && x(1) < lo(1) + side) ++hits;
      }
      EXPECT_EQ(hits, 1);
    }
  }
}

TEST(Tree, ParentOfChild) {
  for (const auto& q : enumerate_cubes(DyadicCube{}, 3, 3)) {
    const auto kids = children(q, 3);
    EXPECT_EQ(kids.size(), 8u);
    for (const auto& c : kids) {
      EXPECT_EQ(parent(c), q);
      EXPECT_TRUE(contains(q, c));
    }
  }
}

TEST(Tree, AncestorExamples) {
  const Grid g = Grid::unit(1);
  const auto q = cube1(2, 1);  // [1/4, 1/2)
  EXPECT_EQ(ancestor(q, 0), q);
  EXPECT_EQ(ancestor(q, 1), cube1(1, 0));
  EXPECT_EQ(ancestor(q, 2), cube1(0, 0));
  EXPECT_DOUBLE_EQ(g.side(ancestor(q, 1).level), 2 * g.side(q.level));
  EXPECT_THROW(ancestor(q, 3), GeometryError);
  EXPECT_THROW(parent(DyadicCube{}), GeometryError);
}

TEST(Geometry, SideAndDiam) {
  const Grid g = Grid::unit(3);
  EXPECT_DOUBLE_EQ(g.side(3), 0.125);
  EXPECT_DOUBLE_EQ(g.diam(0), std::sqrt(3.0));
}

TEST(Geometry, DilatedContains) {
  const Grid g1 = Grid::unit(1), g2 = Grid::unit(2);
  EXPECT_TRUE(dilated_contains(g1, DyadicCube{}, 3.0, make_vec({-0.9})));
  EXPECT_TRUE(dilated_contains(g1, DyadicCube{}, 1.0, make_vec({1.0})));
  EXPECT_FALSE(dilated_contains(g2, DyadicCube{}, 2.0, make_vec({1.6, 0.5})));
  EXPECT_THROW(dilated_contains(g1, DyadicCube{}, 0.5, make_vec({0.0})), ParameterError);
}

TEST(Geometry, RootCornerAndSide) {
  Grid g = Grid::unit(2);
  g.corner = make_vec({-1.0, 2.0});
  g.base_side = 4.0;
  const Box b = g.box(cube2(1, 1, 0));
  EXPECT_DOUBLE_EQ(b.lower()(0), 1.0);
  EXPECT_DOUBLE_EQ(b.lower()(1), 2.0);
  EXPECT_DOUBLE_EQ(b.side, 2.0);
  EXPECT_EQ(g.locate(make_vec({1.5, 3.9}), 1), cube2(1, 1, 0));
}

TEST(Tokens, RoundTrip) {
  const DyadicCube q = cube2(3, 5, 2);
  ShiftedGridId s;
  s.thirds[1] = 1;
  const auto tok = cube_token(q, 2, s);
  EXPECT_EQ(tok, "3:5,2@0,1/3");
  const auto [back, shift] = parse_cube_token(tok, 2);
  EXPECT_EQ(back, q);
  EXPECT_EQ(shift, s);
  EXPECT_THROW(parse_cube_token("3-5,2", 2), ParameterError);
  EXPECT_THROW(parse_cube_token("3:5@0", 2), ParameterError);
}

TEST(OneThirdTrick, Examples) {
  const Grid g = Grid::unit(1);
  auto r1 = shifted_containing_cube(g, Box::from_lower(make_vec({1.0 / 3}), 1.0 / 3));
  EXPECT_EQ(r1.shift.thirds[0], 1);
  EXPECT_EQ(r1.cube, cube1(0, 0));
  const Box q1 = g.shifted(r1.shift).box(r1.cube);
  EXPECT_NEAR(q1.lower()(0), 1.0 / 3, 1e-15);
  EXPECT_NEAR(q1.upper()(0), 4.0 / 3, 1e-15);

  auto r2 = shifted_containing_cube(g, Box::from_lower(make_vec({0.0}), 1.0 / 12));
  EXPECT_EQ(r2.shift.thirds[0], 0);
  EXPECT_EQ(r2.cube, cube1(2, 0));

  EXPECT_THROW(shifted_containing_cube(g, Box::from_lower(make_vec({0.0}), 0.2)), ParameterError);
}

TEST(OneThirdTrick, ExhaustiveSmallCases) {
  for (int d = 1; d <= 2; ++d) {
    const Grid g = Grid::unit(d);
    for (int k = 0; k <= 4; ++k) {
      const double side = std::ldexp(1.0, -k) / 3.0;
      const long per_axis = 3L << k;
      long total = 1;
      for (int i = 0; i < d; ++i) total *= per_axis;
      for (long idx = 0; idx < total; ++idx) {
        Vec lo(d);
        long rest = idx;
        for (int i = d - 1; i >= 0; --i) {
          lo(i) = static_cast<double>(rest % per_axis) * side;
          rest /= per_axis;
        }
        const auto r = shifted_containing_cube(g, Box::from_lower(lo, side));
        const auto c = oracle::cube_of(g.shifted(r.shift), r.cube);
        for (int i = 0; i < d; ++i) {
          EXPECT_LE(c.lo(i), lo(i) + 1e-12);
          EXPECT_GE(c.lo(i) + c.side, lo(i) + side - 1e-12);
          EXPECT_LE(lo(i) - c.lo(i), c.side);
        }
        EXPECT_NEAR(c.side, 3 * side, 1e-15);
      }
    }
  }
}

TEST(CubeSet, AncestorDescendantQueries) {
  CubeSet s(2);
  s.insert(cube2(2, 1, 2));
  EXPECT_TRUE(s.contains(cube2(2, 1, 2)));
  EXPECT_TRUE(s.contains_ancestor_of(cube2(4, 5, 9)));
  EXPECT_FALSE(s.contains_ancestor_of(cube2(1, 0, 1)));
  EXPECT_TRUE(s.contains_descendant_of(cube2(1, 0, 1)));
  EXPECT_TRUE(s.meets(cube2(0, 0, 0)));
  EXPECT_FALSE(s.meets(cube2(2, 0, 0)));
  EXPECT_DOUBLE_EQ(s.relative_volume(), 1.0 / 16);
}

TEST(RegionDistance, Examples) {
  for (int d = 1; d <= 3; ++d) {
    const Grid g = Grid::unit(d);
    CubeSet s(d);
    s.insert(DyadicCube{});
    CubeDistance dist(g, s, CubeDistance::Mode::region);
    EXPECT_NEAR(dist(Vec::Constant(d, 0.5)), std::sqrt(static_cast<double>(d)), 1e-15);
  }
  const Grid g1 = Grid::unit(1);
  CubeSet s(1);
  s.insert(DyadicCube{});
  EXPECT_DOUBLE_EQ(CubeDistance(g1, s, CubeDistance::Mode::region)(make_vec({2.0})), 2.0);
  EXPECT_THROW(CubeDistance(g1, CubeSet(1), CubeDistance::Mode::region), GeometryError);
}

TEST(RegionDistance, FullTreeMatchesBruteForce) {
  const int depth = 4;
  for (int d = 1; d <= 2; ++d) {
    const Grid g = Grid::unit(d);
    CubeSet s(d);
    const auto cubes = enumerate_cubes(DyadicCube{}, depth, d);
    for (const auto& q : cubes) s.insert(q);
    CubeDistance dist(g, s, CubeDistance::Mode::region);
    QuasiRandom qr(d, 9);
    for (int i = 0; i < 300; ++i) {
      const Vec x = qr.point(static_cast<std::uint64_t>(i)) * 2.0 - Vec::Constant(d, 0.5);
      const double want = oracle::region_distance(g, cubes, x);
      EXPECT_NEAR(dist(x), want, 1e-12);
      if (g.box(DyadicCube{}).contains(x)) EXPECT_LE(dist(x), g.diam(depth) + 1e-12);
    }
  }
}

TEST(RegionDistance, OneLipschitzAndSetMode) {
  const Grid g = Grid::unit(2);
  // a coherent region: root, its children, and the children of one child
  CubeSet s(2);
  std::vector<DyadicCube> members{DyadicCube{}};
  for (const auto& c : children(DyadicCube{}, 2)) members.push_back(c);
  for (const auto& c : children(cube2(1, 1, 0), 2)) members.push_back(c);
  for (const auto& q : members) s.insert(q);
  CubeDistance region(g, s, CubeDistance::Mode::region);
  CubeSet k(2);
  k.insert(cube2(2, 0, 0));
  k.insert(cube2(3, 7, 7));
  CubeDistance set(g, k, CubeDistance::Mode::set);
  CounterRng rng(4, 2);
  for (int i = 0; i < 10000; ++i) {
    const Vec x = make_vec({3 * rng.next() - 1, 3 * rng.next() - 1});
    const Vec y = make_vec({3 * rng.next() - 1, 3 * rng.next() - 1});
    EXPECT_LE(std::abs(region(x) - region(y)), (x - y).norm() + 1e-12);
    EXPECT_LE(std::abs(set(x) - set(y)), (x - y).norm() + 1e-12);
    if (i < 500) {
      EXPECT_NEAR(region(x), oracle::region_distance(g, members, x), 1e-12);
      EXPECT_NEAR(set(x), oracle::set_distance(g, {cube2(2, 0, 0), cube2(3, 7, 7)}, x), 1e-12);
    }
  }
}
