#pragma once

// Composite maps with hand-placed features, shared by the unit tests and the
// acceptance run.

#include "qsdiff/qsdiff.hpp"

namespace fixture {

using namespace qsdiff;

// Integral of a slope that ramps linearly from 0 to 1 over [0, w].
inline double soft_ramp(double t, double w) {
  if (t <= 0.0) return 0.0;
  if (t >= w) return t - w / 2;
  return t * t / (2 * w);
}

// C^1 tent on [a, b]: slope +1 on the left half, -1 on the right half.
inline double tent(double x, double a, double b, double w) {
  const double c = (a + b) / 2;
  return soft_ramp(x - a + w / 2, w) - 2 * soft_ramp(x - c + w / 2, w) + soft_ramp(x - b + w / 2, w);
}

// Slope-drift branch in [1/2, 1]: a tent of slope +-s on [5/8, 3/4] flanked
// by half-height tents, so the perturbation has zero mean and zero first
// moment. Cube fits whose window swallows all of [1/2, 7/8] stay exactly
// affine; only the branch sees a drifted linear part.
inline constexpr double kBranchLo = 0.5, kBranchHi = 1.0;
inline MapSpec drift_branch(double s = 0.5) {
  return MapSpec::custom(
      1, 1,
      [s](const Vec& x) {
        const double t = x(0), w = 1.0 / 128;
        const double g = tent(t, 0.625, 0.75, w) - 0.5 * tent(t, 0.5, 0.625, w) - 0.5 * tent(t, 0.75, 0.875, w);
        return Vec::Constant(1, t + s * g);
      },
      "drift_branch");
}
inline DyadicCube drift_branch_cube() { return DyadicCube{1, {1}}; }

// Identity plus a windowed high-frequency wiggle on [5/8, 3/4].
inline MapSpec oscillation(double amplitude = 0.01, int cycles = 4) {
  return MapSpec::custom(
      1, 1,
      [amplitude, cycles](const Vec& x) {
        const double t = x(0);
        double g = 0.0;
        if (t > 0.625 && t < 0.75) {
          const double u = (t - 0.625) * 8;
          g = 16 * u * u * (1 - u) * (1 - u) * std::sin(2 * M_PI * cycles * u);
        }
        return Vec::Constant(1, t + amplitude * g);
      },
      "oscillation");
}
inline DyadicCube oscillation_cube() { return DyadicCube{3, {5}}; }

}  // namespace fixture
