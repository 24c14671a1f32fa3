#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace qsdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

constexpr int kMaxDim = 3;

// Error hierarchy. Everything thrown by the library derives from Error so
// front-ends can map categories onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad parameter values (rho out of range, negative depth, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Evaluation outside a map's or extension's domain window.
struct DomainError : Error {
  using Error::Error;
};

// Geometric impossibilities: ancestor above the root, empty region, ...
struct GeometryError : Error {
  using Error::Error;
};

// A runtime-verified identity or inequality did not hold.
struct PropertyViolation : Error {
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

inline double sqr(double v) { return v * v; }

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace qsdiff
