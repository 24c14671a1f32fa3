#pragma once

#include "qsdiff/core.hpp"

#include <Eigen/Eigenvalues>

namespace qsdiff {

// Largest singular value. Closed forms for the Gram matrix when its size is
// at most 3, power iteration otherwise.
inline double operator_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  const Mat gram = a.rows() <= a.cols() ? Mat(a * a.transpose()) : Mat(a.transpose() * a);
  const auto n = gram.rows();
  double lmax = 0.0;
  if (n == 1) {
    lmax = gram(0, 0);
  } else if (n == 2) {
    const double p = gram(0, 0), q = gram(1, 1), r = gram(0, 1);
    lmax = 0.5 * (p + q) + std::sqrt(0.25 * sqr(p - q) + r * r);
  } else if (n == 3) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(Eigen::Matrix3d(gram), Eigen::EigenvaluesOnly);
    lmax = es.eigenvalues().maxCoeff();
  } else {
    Vec v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
    double prev = 0.0;
    for (int it = 0; it < 200; ++it) {
      Vec w = gram * v;
      const double nw = w.norm();
      if (nw == 0.0) return 0.0;
      v = w / nw;
      lmax = v.dot(gram * v);
      if (std::abs(lmax - prev) <= 1e-12 * std::max(1.0, lmax)) break;
      prev = lmax;
    }
  }
  return std::sqrt(std::max(0.0, lmax));
}

// A(x) = linear * x + offset, with |A'| cached.
class AffineMap {
 public:
  AffineMap() = default;
  AffineMap(Mat linear, Vec offset) : linear_(std::move(linear)), offset_(std::move(offset)) {
    require(linear_.rows() == offset_.size(), "AffineMap: offset size must match linear rows");
    op_norm_ = operator_norm(linear_);
  }

  static AffineMap identity(int d) { return AffineMap(Mat::Identity(d, d), Vec::Zero(d)); }

  int dim_in() const { return static_cast<int>(linear_.cols()); }
  int dim_out() const { return static_cast<int>(linear_.rows()); }
  const Mat& linear() const { return linear_; }
  const Vec& offset() const { return offset_; }
  double op_norm() const { return op_norm_; }

  Vec operator()(const Vec& x) const { return linear_ * x + offset_; }

  AffineMap scaled(double s) const { return AffineMap(linear_ * s, offset_ * s); }

 private:
  Mat linear_;
  Vec offset_;
  double op_norm_ = 0.0;
};

}  // namespace qsdiff
