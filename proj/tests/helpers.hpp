#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "proxvr/problems.hpp"
#include "proxvr/rng.hpp"

namespace proxvr::test {

inline MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd a(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) a(i, j) = rng.normal();
  return a;
}

inline VectorXd gaussian(Index n, std::uint64_t seed) { return gaussian(n, 1, seed).col(0); }

inline VectorXd labels(Index m, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd y(m);
  for (Index i = 0; i < m; ++i) y(i) = rng.uniform01() < 0.5 ? -1.0 : 1.0;
  return y;
}

/// Central finite-difference gradient.
template <class F>
VectorXd fd_gradient(F&& f, const VectorXd& x, double h = 1e-6) {
  VectorXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration(const MatrixXd& a, int iters = 2000) {
  VectorXd v = VectorXd::Ones(a.cols()).normalized();
  double lambda = 0.0;
  for (int t = 0; t < iters; ++t) {
    const VectorXd w = a * v;
    lambda = v.dot(w);
    if (w.norm() == 0.0) return 0.0;
    v = w.normalized();
  }
  return lambda;
}

}  // namespace proxvr::test
