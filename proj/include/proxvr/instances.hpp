#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "proxvr/format.hpp"
#include "proxvr/problems.hpp"
#include "proxvr/regularizers.hpp"

namespace proxvr {

enum class InstanceKind {
  lasso_gaussian,
  lasso_unitary,
  lasso_overdetermined,
  sparse_logistic,
  group_sparse,
  low_rank,
  sgd_counterexample,  // the fixed three-dimensional LASSO below
};

std::string to_string(InstanceKind kind);
InstanceKind instance_kind_from_string(const std::string& name);

/// Recipe for a benchmark instance. Zero-valued optional fields select the
/// per-kind defaults documented in generate_instance().
struct InstanceSpec {
  InstanceKind kind = InstanceKind::lasso_gaussian;
  Index m = 0;
  Index n = 0;
  Index sparsity = 0;      // nonzeros (lasso, logistic) or nonzero blocks (group)
  Index block_size = 0;    // group-sparse
  Index rank = 0;          // low-rank
  Index matrix_rows = 0;   // low-rank: rows of the matricized variable (0 = square)
  Index saturated = 0;     // lasso-unitary: inactive entries with |K^T b|_i = mu
  double saturation_margin = 1e-12;
  double noise = -1.0;     // relative l2 size of the additive error
  double mu = 0.0;         // regularization weight (0 = kind default)
  double mu_fraction = 0.1;  // default mu as a fraction of the smallest zero-solution weight
  double entry_scale = 0.0;  // std. deviation of design entries (0 = kind default)
  bool intercept = true;   // sparse-logistic
  std::uint64_t seed = 1;

  void validate() const;
};

struct Instance {
  InstanceSpec spec;
  FiniteSumProblem problem;
  Regularizer regularizer;
  /// Ground-truth structure: the closed-form minimizer for lasso-unitary,
  /// the generating vector x_ob otherwise.
  VectorXd truth;
  /// lasso-unitary only: the unscaled orthonormal K and b.
  MatrixXd design;
  VectorXd observations;
};

/// Seeded, bit-reproducible instance generation (see Rng for the stream).
///
/// Per-kind defaults:
///   lasso-gaussian        K_ij ~ N(0, 1), noise 0.01, mu = 0.1 |K^T b / m|_inf
///   lasso-overdetermined  K_ij ~ N(0, 1/m), otherwise as lasso-gaussian
///   lasso-unitary         K orthonormalized Gaussian (n x n), mu 0.5;
///                         F = 0.5 |Kx - b|^2, stored as m = n atoms with
///                         rows scaled by sqrt(m)
///   sparse-logistic       z_ij ~ N(0, 16), labels sign(<z, x_ob> + noise),
///                         intercept column appended, mu = 1/sqrt(m)
///   group-sparse          K_ij ~ N(0, 1), mu = 0.1 max_B |(K^T b / m)_B|
///   low-rank              K_ij ~ N(0, 1), x_ob = G H^T (Gaussian factors),
///                         mu = 0.1 sigma_max(K^T b / m)
Instance generate_instance(const InstanceSpec& spec);

/// The three-dimensional LASSO on which Prox-SGD fails to identify the
/// support: K = diag(1, sqrt 2, sqrt 3), b = (2, sqrt 2 / 3, sqrt 3 / 4),
/// mu = 1/3, minimizer (1, 0, 0).
Instance sgd_counterexample();

/// Plain-text instance format: header lines `key value...`, then `rows` with
/// m lines of dim coefficients followed by the target, then `truth`.
void write_instance(std::ostream& out, const Instance& inst);
Instance read_instance(std::istream& in);

}  // namespace proxvr
