#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace proxvr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class AtomKind { least_squares, logistic };

std::string to_string(AtomKind kind);
AtomKind atom_kind_from_string(const std::string& name);

struct LipschitzConstants {
  std::vector<double> per_component;  // L_i
  double max = 0.0;                   // L = max_i L_i
  double smooth = 0.0;                // L_F
  double mean = 0.0;                  // (1/m) sum_i L_i
};

/// Smooth term F(x) = (1/m) sum_i f_i(x) over linear-model atoms.
///
/// Every atom depends on x through a single inner product t_i = <a_i, x>:
///   least squares  f_i(x) = 0.5 (t_i - b_i)^2
///   logistic       f_i(x) = log(1 + exp(-y_i t_i)),  y_i in {-1, +1}
/// so grad f_i(x) = slope_i(x) * a_i. For logistic atoms with an intercept the
/// rows are stored augmented with a trailing 1, and the intercept is the last
/// coordinate of x.
///
/// Immutable after construction; all members are const and safe to share.
class FiniteSumProblem {
 public:
  FiniteSumProblem(AtomKind kind, MatrixXd rows, VectorXd targets, bool intercept = false);

  static FiniteSumProblem least_squares(MatrixXd K, VectorXd b);
  /// `features` is m x n; when `intercept` is set a column of ones is appended.
  static FiniteSumProblem logistic(const MatrixXd& features, VectorXd labels, bool intercept);

  AtomKind kind() const { return kind_; }
  Index m() const { return rows_.rows(); }
  Index dim() const { return rows_.cols(); }
  bool has_intercept() const { return intercept_; }
  const MatrixXd& rows() const { return rows_; }
  const VectorXd& targets() const { return targets_; }

  double value_component(Index i, const VectorXd& x) const;
  double value(const VectorXd& x) const;

  /// Scalar derivative of the i-th loss at <a_i, x>.
  double slope(Index i, const VectorXd& x) const;
  double slope_at(Index i, double inner) const;
  /// Second derivative of the i-th loss at <a_i, x>.
  double curvature_at(Index i, double inner) const;

  VectorXd grad_component(Index i, const VectorXd& x) const;
  VectorXd grad_full(const VectorXd& x) const;
  /// F(x) and grad F(x) from one pass over the atoms.
  double value_and_grad(const VectorXd& x, VectorXd& grad) const;
  /// (1/m) A^T c for a vector of per-atom slopes c.
  VectorXd mean_of_slopes(const VectorXd& slopes) const;

  LipschitzConstants lipschitz_constants() const;

  MatrixXd hessian_full(const VectorXd& x) const;
  VectorXd hessian_vector(const VectorXd& x, const VectorXd& v) const;

 private:
  void check_index(Index i) const;
  void check_dim(const VectorXd& x) const;

  AtomKind kind_;
  MatrixXd rows_;
  VectorXd targets_;
  bool intercept_ = false;
};

}  // namespace proxvr
