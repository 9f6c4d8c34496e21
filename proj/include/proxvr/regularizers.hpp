#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

namespace proxvr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class RegularizerKind { l1, group_l12, nuclear };

std::string to_string(RegularizerKind kind);
RegularizerKind regularizer_kind_from_string(const std::string& name);

/// Active manifold of a point.
///
/// `support` lists active coordinates (l1) or active block ids (group-l12);
/// for the nuclear norm the manifold is the set of rank-`rank` matrices and
/// `U`, `V` hold orthonormal leading singular vectors.
///
/// `anchor` is the projection of the normalized subdifferential onto the
/// tangent space: sign(x_i) on the support (l1), x_B / |x_B| per active block
/// (group-l12), vec(U V^T) (nuclear). It is not part of manifold identity.
struct ManifoldDescriptor {
  RegularizerKind kind = RegularizerKind::l1;
  Index dim = 0;
  Index free_tail = 0;
  std::vector<Index> support;
  Index rank = 0;
  MatrixXd U;
  MatrixXd V;
  VectorXd anchor;

  /// Number of active coordinates, active blocks, or the rank.
  Index size() const {
    return kind == RegularizerKind::nuclear ? rank : static_cast<Index>(support.size());
  }
};

/// Sine of the largest principal angle between the column spans of two
/// orthonormal bases with the same number of columns.
double max_principal_angle_sine(const MatrixXd& a, const MatrixXd& b);

/// Equality of manifolds: index sets for l1/group-l12, rank plus principal
/// angles below `angle_tol` for the nuclear norm.
bool same_manifold(const ManifoldDescriptor& a, const ManifoldDescriptor& b,
                   double angle_tol = 1e-8);

struct NDReport {
  double gap = 0.0;
  bool holds = false;
  Index saturated_count = 0;
  double tolerance = 0.0;
  /// Deviation of u from mu * anchor on the tangent space (already folded into gap).
  double tangent_residual = 0.0;
};

struct ProxResult {
  VectorXd x;
  ManifoldDescriptor manifold;
};

/// Partly smooth penalty mu * R(x).
///
/// The last `free_tail` coordinates are unpenalized (used for a logistic
/// intercept); they are always part of the tangent space. Nuclear-norm
/// vectors are column-major vectorizations of a rows x cols matrix.
class Regularizer {
 public:
  static Regularizer l1(double mu, Index dim, Index free_tail = 0);
  static Regularizer group_l12(double mu, std::vector<Index> block_sizes, Index free_tail = 0);
  static Regularizer nuclear(double mu, Index rows, Index cols);

  RegularizerKind kind() const { return kind_; }
  double mu() const { return mu_; }
  Index dim() const { return dim_; }
  Index free_tail() const { return free_tail_; }
  Index penalized_dim() const { return dim_ - free_tail_; }
  const std::vector<Index>& block_sizes() const { return block_sizes_; }
  const std::vector<Index>& block_starts() const { return block_starts_; }
  Index matrix_rows() const { return rows_; }
  Index matrix_cols() const { return cols_; }

  Regularizer with_mu(double mu) const;

  double value(const VectorXd& x) const;

  /// argmin_z gamma * R(z) + 0.5 |z - v|^2.
  VectorXd prox(double gamma, const VectorXd& v) const;
  /// Prox together with the manifold of its output, read off the shrinkage
  /// rule so no thresholding tolerance is involved.
  ProxResult prox_with_manifold(double gamma, const VectorXd& v) const;

  /// Manifold of x. Entries, block norms or singular values above `tol` are
  /// active; for the nuclear norm a floor of dim * eps * sigma_max applies.
  ManifoldDescriptor manifold_at(const VectorXd& x, double tol = 0.0) const;

  VectorXd tangent_project(const ManifoldDescriptor& desc, const VectorXd& v) const;
  /// Orthonormal basis (dim x tangent dimension) of the tangent space.
  MatrixXd tangent_basis(const ManifoldDescriptor& desc) const;
  Index tangent_dim(const ManifoldDescriptor& desc) const;

  /// Non-degeneracy of u = -grad F(x*) with respect to the manifold of x*.
  /// Default tolerance is 1e-9 * mu.
  NDReport nondegeneracy(const ManifoldDescriptor& desc, const VectorXd& u,
                         double tol = -1.0) const;

  /// Distance of g from the subdifferential of R at x (0 iff g is a subgradient).
  double subdifferential_distance(const VectorXd& x, const VectorXd& g) const;

  /// Hessian of the smooth restriction of R to a linear manifold, as a dim x dim
  /// matrix acting on the tangent space: zero for l1, block-diagonal
  /// mu (I - x_B x_B^T / |x_B|^2) / |x_B| for group-l12.
  MatrixXd manifold_hessian(const VectorXd& x, const ManifoldDescriptor& desc) const;

  /// Count of nonzero penalized coordinates (l1, group-l12) or the rank.
  Index structure_size(const ManifoldDescriptor& desc) const;

 private:
  Regularizer(RegularizerKind kind, double mu, Index dim);
  void check_dim(const VectorXd& v) const;
  void check_descriptor(const ManifoldDescriptor& desc) const;

  RegularizerKind kind_;
  double mu_;
  Index dim_;
  Index free_tail_ = 0;
  std::vector<Index> block_sizes_;
  std::vector<Index> block_starts_;
  Index rows_ = 0;
  Index cols_ = 0;
};

}  // namespace proxvr
