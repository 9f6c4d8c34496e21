#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "proxvr/problems.hpp"
#include "proxvr/regularizers.hpp"
#include "proxvr/solvers.hpp"

namespace proxvr {

struct AlphaResult {
  /// Smallest eigenvalue of B^T hess F(x*) B; +inf when the tangent space is {0}.
  double alpha = std::numeric_limits<double>::infinity();
  bool ri_holds = true;
  Index tangent_dim = 0;
};

/// Restricted injectivity: alpha = lambda_min(B^T hess F(x*) B) over an
/// orthonormal basis B of the tangent space at xref. `basis` overrides B.
AlphaResult restricted_alpha(const FiniteSumProblem& problem, const Regularizer& reg,
                             const VectorXd& xref, double tol = 1e-10,
                             const MatrixXd* basis = nullptr);

/// Linearized FB operator on the tangent space, in tangent coordinates:
/// M = W_R G_F with G_F = I - gamma B^T H_F B and W_R = (I + gamma B^T H_R B)^-1.
/// H_R vanishes for l1; for group-l12 it is the block curvature of the norm.
struct MfbResult {
  MatrixXd basis;   // n x d, orthonormal columns
  MatrixXd matrix;  // d x d
  /// M lifted to R^n: basis * matrix * basis^T.
  MatrixXd lifted() const { return basis * matrix * basis.transpose(); }
};

/// Absent for the nuclear norm, whose manifold is not linear.
std::optional<MfbResult> build_mfb(const FiniteSumProblem& problem, const Regularizer& reg,
                                   const VectorXd& xref, double gamma);

/// Largest eigenvalue modulus; symmetric input goes through the symmetric solver.
double spectral_radius(const MatrixXd& M);

struct RateInputs {
  double alpha = 0.0;
  double alpha_F = 0.0;
  double alpha_R = 0.0;
  double L = 0.0;
  Index m = 1;
  double gamma = 0.0;
  Index P = 1;
};

/// Rates on the squared distance:
///   rho_fb          1 - gamma alpha
///   rho_saga        1 - min(1/(4m), alpha/(3L))                (per iteration)
///   rho_svrg        max((1 - gamma aF)/(1 + gamma aR), 4 L gamma (P+1))   (per epoch)
///   rho_svrg_largeP 1/(alpha gamma (1 - 4 L gamma) P) + 4 L gamma / (1 - 4 L gamma)
/// A rate >= 1 (or non-finite) is returned as computed and flagged.
struct RateBundle {
  double rho_fb = 1.0;
  double rho_saga = 1.0;
  double rho_svrg = 1.0;
  double rho_svrg_largeP = 1.0;
  bool fb_contractive = false;
  bool saga_contractive = false;
  bool svrg_contractive = false;
  bool svrg_largeP_contractive = false;
  /// True when alpha_F was replaced by the local alpha.
  bool local_regime = false;
};

RateBundle theoretical_rates(const RateInputs& in);

struct LocalCertificate {
  ManifoldDescriptor manifold;
  NDReport nd;
  bool ri_holds = false;
  double alpha = 0.0;
  /// Constant of quadratic growth Phi(x) - Phi(x*) >= alpha_growth |x - x*|^2
  /// implied by a second-order expansion: alpha / 2.
  double alpha_growth = 0.0;
  double alpha_F = 0.0;
  double alpha_R = 0.0;
  double L = 0.0;
  double L_F = 0.0;
  Index m = 0;
  double gamma = 0.0;
  Index P = 0;
  std::optional<MfbResult> mfb;
  double rho_mfb = std::numeric_limits<double>::quiet_NaN();
  RateBundle rates;
};

/// ND, RI, alpha, M_FB and rates at xref. With `local_regime` the SVRG rate uses
/// alpha_F = alpha (and alpha_R = 0); otherwise both global moduli are 0.
LocalCertificate certify(const FiniteSumProblem& problem, const Regularizer& reg,
                         const VectorXd& xref, double gamma, Index P,
                         bool local_regime = false);

RateBundle theoretical_rates(const FiniteSumProblem& problem, const LocalCertificate& cert,
                             double gamma, Index P, bool local_regime);

/// Per-iteration bound on |x_k - x*| implied by each squared-distance rate:
/// sqrt(rho_saga) and rho_svrg^(1/(2P)).
double saga_distance_factor(const RateBundle& rates);
double svrg_distance_factor(const RateBundle& rates, Index P);

/// Flat key=value report.
void write_certificate(std::ostream& out, const LocalCertificate& cert);

/// r_k = |(y_{k+1} - x*) - M (x_k - x*)| / |x_k - x*| over consecutive
/// snapshots with k >= k_start, where y_{k+1} is the stored conditional mean
/// when present and the next snapshot otherwise. r_k = 0 when x_k = x*.
std::vector<std::pair<Index, double>> linearization_residual(const SolverTrace& trace,
                                                             const MfbResult& mfb,
                                                             const VectorXd& xref,
                                                             Index k_start);

}  // namespace proxvr
