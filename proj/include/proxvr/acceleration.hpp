#pragma once

#include <optional>
#include <string>
#include <vector>

#include "proxvr/problems.hpp"
#include "proxvr/regularizers.hpp"
#include "proxvr/solvers.hpp"

namespace proxvr {

/// Fires once the last `window` descriptors pushed are the same manifold.
class IdentificationDetector {
 public:
  explicit IdentificationDetector(Index window, double angle_tol = 1e-8);

  /// Returns the descriptor while the trailing run has length >= window.
  std::optional<ManifoldDescriptor> push(const ManifoldDescriptor& desc);
  void reset();

  Index window() const { return window_; }
  bool fired() const { return fired_at_ >= 0; }
  /// Zero-based position in the stream of the first firing, -1 if none.
  Index fired_at() const { return fired_at_; }

 private:
  Index window_;
  double angle_tol_;
  std::optional<ManifoldDescriptor> last_;
  Index run_ = 0;
  Index count_ = 0;
  Index fired_at_ = -1;
};

struct LocalLipschitz {
  std::vector<double> per_component;  // L_{M,i}
  double max = 0.0;                   // L_M
};

/// Component Lipschitz constants restricted to the tangent space of `desc`:
/// c |P_T a_i|^2 with c = 1 (least squares) or 1/4 (logistic).
LocalLipschitz local_lipschitz(const FiniteSumProblem& problem, const Regularizer& reg,
                               const ManifoldDescriptor& desc);

/// Step after an adaptive switch: min(gamma L / L_M, 1/(3 L_M)).
double adaptive_step(double gamma, double L, double L_M);

enum class NewtonStatus { ok, sign_change, singular };
std::string to_string(NewtonStatus status);

struct NewtonResult {
  VectorXd x;  // the input point unless status == ok
  NewtonStatus status = NewtonStatus::ok;
  /// |B^T (grad F(x) + grad R(x))| at the input point.
  double reduced_gradient_norm = 0.0;
  double step_norm = 0.0;
};

/// One Newton step on the smooth restriction of Phi to the linear manifold
/// `desc` (l1 or group-l12). l1 signs are taken from desc.anchor and held
/// fixed; a step that would flip a sign or zero a block is rejected.
NewtonResult newton_on_manifold(const FiniteSumProblem& problem, const Regularizer& reg,
                                const ManifoldDescriptor& desc, const VectorXd& x);

/// Polak-Ribiere+ state carried between Riemannian CG steps.
struct CgState {
  VectorXd prev_grad;
  VectorXd direction;
  Index restarts = 0;
  /// F and grad F at the last accepted point, reused by the next step.
  VectorXd point;
  double point_value = 0.0;
  VectorXd point_grad;
};

enum class CgStatus { ok, converged, rank_drop, line_search_failed };
std::string to_string(CgStatus status);

struct CgStepResult {
  VectorXd x;
  ManifoldDescriptor manifold;
  CgStatus status = CgStatus::ok;
  double grad_norm = 0.0;  // Riemannian gradient norm at the input point
  double step = 0.0;
  double phi = 0.0;  // Phi at x
  /// m per pass over the atoms: value with gradient, or Hessian-vector product.
  long long grad_evals = 0;
};

/// Riemannian gradient of F + mu |.|_* on the fixed-rank manifold:
/// P_T(grad F(X) + mu U V^T).
VectorXd riemannian_gradient(const FiniteSumProblem& problem, const Regularizer& reg,
                             const ManifoldDescriptor& desc, const VectorXd& x);

/// Rank-r truncated SVD of mat(v); returns the point and its descriptor.
/// `sigma_min`, if given, receives the r-th singular value.
ProxResult fixed_rank_retraction(const Regularizer& reg, const VectorXd& v, Index rank,
                                 double* sigma_min = nullptr);

/// One nonlinear CG step on the fixed-rank manifold of `desc`. Direction by
/// PR+ with re-projection transport; step length from the quadratic model
/// along the direction, then Armijo backtracking on Phi after retraction.
/// Stops with `converged` when the gradient norm is at most grad_tol.
CgStepResult riemannian_cg_step(const FiniteSumProblem& problem, const Regularizer& reg,
                                const ManifoldDescriptor& desc, const VectorXd& x,
                                CgState& state, double grad_tol = 0.0);

enum class SwitchRule { none, adaptive_step, newton, riemannian_cg };
std::string to_string(SwitchRule rule);
SwitchRule switch_rule_from_string(const std::string& name);

struct HybridPolicy {
  SwitchRule rule = SwitchRule::adaptive_step;
  Index window = 0;  // 0 = 2m
  /// Relative increase of Phi tolerated by a local step before falling back.
  double safeguard_tol = 1e-12;
  Index max_fallbacks = 10;
  Index max_local_steps = 200;
  /// Local phase ends (and the run stops) once the reduced or Riemannian
  /// gradient norm is at most this value.
  double local_grad_tol = 1e-14;
};

struct HybridTrace {
  SolverTrace trace;
  std::optional<Index> switch_k;  // iteration of the (last) switch
  Index fallbacks = 0;
  Index local_steps = 0;
  double L_M = 0.0;
  double gamma_before = 0.0;
  double gamma_after = 0.0;
};

/// Phase 1 runs the configured method while feeding descriptors to the
/// detector; on firing the policy's local strategy takes over. Events
/// ("switch:<rule>", "fallback:<reason>") are written to the trace.
HybridTrace run_hybrid(const FiniteSumProblem& problem, const Regularizer& reg,
                       const SolverConfig& phase1, const HybridPolicy& policy,
                       const VectorXd& x0);

}  // namespace proxvr
