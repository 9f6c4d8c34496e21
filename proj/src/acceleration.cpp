#include "proxvr/acceleration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace proxvr {

IdentificationDetector::IdentificationDetector(Index window, double angle_tol)
    : window_(window), angle_tol_(angle_tol) {
  if (window < 1) throw std::invalid_argument("detector: window must be >= 1");
}

std::optional<ManifoldDescriptor> IdentificationDetector::push(const ManifoldDescriptor& desc) {
  if (last_ && same_manifold(*last_, desc, angle_tol_)) {
    ++run_;
  } else {
    run_ = 1;
  }
  last_ = desc;
  ++count_;
  if (run_ < window_) return std::nullopt;
  if (fired_at_ < 0) fired_at_ = count_ - 1;
  return desc;
}

void IdentificationDetector::reset() {
  last_.reset();
  run_ = 0;
  count_ = 0;
  fired_at_ = -1;
}

LocalLipschitz local_lipschitz(const FiniteSumProblem& problem, const Regularizer& reg,
                               const ManifoldDescriptor& desc) {
  LocalLipschitz out;
  const Index m = problem.m();
  out.per_component.assign(static_cast<std::size_t>(m), 0.0);
  if (reg.tangent_dim(desc) == 0) return out;
  const double factor = problem.kind() == AtomKind::least_squares ? 1.0 : 0.25;
  for (Index i = 0; i < m; ++i) {
    const VectorXd a = problem.rows().row(i).transpose();
    const double li = factor * reg.tangent_project(desc, a).squaredNorm();
    out.per_component[static_cast<std::size_t>(i)] = li;
    out.max = std::max(out.max, li);
  }
  return out;
}

double adaptive_step(double gamma, double L, double L_M) {
  if (!(L_M > 0.0)) return gamma;
  return std::min(gamma * L / L_M, 1.0 / (3.0 * L_M));
}

std::string to_string(NewtonStatus status) {
  switch (status) {
    case NewtonStatus::ok:
      return "ok";
    case NewtonStatus::sign_change:
      return "sign-change";
    case NewtonStatus::singular:
      return "singular";
  }
  return "?";
}

namespace {

// Gradient of the smooth restriction of R on the linear manifold.
VectorXd manifold_penalty_gradient(const Regularizer& reg, const ManifoldDescriptor& desc,
                                   const VectorXd& x) {
  VectorXd g = VectorXd::Zero(x.size());
  if (reg.kind() == RegularizerKind::l1) return reg.mu() * desc.anchor;
  const auto& starts = reg.block_starts();
  const auto& sizes = reg.block_sizes();
  for (Index b : desc.support) {
    const auto ub = static_cast<std::size_t>(b);
    const auto seg = x.segment(starts[ub], sizes[ub]);
    g.segment(starts[ub], sizes[ub]) = reg.mu() * seg / seg.norm();
  }
  return g;
}

}  // namespace

NewtonResult newton_on_manifold(const FiniteSumProblem& problem, const Regularizer& reg,
                                const ManifoldDescriptor& desc, const VectorXd& x) {
  if (reg.kind() == RegularizerKind::nuclear)
    throw std::invalid_argument("newton_on_manifold: needs a linear manifold");
  NewtonResult out;
  out.x = x;
  const MatrixXd B = reg.tangent_basis(desc);
  if (B.cols() == 0) return out;
  for (Index b : desc.support) {
    if (reg.kind() == RegularizerKind::group_l12) {
      const auto ub = static_cast<std::size_t>(b);
      if (x.segment(reg.block_starts()[ub], reg.block_sizes()[ub]).norm() == 0.0) {
        out.status = NewtonStatus::singular;
        return out;
      }
    }
  }
  const VectorXd grad = B.transpose() * (problem.grad_full(x) + manifold_penalty_gradient(reg, desc, x));
  out.reduced_gradient_norm = grad.norm();
  MatrixXd H = B.transpose() * problem.hessian_full(x) * B;
  if (reg.kind() == RegularizerKind::group_l12)
    H += B.transpose() * reg.manifold_hessian(x, desc) * B;
  H = 0.5 * (H + H.transpose());
  Eigen::LLT<MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    out.status = NewtonStatus::singular;
    return out;
  }
  const VectorXd delta = llt.solve(-grad);
  const VectorXd trial = x + B * delta;
  if (reg.kind() == RegularizerKind::l1) {
    for (Index i : desc.support)
      if (trial(i) * desc.anchor(i) <= 0.0) {
        out.status = NewtonStatus::sign_change;
        return out;
      }
  } else {
    for (Index b : desc.support) {
      const auto ub = static_cast<std::size_t>(b);
      const Index s = reg.block_starts()[ub];
      const Index len = reg.block_sizes()[ub];
      // A block collapsing to zero or reversing direction leaves the manifold model.
      if (trial.segment(s, len).dot(x.segment(s, len)) <= 0.0) {
        out.status = NewtonStatus::sign_change;
        return out;
      }
    }
  }
  out.x = trial;
  out.step_norm = (B * delta).norm();
  return out;
}

std::string to_string(CgStatus status) {
  switch (status) {
    case CgStatus::ok:
      return "ok";
    case CgStatus::converged:
      return "converged";
    case CgStatus::rank_drop:
      return "rank-drop";
    case CgStatus::line_search_failed:
      return "line-search-failed";
  }
  return "?";
}

VectorXd riemannian_gradient(const FiniteSumProblem& problem, const Regularizer& reg,
                             const ManifoldDescriptor& desc, const VectorXd& x) {
  if (reg.kind() != RegularizerKind::nuclear)
    throw std::invalid_argument("riemannian_gradient: needs the nuclear norm");
  return reg.tangent_project(desc, problem.grad_full(x) + reg.mu() * desc.anchor);
}

ProxResult fixed_rank_retraction(const Regularizer& reg, const VectorXd& v, Index rank,
                                 double* sigma_min) {
  const Index rows = reg.matrix_rows();
  const Index cols = reg.matrix_cols();
  if (rank < 1 || rank > std::min(rows, cols))
    throw std::invalid_argument("fixed_rank_retraction: invalid rank");
  Eigen::JacobiSVD<MatrixXd> svd(Eigen::Map<const MatrixXd>(v.data(), rows, cols),
                                 Eigen::ComputeThinU | Eigen::ComputeThinV);
  ProxResult out;
  ManifoldDescriptor& d = out.manifold;
  d.kind = RegularizerKind::nuclear;
  d.dim = reg.dim();
  d.rank = rank;
  if (sigma_min) *sigma_min = svd.singularValues()(rank - 1);
  d.U = svd.matrixU().leftCols(rank);
  d.V = svd.matrixV().leftCols(rank);
  const MatrixXd x = d.U * svd.singularValues().head(rank).asDiagonal() * d.V.transpose();
  out.x = Eigen::Map<const VectorXd>(x.data(), x.size());
  const MatrixXd uv = d.U * d.V.transpose();
  d.anchor = Eigen::Map<const VectorXd>(uv.data(), uv.size());
  return out;
}

CgStepResult riemannian_cg_step(const FiniteSumProblem& problem, const Regularizer& reg,
                                const ManifoldDescriptor& desc, const VectorXd& x,
                                CgState& state, double grad_tol) {
  if (reg.kind() != RegularizerKind::nuclear)
    throw std::invalid_argument("riemannian_cg_step: needs the nuclear norm");
  const auto m = static_cast<long long>(problem.m());
  CgStepResult out;
  out.x = x;
  out.manifold = desc;
  VectorXd egrad;
  double f = 0.0;
  if (state.point.size() == x.size() && state.point == x) {
    egrad = state.point_grad;
    f = state.point_value;
  } else {
    f = problem.value_and_grad(x, egrad);
    out.grad_evals += m;
  }
  const double phi0 = f + reg.value(x);
  out.phi = phi0;
  const VectorXd grad = reg.tangent_project(desc, egrad + reg.mu() * desc.anchor);
  out.grad_norm = grad.norm();
  if (out.grad_norm <= grad_tol) {
    out.status = CgStatus::converged;
    return out;
  }

  VectorXd dir = -grad;
  if (state.prev_grad.size() == x.size() && state.direction.size() == x.size()) {
    // Transport by re-projection onto the current tangent space.
    const VectorXd g_old = reg.tangent_project(desc, state.prev_grad);
    const VectorXd d_old = reg.tangent_project(desc, state.direction);
    const double denom = state.prev_grad.squaredNorm();
    const double beta = denom > 0.0 ? std::max(0.0, grad.dot(grad - g_old) / denom) : 0.0;
    dir += beta * d_old;
    if (grad.dot(dir) >= 0.0) {
      dir = -grad;
      ++state.restarts;
    }
  }
  const double slope = grad.dot(dir);
  const double curv = dir.dot(problem.hessian_vector(x, dir));
  out.grad_evals += m;
  double t = curv > 0.0 ? -slope / curv : 1.0;

  const double slack = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(phi0);
  for (int trial = 0; trial < 40; ++trial, t *= 0.5) {
    double sigma_r = 0.0;
    ProxResult next = fixed_rank_retraction(reg, x + t * dir, desc.rank, &sigma_r);
    if (sigma_r < 1e-12) {
      out.status = CgStatus::rank_drop;
      return out;
    }
    VectorXd g_next;
    const double f_next = problem.value_and_grad(next.x, g_next);
    out.grad_evals += m;
    const double phi = f_next + reg.value(next.x);
    if (phi <= phi0 + 1e-4 * t * slope + slack) {
      state.prev_grad = grad;
      state.direction = dir;
      state.point = next.x;
      state.point_value = f_next;
      state.point_grad = std::move(g_next);
      out.x = std::move(next.x);
      out.manifold = std::move(next.manifold);
      out.step = t;
      out.phi = phi;
      return out;
    }
  }
  out.status = CgStatus::line_search_failed;
  return out;
}

std::string to_string(SwitchRule rule) {
  switch (rule) {
    case SwitchRule::none:
      return "none";
    case SwitchRule::adaptive_step:
      return "adaptive-step";
    case SwitchRule::newton:
      return "newton";
    case SwitchRule::riemannian_cg:
      return "riemannian-cg";
  }
  return "?";
}

SwitchRule switch_rule_from_string(const std::string& name) {
  for (auto r : {SwitchRule::none, SwitchRule::adaptive_step, SwitchRule::newton,
                 SwitchRule::riemannian_cg})
    if (to_string(r) == name) return r;
  throw std::invalid_argument("unknown switch rule: " + name);
}

namespace {

double objective(const FiniteSumProblem& problem, const Regularizer& reg, const VectorXd& x) {
  return problem.value(x) + reg.value(x);
}

// Runs the local method from the solver's current point. Returns false when
// a safeguard fired; the solver is then back at the last accepted point.
bool run_local_phase(const FiniteSumProblem& problem, const Regularizer& reg,
                     const HybridPolicy& policy, Solver& solver, HybridTrace& out,
                     std::string& reason) {
  const ManifoldDescriptor desc = solver.manifold();
  const auto m = static_cast<long long>(problem.m());
  CgState cg;
  ManifoldDescriptor cg_desc = desc;
  double phi = objective(problem, reg, solver.x());
  for (Index t = 0; t < policy.max_local_steps && !solver.done(); ++t) {
    VectorXd next;
    long long evals = 0;
    double phi_next = 0.0;
    if (policy.rule == SwitchRule::newton) {
      const NewtonResult r = newton_on_manifold(problem, reg, desc, solver.x());
      evals = 2 * m;  // gradient and Hessian
      if (r.reduced_gradient_norm <= policy.local_grad_tol) {
        solver.stop(true);
        return true;
      }
      if (r.status != NewtonStatus::ok) {
        reason = to_string(r.status);
        return false;
      }
      next = r.x;
      // The value shares its pass over the atoms with the next gradient.
      phi_next = objective(problem, reg, next);
    } else {
      CgStepResult r = riemannian_cg_step(problem, reg, cg_desc, solver.x(), cg,
                                          policy.local_grad_tol);
      evals = r.grad_evals;
      if (r.status == CgStatus::converged) {
        solver.stop(true);
        return true;
      }
      if (r.status != CgStatus::ok) {
        reason = to_string(r.status);
        return false;
      }
      next = std::move(r.x);
      cg_desc = std::move(r.manifold);
      phi_next = r.phi;
    }
    if (phi_next > phi + policy.safeguard_tol * std::max(1.0, std::abs(phi))) {
      reason = "objective-increase";
      return false;
    }
    phi = std::min(phi, phi_next);
    solver.external_step(next, evals);
    ++out.local_steps;
    // CG moves along the fixed-rank manifold, so only the rank must persist.
    const bool left = reg.kind() == RegularizerKind::nuclear
                          ? solver.manifold().rank != desc.rank
                          : !same_manifold(solver.manifold(), desc);
    if (left) {
      reason = "manifold-change";
      return false;
    }
  }
  if (!solver.done()) solver.stop(false);
  return true;
}

}  // namespace

HybridTrace run_hybrid(const FiniteSumProblem& problem, const Regularizer& reg,
                       const SolverConfig& phase1, const HybridPolicy& policy,
                       const VectorXd& x0) {
  if (policy.rule == SwitchRule::newton && reg.kind() == RegularizerKind::nuclear)
    throw std::invalid_argument("run_hybrid: Newton policy needs l1 or group-l12");
  if (policy.rule == SwitchRule::riemannian_cg && reg.kind() != RegularizerKind::nuclear)
    throw std::invalid_argument("run_hybrid: Riemannian CG policy needs the nuclear norm");
  HybridTrace out;
  Solver solver(problem, reg, phase1, x0);
  const Index window = policy.window > 0 ? policy.window : 2 * problem.m();
  IdentificationDetector detector(window);
  detector.push(solver.manifold());
  out.gamma_before = solver.gamma();
  out.gamma_after = out.gamma_before;
  const double L = problem.lipschitz_constants().max;
  bool switched = false;
  ManifoldDescriptor switched_on;

  while (!solver.done()) {
    solver.step();
    if (switched) {
      // Adaptive-step phase: fall back if the iterates leave the manifold.
      if (!same_manifold(solver.manifold(), switched_on)) {
        solver.set_gamma(out.gamma_before);
        solver.mark_event("fallback:manifold-change");
        ++out.fallbacks;
        switched = false;
        detector.reset();
      }
      continue;
    }
    const bool fired = detector.push(solver.manifold()).has_value();
    if (!fired || policy.rule == SwitchRule::none || out.fallbacks >= policy.max_fallbacks)
      continue;
    out.switch_k = solver.k();
    solver.mark_event("switch:" + to_string(policy.rule));
    if (policy.rule == SwitchRule::adaptive_step) {
      out.L_M = local_lipschitz(problem, reg, solver.manifold()).max;
      out.gamma_after = adaptive_step(out.gamma_before, L, out.L_M);
      solver.set_gamma(out.gamma_after);
      switched_on = solver.manifold();
      switched = true;
      continue;
    }
    std::string reason;
    if (!run_local_phase(problem, reg, policy, solver, out, reason)) {
      // Resume phase 1 from the current point with fresh estimator state.
      solver.mark_event("fallback:" + reason);
      solver.reset_point(solver.x());
      ++out.fallbacks;
      detector.reset();
    }
  }
  out.trace = solver.finish();
  return out;
}

}  // namespace proxvr
