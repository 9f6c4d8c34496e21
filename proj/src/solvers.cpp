#include "proxvr/solvers.hpp"

#include <cmath>
#include <iostream>
#include <ostream>
#include <stdexcept>

#include "proxvr/format.hpp"

namespace proxvr {

std::string to_string(Method method) {
  switch (method) {
    case Method::fbs:
      return "fbs";
    case Method::prox_sgd:
      return "prox-sgd";
    case Method::saga:
      return "saga";
    case Method::prox_svrg:
      return "prox-svrg";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::fbs, Method::prox_sgd, Method::saga, Method::prox_svrg})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown method: " + name);
}

void SolverConfig::validate() const {
  if (gamma < 0.0 || !std::isfinite(gamma))
    throw std::invalid_argument("solver: gamma must be positive (0 selects the default)");
  if (method == Method::prox_sgd && !(sgd_decay > 0.5 && sgd_decay <= 1.0))
    throw std::invalid_argument("solver: Prox-SGD decay exponent must lie in (1/2, 1]");
  if (svrg_P < 0) throw std::invalid_argument("solver: svrg_P must be >= 1 (0 selects m)");
  if (max_iters < 0) throw std::invalid_argument("solver: max_iters must be >= 0");
  if (error_stride < 0 || snapshot_stride < 0 || record_stride < 1)
    throw std::invalid_argument("solver: invalid stride");
  if (tol < 0.0 || ref_tol < 0.0) throw std::invalid_argument("solver: negative tolerance");
  if (ref_tol > 0.0 && !x_ref) throw std::invalid_argument("solver: ref_tol needs x_ref");
}

std::vector<std::pair<Index, double>> SolverTrace::distance_series() const {
  std::vector<std::pair<Index, double>> out;
  for (const auto& r : records)
    if (std::isfinite(r.dist_to_ref)) out.emplace_back(r.k, r.dist_to_ref);
  return out;
}

VectorXd fb_step(const VectorXd& x, double gamma, const VectorXd& g, const Regularizer& reg) {
  if (x.size() != g.size() || x.size() != reg.dim())
    throw std::invalid_argument("fb_step: dimension mismatch");
  return reg.prox(gamma, x - gamma * g);
}

VectorXd saga_estimate(const FiniteSumProblem& problem, Index i, const VectorXd& x,
                       const VectorXd& table_slopes, const VectorXd& table_mean) {
  const double d = problem.slope(i, x) - table_slopes(i);
  return d * problem.rows().row(i).transpose() + table_mean;
}

VectorXd svrg_estimate(const FiniteSumProblem& problem, Index i, const VectorXd& x,
                       const VectorXd& anchor, const VectorXd& anchor_grad) {
  const double d = problem.slope(i, x) - problem.slope(i, anchor);
  return d * problem.rows().row(i).transpose() + anchor_grad;
}

namespace {

double default_gamma(Method method, const LipschitzConstants& lc) {
  switch (method) {
    case Method::fbs:
      return 1.0 / lc.smooth;
    case Method::prox_sgd:
      return 1.0 / lc.max;
    default:
      return 1.0 / (3.0 * lc.max);
  }
}

}  // namespace

Solver::Solver(const FiniteSumProblem& problem, const Regularizer& reg, SolverConfig config,
               VectorXd x0)
    : problem_(problem), reg_(reg), config_(std::move(config)), rng_(config_.seed),
      x_(std::move(x0)) {
  config_.validate();
  if (problem_.dim() != reg_.dim() || x_.size() != problem_.dim())
    throw std::invalid_argument("solver: problem, regularizer and x0 dimensions differ");
  if (config_.x_ref && config_.x_ref->size() != x_.size())
    throw std::invalid_argument("solver: reference has the wrong dimension");
  const LipschitzConstants lc = problem_.lipschitz_constants();
  gamma_ = config_.gamma > 0.0 ? config_.gamma : default_gamma(config_.method, lc);
  if (config_.method == Method::fbs && gamma_ >= 2.0 / lc.smooth)
    std::clog << "warning: FBS step " << gamma_ << " is not below 2/L_F = " << 2.0 / lc.smooth
              << '\n';
  manifold_ = reg_.manifold_at(x_);
  trace_.method = config_.method;
  const Index m = problem_.m();
  if (config_.method == Method::saga) {
    // Table initialized at x0.
    const VectorXd t = problem_.rows() * x_;
    table_slopes_.resize(m);
    for (Index i = 0; i < m; ++i) table_slopes_(i) = problem_.slope_at(i, t(i));
    table_mean_ = problem_.mean_of_slopes(table_slopes_);
    grad_evals_ += m;
  }
  if (config_.method == Method::prox_svrg) {
    inner_sum_ = VectorXd::Zero(x_.size());
    ergodic_sum_ = VectorXd::Zero(x_.size());
  }
}

double Solver::gamma() const {
  if (config_.method == Method::prox_sgd)
    return gamma_ / std::pow(1.0 + static_cast<double>(k_), config_.sgd_decay);
  return gamma_;
}

Index Solver::P() const { return config_.svrg_P > 0 ? config_.svrg_P : problem_.m(); }

Index Solver::error_stride() const {
  if (config_.error_stride > 0) return config_.error_stride;
  return config_.method == Method::fbs ? 1 : problem_.m();
}

VectorXd Solver::estimate(Index i) {
  const auto a = problem_.rows().row(i).transpose();
  double d = 0.0;
  if (config_.method == Method::saga) {
    d = problem_.slope(i, x_) - table_slopes_(i);
    last_vr_residual_ = std::abs(d) * a.norm();
    return d * a + table_mean_;
  }
  d = problem_.slope(i, x_) - problem_.slope(i, anchor_);
  last_vr_residual_ = std::abs(d) * a.norm();
  return d * a + anchor_grad_;
}

void Solver::start_epoch() {
  anchor_ = x_;
  anchor_grad_ = problem_.grad_full(anchor_);
  grad_evals_ += problem_.m();
  inner_sum_.setZero();
  push_epoch_record();
}

void Solver::push_epoch_record() {
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.k = k_;
  rec.grad_evals = grad_evals_;
  rec.anchor = x_;
  rec.phi_anchor = problem_.value(x_) + reg_.value(x_);
  if (k_ > 0) {
    const VectorXd avg = ergodic_sum_ / static_cast<double>(k_);
    rec.phi_ergodic = problem_.value(avg) + reg_.value(avg);
  }
  trace_.epochs.push_back(std::move(rec));
}

void Solver::record(const VectorXd* g) {
  const bool on_stride = k_ % config_.record_stride == 0;
  if (g && !on_stride && pending_event_.empty()) return;
  TraceRecord rec;
  rec.k = k_;
  rec.support_size = reg_.structure_size(manifold_);
  rec.grad_evals = grad_evals_;
  rec.epoch = epoch_;
  rec.vr_residual = g ? last_vr_residual_ : std::numeric_limits<double>::quiet_NaN();
  if (config_.x_ref) rec.dist_to_ref = (x_ - *config_.x_ref).norm();
  if (!g || k_ % error_stride() == 0) {
    rec.phi = problem_.value(x_) + reg_.value(x_);
    if (g) {
      // Diagnostic: not charged to the gradient counter.
      rec.eps_norm =
          config_.method == Method::fbs ? 0.0 : (*g - problem_.grad_full(x_)).norm();
    }
  }
  rec.event = std::move(pending_event_);
  pending_event_.clear();
  trace_.records.push_back(std::move(rec));
}

VectorXd Solver::conditional_next() const {
  const double g = gamma();
  const Index m = problem_.m();
  if (config_.method == Method::fbs) return fb_step(x_, g, problem_.grad_full(x_), reg_);
  const bool fresh_epoch = config_.method == Method::prox_svrg && inner_p_ == 0;
  const VectorXd anchor = fresh_epoch ? x_ : anchor_;
  const VectorXd anchor_grad = fresh_epoch ? problem_.grad_full(x_) : anchor_grad_;
  VectorXd sum = VectorXd::Zero(x_.size());
  for (Index i = 0; i < m; ++i) {
    VectorXd est;
    switch (config_.method) {
      case Method::prox_sgd:
        est = problem_.grad_component(i, x_);
        break;
      case Method::saga:
        est = saga_estimate(problem_, i, x_, table_slopes_, table_mean_);
        break;
      default:
        est = svrg_estimate(problem_, i, x_, anchor, anchor_grad);
        break;
    }
    sum += fb_step(x_, g, est, reg_);
  }
  return sum / static_cast<double>(m);
}

void Solver::step() {
  if (done()) return;
  const Method method = config_.method;
  if (method == Method::prox_svrg && inner_p_ == 0) start_epoch();
  if (config_.snapshot_stride > 0 && k_ % config_.snapshot_stride == 0) {
    Snapshot snap{k_, x_, VectorXd()};
    if (config_.snapshot_conditional_mean) snap.conditional_next = conditional_next();
    trace_.snapshots.push_back(std::move(snap));
  }

  const double g_k = gamma();
  const Index m = problem_.m();
  Index i = -1;
  VectorXd g;
  switch (method) {
    case Method::fbs:
      g = problem_.grad_full(x_);
      last_vr_residual_ = 0.0;
      grad_evals_ += m;
      break;
    case Method::prox_sgd:
      i = static_cast<Index>(rng_.index(static_cast<std::uint64_t>(m)));
      g = problem_.grad_component(i, x_);
      grad_evals_ += 1;
      break;
    case Method::saga:
      i = static_cast<Index>(rng_.index(static_cast<std::uint64_t>(m)));
      g = estimate(i);
      grad_evals_ += 1;
      break;
    case Method::prox_svrg:
      i = static_cast<Index>(rng_.index(static_cast<std::uint64_t>(m)));
      g = estimate(i);
      grad_evals_ += 2;
      break;
  }
  record(&g);

  ProxResult next = reg_.prox_with_manifold(g_k, x_ - g_k * g);
  if (method == Method::saga) {
    // The sampled slope is recomputed from x_k; identical to the one used in g.
    const double s = problem_.slope(i, x_);
    table_mean_ += (s - table_slopes_(i)) / static_cast<double>(m) *
                   problem_.rows().row(i).transpose();
    table_slopes_(i) = s;
  }
  const double step_norm = (next.x - x_).norm();
  x_ = std::move(next.x);
  ++k_;
  if (!same_manifold(next.manifold, manifold_)) trace_.last_change_k = k_;
  manifold_ = std::move(next.manifold);

  if (method == Method::saga && k_ % m == 0) table_mean_ = problem_.mean_of_slopes(table_slopes_);
  if (method == Method::prox_svrg) {
    ergodic_sum_ += x_;
    inner_sum_ += x_;
    if (++inner_p_ == P()) {
      if (config_.svrg_option == SvrgOption::II) {
        const ManifoldDescriptor before = manifold_;
        x_ = inner_sum_ / static_cast<double>(P());
        manifold_ = reg_.manifold_at(x_);
        if (!same_manifold(before, manifold_)) trace_.last_change_k = k_;
      }
      inner_p_ = 0;
      ++epoch_;
    }
  }

  if (config_.tol > 0.0 && k_ % error_stride() == 0 && step_norm / g_k < config_.tol) {
    stopped_ = true;
    trace_.converged = true;
  }
  if (config_.ref_tol > 0.0 && (x_ - *config_.x_ref).norm() < config_.ref_tol) {
    stopped_ = true;
    trace_.converged = true;
  }
}

void Solver::reset_point(const VectorXd& x) {
  if (x.size() != x_.size()) throw std::invalid_argument("reset_point: dimension mismatch");
  const ManifoldDescriptor before = manifold_;
  x_ = x;
  manifold_ = reg_.manifold_at(x_);
  if (!same_manifold(before, manifold_)) trace_.last_change_k = k_;
  const Index m = problem_.m();
  if (config_.method == Method::saga) {
    const VectorXd t = problem_.rows() * x_;
    for (Index i = 0; i < m; ++i) table_slopes_(i) = problem_.slope_at(i, t(i));
    table_mean_ = problem_.mean_of_slopes(table_slopes_);
    grad_evals_ += m;
  }
  if (config_.method == Method::prox_svrg) inner_p_ = 0;
}

void Solver::external_step(const VectorXd& x, long long evals) {
  if (x.size() != x_.size()) throw std::invalid_argument("external_step: dimension mismatch");
  last_vr_residual_ = std::numeric_limits<double>::quiet_NaN();
  record(nullptr);
  grad_evals_ += evals;
  const ManifoldDescriptor before = manifold_;
  x_ = x;
  ++k_;
  manifold_ = reg_.manifold_at(x_);
  if (!same_manifold(before, manifold_)) trace_.last_change_k = k_;
  if (config_.ref_tol > 0.0 && (x_ - *config_.x_ref).norm() < config_.ref_tol) {
    stopped_ = true;
    trace_.converged = true;
  }
}

void Solver::stop(bool converged) {
  stopped_ = true;
  trace_.converged = trace_.converged || converged;
}

void Solver::mark_event(const std::string& event) {
  if (!pending_event_.empty()) pending_event_ += ';';
  pending_event_ += event;
}

SolverTrace Solver::finish() {
  record(nullptr);
  if (config_.method == Method::prox_svrg && inner_p_ == 0 && k_ > 0 &&
      (trace_.epochs.empty() || trace_.epochs.back().k != k_))
    push_epoch_record();
  trace_.x_final = x_;
  trace_.final_manifold = manifold_;
  trace_.iterations = k_;
  trace_.grad_evals = grad_evals_;
  return std::move(trace_);
}

SolverTrace Solver::run() {
  while (!done()) step();
  return finish();
}

SolverTrace run_method(const FiniteSumProblem& problem, const Regularizer& reg,
                       const SolverConfig& config, const VectorXd& x0) {
  Solver solver(problem, reg, config, x0);
  return solver.run();
}

SolverTrace run_fbs(const FiniteSumProblem& problem, const Regularizer& reg,
                    SolverConfig config, const VectorXd& x0) {
  config.method = Method::fbs;
  return run_method(problem, reg, config, x0);
}

SolverTrace run_prox_sgd(const FiniteSumProblem& problem, const Regularizer& reg,
                         SolverConfig config, const VectorXd& x0) {
  config.method = Method::prox_sgd;
  return run_method(problem, reg, config, x0);
}

SolverTrace run_saga(const FiniteSumProblem& problem, const Regularizer& reg,
                     SolverConfig config, const VectorXd& x0) {
  config.method = Method::saga;
  return run_method(problem, reg, config, x0);
}

SolverTrace run_prox_svrg(const FiniteSumProblem& problem, const Regularizer& reg,
                          SolverConfig config, const VectorXd& x0) {
  config.method = Method::prox_svrg;
  return run_method(problem, reg, config, x0);
}

void write_trace_csv(std::ostream& out, const SolverTrace& trace, Index stride) {
  if (stride < 1) throw std::invalid_argument("write_trace_csv: stride must be >= 1");
  out << "# proxvr-trace v1\n";
  out << "k,phi,dist_to_ref,eps_norm,vr_residual,support_size,grad_evals,epoch,event\n";
  const auto n = static_cast<Index>(trace.records.size());
  for (Index j = 0; j < n; ++j) {
    const auto& r = trace.records[static_cast<std::size_t>(j)];
    // Event rows and the final row are always kept.
    if (j % stride != 0 && r.event.empty() && j != n - 1) continue;
    out << r.k << ',' << format_double(r.phi) << ',' << format_double(r.dist_to_ref) << ','
        << format_double(r.eps_norm) << ',' << format_double(r.vr_residual) << ','
        << r.support_size << ',' << r.grad_evals << ',' << r.epoch << ',' << r.event << '\n';
  }
}

}  // namespace proxvr
