#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "proxvr/problems.hpp"
#include "proxvr/regularizers.hpp"
#include "proxvr/rng.hpp"

namespace proxvr {

enum class Method { fbs, prox_sgd, saga, prox_svrg };
enum class SvrgOption { I, II };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct SolverConfig {
  Method method = Method::saga;
  /// Constant step, or gamma_0 of the Prox-SGD schedule gamma_0 / (1 + k)^decay.
  /// 0 selects the method default: 1/L_F (fbs), 1/(3L) (saga, prox-svrg),
  /// 1/L (prox-sgd).
  double gamma = 0.0;
  double sgd_decay = 0.6;
  SvrgOption svrg_option = SvrgOption::I;
  Index svrg_P = 0;  // 0 = m
  Index max_iters = 1000;
  std::uint64_t seed = 1;
  /// Stop when |x_{k+1} - x_k| / gamma < tol, checked on stride boundaries (0 = off).
  double tol = 0.0;
  /// Stop when |x_k - x_ref| < ref_tol (0 = off; needs x_ref).
  double ref_tol = 0.0;
  std::optional<VectorXd> x_ref;
  /// Exact grad F (for eps_k and Phi) every error_stride steps; 0 = m (1 for fbs).
  Index error_stride = 0;
  /// Trace rows every record_stride steps (k = 0 and the last step always recorded).
  Index record_stride = 1;
  /// Keep x_k every snapshot_stride steps (0 = none).
  Index snapshot_stride = 0;
  /// With snapshots, also store E[x_{k+1} | x_k] by enumerating the m outcomes.
  bool snapshot_conditional_mean = false;

  void validate() const;
};

/// One trace row. NaN marks values not computed at this k.
struct TraceRecord {
  Index k = 0;
  double phi = std::numeric_limits<double>::quiet_NaN();
  double dist_to_ref = std::numeric_limits<double>::quiet_NaN();
  double eps_norm = std::numeric_limits<double>::quiet_NaN();
  /// |g_k - table term|: the estimate minus its control variate, available every step.
  double vr_residual = std::numeric_limits<double>::quiet_NaN();
  Index support_size = 0;
  long long grad_evals = 0;
  Index epoch = 0;
  std::string event;
};

struct Snapshot {
  Index k = 0;
  VectorXd x;
  VectorXd conditional_next;  // empty unless requested
};

/// Outer-loop record of Prox-SVRG, taken at k = l P.
struct EpochRecord {
  Index epoch = 0;
  Index k = 0;
  long long grad_evals = 0;
  VectorXd anchor;            // x~_l
  double phi_anchor = 0.0;    // Phi(x~_l)
  double phi_ergodic = std::numeric_limits<double>::quiet_NaN();  // Phi(mean of x_1..x_k)
};

struct SolverTrace {
  Method method = Method::fbs;
  std::vector<TraceRecord> records;
  std::vector<Snapshot> snapshots;
  std::vector<EpochRecord> epochs;
  VectorXd x_final;
  ManifoldDescriptor final_manifold;
  Index iterations = 0;
  long long grad_evals = 0;
  /// Last iteration at which the manifold of x_k differed from that of x_{k-1}.
  Index last_change_k = 0;
  bool converged = false;

  /// Records with a finite dist_to_ref, as (k, dist) pairs.
  std::vector<std::pair<Index, double>> distance_series() const;
};

/// Shared kernel: prox_{gamma R}(x - gamma g).
VectorXd fb_step(const VectorXd& x, double gamma, const VectorXd& g, const Regularizer& reg);

/// SAGA estimate for sampled atom i: grad f_i(x) - table_i + mean(table), with
/// the table stored as per-atom slopes.
VectorXd saga_estimate(const FiniteSumProblem& problem, Index i, const VectorXd& x,
                       const VectorXd& table_slopes, const VectorXd& table_mean);
/// Prox-SVRG estimate: grad f_i(x) - grad f_i(anchor) + anchor_grad.
VectorXd svrg_estimate(const FiniteSumProblem& problem, Index i, const VectorXd& x,
                       const VectorXd& anchor, const VectorXd& anchor_grad);

/// Steppable perturbed Forward-Backward iteration. The four methods differ only
/// in the gradient estimate fed to fb_step.
class Solver {
 public:
  Solver(const FiniteSumProblem& problem, const Regularizer& reg, SolverConfig config,
         VectorXd x0);

  /// Advance k -> k+1, recording trace rows as configured.
  void step();
  /// Step until max_iters or a stopping rule triggers; returns the trace.
  SolverTrace run();
  bool done() const { return stopped_ || k_ >= config_.max_iters; }

  const VectorXd& x() const { return x_; }
  Index k() const { return k_; }
  const ManifoldDescriptor& manifold() const { return manifold_; }
  double gamma() const;
  void set_gamma(double gamma) { gamma_ = gamma; }
  /// Move to an externally computed point and rebuild estimator state there
  /// (SAGA table, SVRG anchor). Charged to the gradient counter.
  void reset_point(const VectorXd& x);
  /// Move to x_{k+1} = x computed outside the solver (a local acceleration step),
  /// charging `evals` gradient evaluations. Estimator state is left untouched.
  void external_step(const VectorXd& x, long long evals);
  /// Stop the run; done() becomes true.
  void stop(bool converged);
  /// Append an event tag to the trace row of the current iterate.
  void mark_event(const std::string& event);
  long long grad_evals() const { return grad_evals_; }

  SolverTrace& trace() { return trace_; }
  const SolverTrace& trace() const { return trace_; }
  SolverTrace finish();

  const SolverConfig& config() const { return config_; }

  /// Expected next iterate given x_k, by enumeration over the sampled index.
  VectorXd conditional_next() const;

 private:
  VectorXd estimate(Index i);
  Index P() const;
  Index error_stride() const;
  void start_epoch();
  void push_epoch_record();
  void record(const VectorXd* g);

  const FiniteSumProblem& problem_;
  const Regularizer& reg_;
  SolverConfig config_;
  Rng rng_;
  VectorXd x_;
  Index k_ = 0;
  double gamma_ = 0.0;
  long long grad_evals_ = 0;
  ManifoldDescriptor manifold_;
  bool stopped_ = false;
  SolverTrace trace_;
  double last_vr_residual_ = std::numeric_limits<double>::quiet_NaN();
  std::string pending_event_;

  // SAGA table: per-atom slopes and their running mean gradient.
  VectorXd table_slopes_;
  VectorXd table_mean_;
  // Prox-SVRG outer state.
  VectorXd anchor_;
  VectorXd anchor_grad_;
  VectorXd inner_sum_;
  VectorXd ergodic_sum_;
  Index epoch_ = 0;
  Index inner_p_ = 0;
};

SolverTrace run_fbs(const FiniteSumProblem& problem, const Regularizer& reg,
                    SolverConfig config, const VectorXd& x0);
SolverTrace run_prox_sgd(const FiniteSumProblem& problem, const Regularizer& reg,
                         SolverConfig config, const VectorXd& x0);
SolverTrace run_saga(const FiniteSumProblem& problem, const Regularizer& reg,
                     SolverConfig config, const VectorXd& x0);
SolverTrace run_prox_svrg(const FiniteSumProblem& problem, const Regularizer& reg,
                          SolverConfig config, const VectorXd& x0);
SolverTrace run_method(const FiniteSumProblem& problem, const Regularizer& reg,
                       const SolverConfig& config, const VectorXd& x0);

/// CSV export: a `# proxvr-trace v1` line, then the column header
/// k,phi,dist_to_ref,eps_norm,vr_residual,support_size,grad_evals,epoch,event
/// and one row per record every `stride` rows. NaN is written as `nan`.
void write_trace_csv(std::ostream& out, const SolverTrace& trace, Index stride = 1);

}  // namespace proxvr
