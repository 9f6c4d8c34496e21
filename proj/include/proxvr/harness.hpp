#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxvr/acceleration.hpp"
#include "proxvr/instances.hpp"
#include "proxvr/local_analysis.hpp"
#include "proxvr/solvers.hpp"

namespace proxvr {

/// File could not be opened, read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// x* = sign(K^T b) max(|K^T b| - mu, 0), the minimizer of
/// mu |x|_1 + 0.5 |Kx - b|^2 for orthonormal K.
VectorXd closed_form_unitary_lasso(const MatrixXd& K, const VectorXd& b, double mu);

/// |fb_step(x, gamma, grad F(x)) - x|.
double fixed_point_residual(const FiniteSumProblem& problem, const Regularizer& reg,
                            const VectorXd& x, double gamma);

struct ReferenceSolution {
  VectorXd x;
  double residual = 0.0;  // fixed-point residual at gamma = 1/L_F
  Index fbs_iterations = 0;
  Index polish_steps = 0;
};

/// High-accuracy minimizer: FBS with gamma = 1/L_F until the fixed-point
/// residual is below `tol`, with Newton (l1, group-l12) or Riemannian CG
/// (nuclear) polishing on the identified manifold once the residual is small.
/// Throws std::runtime_error if the final residual is not below 1e-10.
ReferenceSolution reference_solution(const FiniteSumProblem& problem, const Regularizer& reg,
                                     double tol = 1e-13, Index max_iters = 2000000,
                                     const VectorXd* x0 = nullptr);

/// exp of the least-squares slope of ln(dist) against k over the last
/// `fraction` of the points with k >= k_from and dist > floor. Throws
/// std::invalid_argument when fewer than 3 points remain.
double empirical_factor(const std::vector<std::pair<Index, double>>& series, Index k_from,
                        double fraction = 0.5, double floor = 1e-13);

struct RateRow {
  std::string solver;
  double empirical = 0.0;    // per-iteration factor on |x_k - x*|
  double rho_mfb = 0.0;
  double theory = 0.0;       // method's per-iteration distance bound
  bool matches_mfb = false;  // |ln emp - ln rho_mfb| <= tol |ln rho_mfb|
  bool slower_than_mfb = false;
  bool within_theory = false;  // emp <= theory^(1 - tol)
  Index identified_at = 0;
};

struct NamedTrace {
  std::string name;
  const SolverTrace* trace = nullptr;
  double gamma = 0.0;
  Index P = 1;  // Prox-SVRG inner length
};

/// Empirical post-identification factors (from the last manifold change on)
/// against rho(M_FB) and the method bounds, each certified at the trace's own
/// step size. Bounds: rho_fb (fbs), sqrt(rho_saga) (saga), rho_svrg^(1/2P)
/// (prox-svrg), none for prox-sgd.
std::vector<RateRow> summarize_rates(const FiniteSumProblem& problem, const Regularizer& reg,
                                     const VectorXd& xref, const std::vector<NamedTrace>& traces,
                                     bool local_regime = false, double tol = 0.1,
                                     double fraction = 0.5);
void write_rate_table(std::ostream& out, const std::vector<RateRow>& rows);

/// Sectioned key=value configuration (INI syntax, `#` or `;` comments):
///
///   [experiment]  name, seeds (comma list), output, stride
///   [instance]    kind, m, n, sparsity, block_size, rank, matrix_rows,
///                 saturated, saturation_margin, noise, mu, mu_fraction,
///                 entry_scale, intercept, seed
///   [reference]   policy (closed-form | fbs | file), tol, path
///   [solver.NAME] method, gamma, gamma_over_L, sgd_decay, option (I | II),
///                 P, P_over_m, P_condition, max_iters, epochs, tol, ref_tol,
///                 x0, switch, window, local_grad_tol, max_local_steps,
///                 max_fallbacks
///   [analysis]    certify, local_regime
///
/// Solver sections run in file order.
struct SolverEntry {
  std::string name;
  SolverConfig config;
  /// If positive, gamma = gamma_over_L / L (overrides config.gamma).
  double gamma_over_L = 0.0;
  /// If positive, P = P_over_m * m.
  double P_over_m = 0.0;
  /// If positive, P = P_condition * L / alpha with alpha from the certificate.
  double P_condition = 0.0;
  /// If positive, max_iters = epochs * m.
  double epochs = 0.0;
  /// Starting point, see initial_point().
  std::string x0 = "zeros";
  /// rule == none runs the method alone.
  HybridPolicy policy{SwitchRule::none};
};

/// Named starting points:
///   zeros, ones, truth, truth-x10, reference   as named
///   mu-axis                                    mu e_1
///   unitary-1   K^T b (every entry nonzero)
///   unitary-2   K^T b with the sign of every odd-indexed entry flipped
///   unitary-3   zeros
/// The unitary-* points need an instance carrying its design (lasso-unitary,
/// sgd-counterexample). Throws std::invalid_argument otherwise.
VectorXd initial_point(const Instance& inst, const VectorXd& xref, const std::string& name);

enum class ReferencePolicy { closed_form, fbs, file };

struct ExperimentConfig {
  std::string name;
  InstanceSpec instance;
  ReferencePolicy reference = ReferencePolicy::fbs;
  double reference_tol = 1e-13;
  std::string reference_path;
  std::vector<SolverEntry> solvers;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output = "out";
  Index stride = 0;  // CSV row stride; 0 = m
  bool certify = true;
  bool local_regime = false;

  void validate() const;
};

/// Throws std::invalid_argument on unknown sections, keys or values.
ExperimentConfig parse_experiment_config(std::istream& in);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Names of the built-in experiments.
std::vector<std::string> builtin_experiments();
/// Built-in configuration by name; throws std::invalid_argument if unknown.
ExperimentConfig builtin_experiment(const std::string& name);

struct ExperimentResult {
  std::vector<std::string> files;
  std::vector<std::string> failures;
  /// Observations keyed by name, printed as key=value.
  std::map<std::string, std::string> summary;
};

/// Builds the instance, reference and certificate, runs every (solver, seed),
/// and writes per-run trace CSVs, certificate.txt, rates.csv and summary.txt
/// under config.output. Sub-run failures are recorded and do not stop the run.
ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace proxvr
