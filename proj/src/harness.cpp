#include "proxvr/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "proxvr/format.hpp"

namespace proxvr {

VectorXd closed_form_unitary_lasso(const MatrixXd& K, const VectorXd& b, double mu) {
  if (K.rows() != K.cols() || K.rows() != b.size())
    throw std::invalid_argument("closed_form_unitary_lasso: K must be square and match b");
  const Index n = K.rows();
  if ((K.transpose() * K - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("closed_form_unitary_lasso: K is not unitary");
  const VectorXd c = K.transpose() * b;
  VectorXd x(n);
  for (Index i = 0; i < n; ++i) {
    const double a = std::abs(c(i)) - mu;
    x(i) = a > 0.0 ? std::copysign(a, c(i)) : 0.0;
  }
  return x;
}

double fixed_point_residual(const FiniteSumProblem& problem, const Regularizer& reg,
                            const VectorXd& x, double gamma) {
  return (fb_step(x, gamma, problem.grad_full(x), reg) - x).norm();
}

namespace {

// Local polish on the manifold of x; returns the best point found.
VectorXd polish(const FiniteSumProblem& problem, const Regularizer& reg, const VectorXd& x,
                double gamma, Index& steps) {
  VectorXd best = x;
  double best_res = fixed_point_residual(problem, reg, x, gamma);
  const ManifoldDescriptor desc = reg.manifold_at(x);
  if (reg.kind() == RegularizerKind::nuclear) {
    if (desc.rank == 0) return best;
    CgState state;
    ManifoldDescriptor d = desc;
    VectorXd cur = x;
    for (int t = 0; t < 500; ++t) {
      CgStepResult r = riemannian_cg_step(problem, reg, d, cur, state, 0.0);
      if (r.status != CgStatus::ok) break;
      cur = std::move(r.x);
      d = std::move(r.manifold);
      ++steps;
      const double res = fixed_point_residual(problem, reg, cur, gamma);
      if (res < best_res) {
        best_res = res;
        best = cur;
      }
    }
    return best;
  }
  VectorXd cur = x;
  for (int t = 0; t < 30; ++t) {
    const NewtonResult r = newton_on_manifold(problem, reg, desc, cur);
    if (r.status != NewtonStatus::ok || r.step_norm == 0.0) break;
    cur = r.x;
    ++steps;
    const double res = fixed_point_residual(problem, reg, cur, gamma);
    if (res < best_res) {
      best_res = res;
      best = cur;
    }
  }
  return best;
}

}  // namespace

ReferenceSolution reference_solution(const FiniteSumProblem& problem, const Regularizer& reg,
                                     double tol, Index max_iters, const VectorXd* x0) {
  const double gamma = 1.0 / problem.lipschitz_constants().smooth;
  ReferenceSolution out;
  VectorXd x = x0 ? *x0 : VectorXd::Zero(problem.dim());
  ManifoldDescriptor desc = reg.manifold_at(x);
  Index stable = 0;
  Index last_polish = -1000;
  double res = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < max_iters; ++k) {
    ProxResult next = reg.prox_with_manifold(gamma, x - gamma * problem.grad_full(x));
    res = (next.x - x).norm();
    stable = same_manifold(next.manifold, desc) ? stable + 1 : 0;
    x = std::move(next.x);
    desc = std::move(next.manifold);
    ++out.fbs_iterations;
    if (res < tol) break;
    if (res < 1e-6 && stable >= 20 && k - last_polish >= 200) {
      last_polish = k;
      x = polish(problem, reg, x, gamma, out.polish_steps);
      desc = reg.manifold_at(x);
      res = fixed_point_residual(problem, reg, x, gamma);
      if (res < tol) break;
    }
  }
  out.residual = fixed_point_residual(problem, reg, x, gamma);
  out.x = std::move(x);
  if (!(out.residual < 1e-10))
    throw std::runtime_error("reference_solution: fixed-point residual " +
                             format_double(out.residual) + " is not below 1e-10");
  return out;
}

double empirical_factor(const std::vector<std::pair<Index, double>>& series, Index k_from,
                        double fraction, double floor) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("empirical_factor: fraction must lie in (0, 1]");
  std::vector<std::pair<double, double>> pts;
  for (const auto& [k, d] : series)
    if (k >= k_from && d > floor && std::isfinite(d))
      pts.emplace_back(static_cast<double>(k), std::log(d));
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(pts.size())));
  if (keep < 3) throw std::invalid_argument("empirical_factor: post-identification window too short");
  pts.erase(pts.begin(), pts.end() - static_cast<std::ptrdiff_t>(keep));
  double mk = 0.0, ml = 0.0;
  for (const auto& [k, l] : pts) {
    mk += k;
    ml += l;
  }
  mk /= static_cast<double>(keep);
  ml /= static_cast<double>(keep);
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [k, l] : pts) {
    sxy += (k - mk) * (l - ml);
    sxx += (k - mk) * (k - mk);
  }
  if (sxx == 0.0) throw std::invalid_argument("empirical_factor: degenerate window");
  return std::exp(sxy / sxx);
}

std::vector<RateRow> summarize_rates(const FiniteSumProblem& problem, const Regularizer& reg,
                                     const VectorXd& xref, const std::vector<NamedTrace>& traces,
                                     bool local_regime, double tol, double fraction) {
  std::vector<RateRow> rows;
  for (const NamedTrace& nt : traces) {
    if (!nt.trace) throw std::invalid_argument("summarize_rates: missing trace");
    const SolverTrace& tr = *nt.trace;
    const LocalCertificate cert = certify(problem, reg, xref, nt.gamma, nt.P, local_regime);
    RateRow row;
    row.solver = nt.name;
    row.identified_at = tr.last_change_k;
    row.empirical = empirical_factor(tr.distance_series(), tr.last_change_k, fraction);
    row.rho_mfb = cert.rho_mfb;
    switch (tr.method) {
      case Method::fbs:
        row.theory = cert.rates.rho_fb;
        break;
      case Method::saga:
        row.theory = saga_distance_factor(cert.rates);
        break;
      case Method::prox_svrg:
        row.theory = svrg_distance_factor(cert.rates, nt.P);
        break;
      case Method::prox_sgd:
        row.theory = std::numeric_limits<double>::quiet_NaN();
        break;
    }
    const double le = std::log(row.empirical);
    const double lr = std::log(row.rho_mfb);
    row.matches_mfb = std::isfinite(lr) && std::abs(le - lr) <= tol * std::abs(lr);
    row.slower_than_mfb = std::isfinite(lr) && le > lr + tol * std::abs(lr);
    row.within_theory = std::isfinite(row.theory) && row.theory > 0.0 &&
                        row.empirical <= std::pow(row.theory, 1.0 - tol);
    rows.push_back(row);
  }
  return rows;
}

void write_rate_table(std::ostream& out, const std::vector<RateRow>& rows) {
  out << "solver,empirical,rho_mfb,theory,matches_mfb,slower_than_mfb,within_theory,identified_at\n";
  for (const auto& r : rows)
    out << r.solver << ',' << format_double(r.empirical) << ',' << format_double(r.rho_mfb) << ','
        << format_double(r.theory) << ',' << r.matches_mfb << ',' << r.slower_than_mfb << ','
        << r.within_theory << ',' << r.identified_at << '\n';
}

VectorXd initial_point(const Instance& inst, const VectorXd& xref, const std::string& name) {
  const Index n = inst.problem.dim();
  if (name == "zeros" || name == "unitary-3") return VectorXd::Zero(n);
  if (name == "ones") return VectorXd::Ones(n);
  if (name == "truth") return inst.truth;
  if (name == "truth-x10") return 10.0 * inst.truth;
  if (name == "reference") return xref;
  if (name == "mu-axis") {
    VectorXd x = VectorXd::Zero(n);
    x(0) = inst.regularizer.mu();
    return x;
  }
  if (name == "unitary-1" || name == "unitary-2") {
    if (inst.design.rows() != n || inst.observations.size() != inst.design.rows())
      throw std::invalid_argument("initial point " + name + " needs an instance with its design");
    VectorXd x = inst.design.transpose() * inst.observations;
    if (name == "unitary-2")
      for (Index i = 1; i < n; i += 2) x(i) = -x(i);
    return x;
  }
  throw std::invalid_argument("unknown initial point: " + name);
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("experiment: empty name");
  instance.validate();
  if (solvers.empty()) throw std::invalid_argument("experiment: no solvers");
  if (seeds.empty()) throw std::invalid_argument("experiment: no seeds");
  if (stride < 0) throw std::invalid_argument("experiment: negative stride");
  if (reference == ReferencePolicy::closed_form && instance.kind != InstanceKind::lasso_unitary)
    throw std::invalid_argument("experiment: closed-form reference needs lasso-unitary");
  if (reference == ReferencePolicy::file && reference_path.empty())
    throw std::invalid_argument("experiment: reference policy file needs a path");
  if (!(reference_tol > 0.0)) throw std::invalid_argument("experiment: reference tol must be positive");
  const bool nuclear = instance.kind == InstanceKind::low_rank;
  for (const SolverEntry& e : solvers) {
    if (e.name.empty()) throw std::invalid_argument("experiment: unnamed solver");
    if (std::count_if(solvers.begin(), solvers.end(),
                      [&](const SolverEntry& o) { return o.name == e.name; }) > 1)
      throw std::invalid_argument("experiment: duplicate solver " + e.name);
    if (e.gamma_over_L < 0.0 || e.P_over_m < 0.0 || e.P_condition < 0.0 || e.epochs < 0.0)
      throw std::invalid_argument("solver " + e.name + ": negative scale");
    const SwitchRule r = e.policy.rule;
    if (r == SwitchRule::riemannian_cg && !nuclear)
      throw std::invalid_argument("solver " + e.name + ": riemannian-cg needs a low-rank instance");
    if (r == SwitchRule::newton && nuclear)
      throw std::invalid_argument("solver " + e.name + ": newton needs a linear manifold");
    if (r != SwitchRule::none && e.config.method == Method::fbs)
      throw std::invalid_argument("solver " + e.name + ": switching needs a stochastic method");
    SolverConfig probe = e.config;
    if (probe.max_iters < 1) probe.max_iters = 1;
    // The reference is attached at run time.
    if (!probe.x_ref) probe.x_ref = VectorXd::Zero(1);
    probe.validate();
  }
}

namespace {

using boost::property_tree::ptree;

[[noreturn]] void bad_value(const std::string& section, const std::string& key,
                            const std::string& value) {
  throw std::invalid_argument("[" + section + "] " + key + ": invalid value '" + value + "'");
}

template <class T>
T parse_number(const std::string& section, const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(section, key, value);
  return out;
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(section, key, value);
}

std::vector<std::uint64_t> parse_seeds(const std::string& section, const std::string& value) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(parse_number<std::uint64_t>(section, "seeds", item));
  }
  if (out.empty()) bad_value(section, "seeds", value);
  return out;
}

void parse_experiment_section(const ptree& sec, ExperimentConfig& c) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.data();
    if (key == "name") c.name = v;
    else if (key == "seeds") c.seeds = parse_seeds("experiment", v);
    else if (key == "output") c.output = v;
    else if (key == "stride") c.stride = parse_number<Index>("experiment", key, v);
    else throw std::invalid_argument("[experiment] unknown key " + key);
  }
}

void parse_instance_section(const ptree& sec, InstanceSpec& s) {
  const std::string S = "instance";
  for (const auto& [key, node] : sec) {
    const std::string v = node.data();
    if (key == "kind") s.kind = instance_kind_from_string(v);
    else if (key == "m") s.m = parse_number<Index>(S, key, v);
    else if (key == "n") s.n = parse_number<Index>(S, key, v);
    else if (key == "sparsity") s.sparsity = parse_number<Index>(S, key, v);
    else if (key == "block_size") s.block_size = parse_number<Index>(S, key, v);
    else if (key == "rank") s.rank = parse_number<Index>(S, key, v);
    else if (key == "matrix_rows") s.matrix_rows = parse_number<Index>(S, key, v);
    else if (key == "saturated") s.saturated = parse_number<Index>(S, key, v);
    else if (key == "saturation_margin") s.saturation_margin = parse_number<double>(S, key, v);
    else if (key == "noise") s.noise = parse_number<double>(S, key, v);
    else if (key == "mu") s.mu = parse_number<double>(S, key, v);
    else if (key == "mu_fraction") s.mu_fraction = parse_number<double>(S, key, v);
    else if (key == "entry_scale") s.entry_scale = parse_number<double>(S, key, v);
    else if (key == "intercept") s.intercept = parse_bool(S, key, v);
    else if (key == "seed") s.seed = parse_number<std::uint64_t>(S, key, v);
    else throw std::invalid_argument("[instance] unknown key " + key);
  }
}

void parse_reference_section(const ptree& sec, ExperimentConfig& c) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.data();
    if (key == "policy") {
      if (v == "closed-form") c.reference = ReferencePolicy::closed_form;
      else if (v == "fbs") c.reference = ReferencePolicy::fbs;
      else if (v == "file") c.reference = ReferencePolicy::file;
      else bad_value("reference", key, v);
    } else if (key == "tol") {
      c.reference_tol = parse_number<double>("reference", key, v);
    } else if (key == "path") {
      c.reference_path = v;
    } else {
      throw std::invalid_argument("[reference] unknown key " + key);
    }
  }
}

SolverEntry parse_solver_section(const std::string& name, const ptree& sec) {
  const std::string S = "solver." + name;
  SolverEntry e;
  e.name = name;
  SolverConfig& c = e.config;
  for (const auto& [key, node] : sec) {
    const std::string v = node.data();
    if (key == "method") c.method = method_from_string(v);
    else if (key == "gamma") c.gamma = parse_number<double>(S, key, v);
    else if (key == "gamma_over_L") e.gamma_over_L = parse_number<double>(S, key, v);
    else if (key == "sgd_decay") c.sgd_decay = parse_number<double>(S, key, v);
    else if (key == "option") {
      if (v == "I") c.svrg_option = SvrgOption::I;
      else if (v == "II") c.svrg_option = SvrgOption::II;
      else bad_value(S, key, v);
    }
    else if (key == "P") c.svrg_P = parse_number<Index>(S, key, v);
    else if (key == "P_over_m") e.P_over_m = parse_number<double>(S, key, v);
    else if (key == "P_condition") e.P_condition = parse_number<double>(S, key, v);
    else if (key == "max_iters") c.max_iters = parse_number<Index>(S, key, v);
    else if (key == "epochs") e.epochs = parse_number<double>(S, key, v);
    else if (key == "tol") c.tol = parse_number<double>(S, key, v);
    else if (key == "ref_tol") c.ref_tol = parse_number<double>(S, key, v);
    else if (key == "x0") e.x0 = v;
    else if (key == "switch") e.policy.rule = switch_rule_from_string(v);
    else if (key == "window") e.policy.window = parse_number<Index>(S, key, v);
    else if (key == "local_grad_tol") e.policy.local_grad_tol = parse_number<double>(S, key, v);
    else if (key == "max_local_steps") e.policy.max_local_steps = parse_number<Index>(S, key, v);
    else if (key == "max_fallbacks") e.policy.max_fallbacks = parse_number<Index>(S, key, v);
    else throw std::invalid_argument("[" + S + "] unknown key " + key);
  }
  return e;
}

void parse_analysis_section(const ptree& sec, ExperimentConfig& c) {
  for (const auto& [key, node] : sec) {
    const std::string v = node.data();
    if (key == "certify") c.certify = parse_bool("analysis", key, v);
    else if (key == "local_regime") c.local_regime = parse_bool("analysis", key, v);
    else throw std::invalid_argument("[analysis] unknown key " + key);
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(std::istream& in) {
  ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, node] : tree) {
    if (node.empty() && !node.data().empty())
      throw std::invalid_argument("config: key " + section + " outside a section");
    if (section == "experiment") parse_experiment_section(node, c);
    else if (section == "instance") parse_instance_section(node, c.instance);
    else if (section == "reference") parse_reference_section(node, c);
    else if (section == "analysis") parse_analysis_section(node, c);
    else if (section.rfind("solver.", 0) == 0)
      c.solvers.push_back(parse_solver_section(section.substr(7), node));
    else throw std::invalid_argument("config: unknown section [" + section + "]");
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_experiment_config(in);
}

namespace {

SolverEntry entry(const std::string& name, Method method, double gamma_over_L, double epochs) {
  SolverEntry e;
  e.name = name;
  e.config.method = method;
  e.gamma_over_L = gamma_over_L;
  e.epochs = epochs;
  return e;
}

ExperimentConfig fig1() {
  ExperimentConfig c;
  c.name = "fig1-sgd-noiden";
  c.instance.kind = InstanceKind::sgd_counterexample;
  SolverEntry fbs = entry("fbs", Method::fbs, 0.0, 0.0);
  fbs.config.max_iters = 1000;
  fbs.x0 = "ones";
  SolverEntry sgd1 = entry("prox-sgd-1", Method::prox_sgd, 0.0, 0.0);
  sgd1.config.max_iters = 1000000;
  sgd1.x0 = "ones";
  SolverEntry sgd2 = sgd1;
  sgd2.name = "prox-sgd-2";
  sgd2.x0 = "truth-x10";
  c.solvers = {fbs, sgd1, sgd2};
  c.certify = false;
  return c;
}

ExperimentConfig fig2() {
  ExperimentConfig c;
  c.name = "fig2-degenerate";
  c.instance.kind = InstanceKind::lasso_unitary;
  c.instance.n = 16;
  c.instance.sparsity = 2;
  c.instance.saturated = 9;
  c.instance.mu = 0.5;
  c.reference = ReferencePolicy::closed_form;
  for (int p = 1; p <= 3; ++p) {
    SolverEntry e = entry("fbs-point-" + std::to_string(p), Method::fbs, 0.0, 0.0);
    e.config.gamma = 0.05;
    e.config.max_iters = 5000;
    e.config.ref_tol = 1e-10;
    e.x0 = "unitary-" + std::to_string(p);
    c.solvers.push_back(e);
  }
  c.stride = 1;
  c.certify = false;
  return c;
}

ExperimentConfig fig3() {
  ExperimentConfig c;
  c.name = "fig3-overdetermined";
  c.instance.kind = InstanceKind::lasso_overdetermined;
  c.instance.m = 256;
  c.instance.n = 32;
  SolverEntry saga = entry("saga", Method::saga, 1.0 / 3.0, 2000.0);
  saga.config.ref_tol = 1e-12;
  SolverEntry svrg = entry("prox-svrg", Method::prox_svrg, 0.1, 2000.0);
  svrg.config.svrg_option = SvrgOption::II;
  svrg.P_condition = 100.0;
  svrg.config.ref_tol = 1e-12;
  c.solvers = {saga, svrg};
  return c;
}

ExperimentConfig fig4() {
  ExperimentConfig c;
  c.name = "fig4-slr";
  c.instance.kind = InstanceKind::sparse_logistic;
  c.instance.m = 128;
  c.instance.n = 256;
  c.instance.sparsity = 8;
  c.instance.entry_scale = 2.0;
  SolverEntry saga = entry("saga", Method::saga, 0.5, 1000.0);
  saga.config.ref_tol = 1e-11;
  SolverEntry svrg = entry("prox-svrg", Method::prox_svrg, 1.0 / 3.0, 1000.0);
  svrg.P_over_m = 1.0;
  svrg.config.ref_tol = 1e-11;
  SolverEntry adaptive = saga;
  adaptive.name = "saga-adaptive";
  adaptive.policy.rule = SwitchRule::adaptive_step;
  c.solvers = {saga, svrg, adaptive};
  c.local_regime = true;
  return c;
}

ExperimentConfig fig5_group() {
  ExperimentConfig c;
  c.name = "fig5-group-newton";
  c.instance.kind = InstanceKind::group_sparse;
  c.instance.m = 256;
  c.instance.n = 512;
  c.instance.block_size = 4;
  c.instance.sparsity = 8;
  SolverEntry saga = entry("saga", Method::saga, 1.0 / 3.0, 200.0);
  saga.config.ref_tol = 1e-12;
  SolverEntry newton = saga;
  newton.name = "saga-newton";
  newton.policy.rule = SwitchRule::newton;
  newton.policy.local_grad_tol = 1e-13;
  c.solvers = {saga, newton};
  return c;
}

ExperimentConfig fig5_lowrank() {
  ExperimentConfig c;
  c.name = "fig5-lowrank-cg";
  c.instance.kind = InstanceKind::low_rank;
  c.instance.m = 256;
  c.instance.n = 1024;
  c.instance.rank = 2;
  c.instance.mu_fraction = 0.3;
  SolverEntry saga = entry("saga", Method::saga, 1.0 / 3.0, 400.0);
  saga.config.ref_tol = 1e-12;
  SolverEntry cg = saga;
  cg.name = "saga-cg";
  cg.policy.rule = SwitchRule::riemannian_cg;
  cg.policy.local_grad_tol = 1e-13;
  c.solvers = {saga, cg};
  return c;
}

}  // namespace

std::vector<std::string> builtin_experiments() {
  return {"fig1-sgd-noiden",   "fig2-degenerate",   "fig3-overdetermined",
          "fig4-slr",          "fig5-group-newton", "fig5-lowrank-cg"};
}

ExperimentConfig builtin_experiment(const std::string& name) {
  ExperimentConfig c;
  if (name == "fig1-sgd-noiden") c = fig1();
  else if (name == "fig2-degenerate") c = fig2();
  else if (name == "fig3-overdetermined") c = fig3();
  else if (name == "fig4-slr") c = fig4();
  else if (name == "fig5-group-newton") c = fig5_group();
  else if (name == "fig5-lowrank-cg") c = fig5_lowrank();
  else throw std::invalid_argument("unknown experiment: " + name);
  c.output = std::filesystem::path("out") / name;
  c.validate();
  return c;
}

namespace {

VectorXd read_vector(const std::filesystem::path& path, Index n) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reference " + path.string());
  std::vector<double> values;
  std::string tok;
  while (in >> tok) values.push_back(parse_number<double>("reference", "path", tok));
  if (static_cast<Index>(values.size()) != n)
    throw IoError("reference " + path.string() + " has " +
                             std::to_string(values.size()) + " entries, expected " +
                             std::to_string(n));
  return Eigen::Map<const VectorXd>(values.data(), n);
}

struct ResolvedSolver {
  SolverConfig config;
  Index P = 1;
};

ResolvedSolver resolve(const SolverEntry& e, const Instance& inst,
                       const std::optional<LocalCertificate>& probe) {
  const FiniteSumProblem& p = inst.problem;
  const double L = p.lipschitz_constants().max;
  ResolvedSolver r{e.config, 1};
  SolverConfig& c = r.config;
  if (e.gamma_over_L > 0.0) c.gamma = e.gamma_over_L / L;
  if (e.P_over_m > 0.0)
    c.svrg_P = std::max<Index>(1, static_cast<Index>(std::llround(e.P_over_m * p.m())));
  if (e.P_condition > 0.0) {
    if (!probe || !(probe->alpha > 0.0) || !std::isfinite(probe->alpha))
      throw std::runtime_error("solver " + e.name + ": P_condition needs a certified alpha");
    c.svrg_P = std::max<Index>(1, static_cast<Index>(std::ceil(e.P_condition * L / probe->alpha)));
  }
  if (e.epochs > 0.0)
    c.max_iters = std::max<Index>(1, static_cast<Index>(std::llround(e.epochs * p.m())));
  r.P = c.svrg_P > 0 ? c.svrg_P : p.m();
  return r;
}

double default_gamma(const SolverConfig& c, const FiniteSumProblem& p) {
  if (c.gamma > 0.0) return c.gamma;
  const auto lc = p.lipschitz_constants();
  switch (c.method) {
    case Method::fbs:
      return 1.0 / lc.smooth;
    case Method::prox_sgd:
      return 1.0 / lc.max;
    case Method::saga:
    case Method::prox_svrg:
      return 1.0 / (3.0 * lc.max);
  }
  return c.gamma;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  config.validate();
  ExperimentResult result;
  auto& summary = result.summary;
  fs::create_directories(config.output);
  auto open = [&](const std::string& file) {
    const fs::path path = config.output / file;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    result.files.push_back(path.string());
    return out;
  };

  const Instance inst = generate_instance(config.instance);
  const FiniteSumProblem& problem = inst.problem;
  const Regularizer& reg = inst.regularizer;
  VectorXd xref;
  switch (config.reference) {
    case ReferencePolicy::closed_form:
      xref = closed_form_unitary_lasso(inst.design, inst.observations, reg.mu());
      break;
    case ReferencePolicy::fbs:
      xref = reference_solution(problem, reg, config.reference_tol).x;
      break;
    case ReferencePolicy::file:
      xref = read_vector(config.reference_path, problem.dim());
      break;
  }
  const double ref_res =
      fixed_point_residual(problem, reg, xref, 1.0 / problem.lipschitz_constants().smooth);
  if (!(ref_res < 1e-10))
    throw std::runtime_error("reference fails the fixed-point test: residual " +
                             format_double(ref_res));
  summary["reference.residual"] = format_double(ref_res);
  summary["reference.structure"] = std::to_string(reg.manifold_at(xref).size());

  std::ofstream cert_out;
  if (config.certify) cert_out = open("certificate.txt");

  // Traces are kept until the rate table is written.
  struct Run {
    std::string name;
    SolverTrace trace;
    double gamma;
    Index P;
  };
  std::vector<Run> runs;

  for (const SolverEntry& e : config.solvers) {
    std::optional<LocalCertificate> probe;
    ResolvedSolver rs;
    try {
      if (config.certify || e.P_condition > 0.0) {
        SolverConfig base = e.config;
        if (e.gamma_over_L > 0.0) base.gamma = e.gamma_over_L / problem.lipschitz_constants().max;
        const Index P0 = e.P_over_m > 0.0 ? std::max<Index>(1, std::llround(e.P_over_m * problem.m()))
                                          : (base.svrg_P > 0 ? base.svrg_P : problem.m());
        probe = certify(problem, reg, xref, default_gamma(base, problem), P0, config.local_regime);
      }
      rs = resolve(e, inst, probe);
      rs.config.gamma = default_gamma(rs.config, problem);
      if (config.certify) {
        const LocalCertificate cert =
            certify(problem, reg, xref, rs.config.gamma, rs.P, config.local_regime);
        cert_out << "[" << e.name << "]\n";
        write_certificate(cert_out, cert);
        cert_out << '\n';
      }
    } catch (const std::exception& ex) {
      result.failures.push_back(e.name + ": " + ex.what());
      continue;
    }
    rs.config.x_ref = xref;
    const Index stride =
        config.stride > 0 ? config.stride : (rs.config.method == Method::fbs ? 1 : problem.m());
    rs.config.record_stride = stride;

    for (std::uint64_t seed : config.seeds) {
      const std::string run = e.name + "_seed" + std::to_string(seed);
      try {
        SolverConfig cfg = rs.config;
        cfg.seed = seed;
        const VectorXd x0 = initial_point(inst, xref, e.x0);
        SolverTrace trace;
        if (e.policy.rule == SwitchRule::none) {
          trace = run_method(problem, reg, cfg, x0);
        } else {
          HybridTrace h = run_hybrid(problem, reg, cfg, e.policy, x0);
          summary[run + ".switch_k"] = h.switch_k ? std::to_string(*h.switch_k) : "none";
          summary[run + ".fallbacks"] = std::to_string(h.fallbacks);
          summary[run + ".local_steps"] = std::to_string(h.local_steps);
          if (e.policy.rule == SwitchRule::adaptive_step && h.switch_k) {
            summary[run + ".gamma_before"] = format_double(h.gamma_before);
            summary[run + ".gamma_after"] = format_double(h.gamma_after);
          }
          trace = std::move(h.trace);
        }
        auto csv = open(run + ".csv");
        write_trace_csv(csv, trace, 1);

        const TraceRecord& last = trace.records.back();
        summary[run + ".iterations"] = std::to_string(trace.iterations);
        summary[run + ".grad_evals"] = std::to_string(trace.grad_evals);
        summary[run + ".final_dist"] = format_double((trace.x_final - xref).norm());
        summary[run + ".final_support"] = std::to_string(last.support_size);
        summary[run + ".last_change_k"] = std::to_string(trace.last_change_k);
        summary[run + ".converged"] = trace.converged ? "1" : "0";
        // Support sizes over the second half of the recorded rows.
        Index lo = std::numeric_limits<Index>::max(), hi = 0;
        for (std::size_t i = trace.records.size() / 2; i < trace.records.size(); ++i) {
          lo = std::min(lo, trace.records[i].support_size);
          hi = std::max(hi, trace.records[i].support_size);
        }
        summary[run + ".tail_support_min"] = std::to_string(lo);
        summary[run + ".tail_support_max"] = std::to_string(hi);
        runs.push_back({run, std::move(trace), cfg.gamma, rs.P});
      } catch (const std::exception& ex) {
        result.failures.push_back(run + ": " + ex.what());
      }
    }
  }

  if (config.certify) {
    std::vector<RateRow> rows;
    for (const Run& r : runs) {
      try {
        const NamedTrace nt{r.name, &r.trace, r.gamma, r.P};
        const auto one = summarize_rates(problem, reg, xref, {nt}, config.local_regime);
        rows.insert(rows.end(), one.begin(), one.end());
      } catch (const std::exception& ex) {
        result.failures.push_back("rates " + r.name + ": " + ex.what());
      }
    }
    auto out = open("rates.csv");
    write_rate_table(out, rows);
  }

  summary["failures"] = std::to_string(result.failures.size());
  auto out = open("summary.txt");
  out << "experiment=" << config.name << '\n';
  for (const auto& [k, v] : summary) out << k << '=' << v << '\n';
  for (const auto& f : result.failures) out << "failure=" << f << '\n';
  return result;
}

}  // namespace proxvr
