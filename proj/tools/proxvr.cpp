// Command-line front end: gen, solve, certify, experiment, summarize.
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "proxvr/harness.hpp"

using namespace proxvr;

namespace {

struct GenOptions {
  InstanceSpec spec;
  std::string kind = "lasso-gaussian";
  bool no_intercept = false;
  std::string output;
};

struct SolveOptions {
  std::string instance;
  std::string reference;
  std::string method = "saga";
  double gamma = 0.0;
  double gamma_over_L = 0.0;
  double sgd_decay = 0.6;
  std::string option = "I";
  Index P = 0;
  Index iters = 10000;
  std::uint64_t seed = 1;
  double ref_tol = 0.0;
  Index stride = 0;
  std::string x0 = "zeros";
  std::string switch_rule = "none";
  Index window = 0;
  std::string output;
};

struct CertifyOptions {
  std::string instance;
  std::string reference;
  std::string write_reference;
  double gamma = 0.0;
  double gamma_over_L = 1.0 / 3.0;
  Index P = 0;
  bool local_regime = false;
  std::string output;
};

struct ExperimentOptions {
  std::string target;
  std::string output;
  std::string seeds;
  Index stride = -1;
  bool list = false;
};

struct SummarizeOptions {
  std::vector<std::string> traces;
  double fraction = 0.5;
};

// Writes to the file if given, else to stdout.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write(out);
  if (!out) throw IoError("write failed: " + path);
}

Instance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open instance " + path);
  try {
    return read_instance(in);
  } catch (const std::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

VectorXd load_vector(const std::string& path, Index n) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> v;
  double x = 0.0;
  while (in >> x) v.push_back(x);
  if (!in.eof() || static_cast<Index>(v.size()) != n)
    throw IoError(path + ": expected " + std::to_string(n) + " numbers");
  return Eigen::Map<const VectorXd>(v.data(), n);
}

void write_vector(const std::string& path, const VectorXd& x) {
  emit(path, [&](std::ostream& out) {
    for (Index i = 0; i < x.size(); ++i) out << format_double(x(i)) << '\n';
  });
}

VectorXd reference_for(const Instance& inst, const std::string& path) {
  if (!path.empty()) return load_vector(path, inst.problem.dim());
  if (inst.spec.kind == InstanceKind::lasso_unitary && inst.design.size() > 0)
    return closed_form_unitary_lasso(inst.design, inst.observations, inst.regularizer.mu());
  return reference_solution(inst.problem, inst.regularizer).x;
}

int cmd_gen(GenOptions& o) {
  o.spec.kind = instance_kind_from_string(o.kind);
  o.spec.intercept = !o.no_intercept;
  const Instance inst = generate_instance(o.spec);
  emit(o.output, [&](std::ostream& out) { write_instance(out, inst); });
  return 0;
}

int cmd_solve(const SolveOptions& o) {
  const Instance inst = load_instance(o.instance);
  const FiniteSumProblem& p = inst.problem;
  SolverConfig c;
  c.method = method_from_string(o.method);
  c.gamma = o.gamma_over_L > 0.0 ? o.gamma_over_L / p.lipschitz_constants().max : o.gamma;
  c.sgd_decay = o.sgd_decay;
  if (o.option != "I" && o.option != "II") throw std::invalid_argument("--option must be I or II");
  c.svrg_option = o.option == "I" ? SvrgOption::I : SvrgOption::II;
  c.svrg_P = o.P;
  c.max_iters = o.iters;
  c.seed = o.seed;
  c.ref_tol = o.ref_tol;
  c.record_stride = o.stride > 0 ? o.stride : (c.method == Method::fbs ? 1 : p.m());
  VectorXd xref;
  if (!o.reference.empty() || o.ref_tol > 0.0 || o.x0 == "reference") {
    xref = reference_for(inst, o.reference);
    c.x_ref = xref;
  }
  const VectorXd x0 = initial_point(inst, xref, o.x0);
  HybridPolicy policy;
  policy.rule = switch_rule_from_string(o.switch_rule);
  policy.window = o.window;
  SolverTrace trace;
  if (policy.rule == SwitchRule::none) {
    trace = run_method(p, inst.regularizer, c, x0);
  } else {
    trace = run_hybrid(p, inst.regularizer, c, policy, x0).trace;
  }
  emit(o.output, [&](std::ostream& out) { write_trace_csv(out, trace, 1); });
  std::cerr << "iterations=" << trace.iterations << " grad_evals=" << trace.grad_evals
            << " support=" << trace.final_manifold.size()
            << " last_change_k=" << trace.last_change_k << '\n';
  return 0;
}

int cmd_certify(const CertifyOptions& o) {
  const Instance inst = load_instance(o.instance);
  const FiniteSumProblem& p = inst.problem;
  const VectorXd xref = reference_for(inst, o.reference);
  if (!o.write_reference.empty()) write_vector(o.write_reference, xref);
  const double gamma = o.gamma > 0.0 ? o.gamma : o.gamma_over_L / p.lipschitz_constants().max;
  const Index P = o.P > 0 ? o.P : p.m();
  const LocalCertificate cert = certify(p, inst.regularizer, xref, gamma, P, o.local_regime);
  emit(o.output, [&](std::ostream& out) { write_certificate(out, cert); });
  return 0;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad seed: " + item);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

int cmd_experiment(const ExperimentOptions& o) {
  if (o.list) {
    for (const auto& name : builtin_experiments()) std::cout << name << '\n';
    return 0;
  }
  if (o.target.empty()) throw std::invalid_argument("experiment: give a name or a config file");
  const auto names = builtin_experiments();
  ExperimentConfig c = std::find(names.begin(), names.end(), o.target) != names.end()
                           ? builtin_experiment(o.target)
                           : load_experiment_config(o.target);
  if (!o.output.empty()) c.output = o.output;
  if (!o.seeds.empty()) c.seeds = parse_seed_list(o.seeds);
  if (o.stride >= 0) c.stride = o.stride;
  const ExperimentResult r = run_experiment(c);
  for (const auto& [k, v] : r.summary) std::cout << k << '=' << v << '\n';
  for (const auto& f : r.failures) std::cout << "failure=" << f << '\n';
  std::cout << "output=" << c.output.string() << '\n';
  return 0;
}

// Reads the k, dist_to_ref and support_size columns of a trace CSV.
int cmd_summarize(const SummarizeOptions& o) {
  std::cout << "file,rows,final_dist,final_support,last_support_change_k,empirical_factor\n";
  for (const auto& path : o.traces) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("# proxvr-trace", 0) != 0) throw IoError(path + ": not a trace file");
    std::getline(in, line);
    std::vector<std::string> header;
    {
      std::stringstream hs(line);
      std::string col;
      while (std::getline(hs, col, ',')) header.push_back(col);
    }
    auto column = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw IoError(path + ": missing column " + name);
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ck = column("k"), cd = column("dist_to_ref"), cs = column("support_size");
    std::vector<std::pair<Index, double>> dist;
    Index rows = 0, last_support = -1, change_k = 0, k = 0;
    double final_dist = std::nan("");
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() < header.size() - 1) throw IoError(path + ": short row");
      k = std::stoll(cells[ck]);
      const Index support = std::stoll(cells[cs]);
      const double d = cells[cd] == "nan" ? std::nan("") : std::stod(cells[cd]);
      if (support != last_support) change_k = k;
      last_support = support;
      if (std::isfinite(d)) {
        dist.emplace_back(k, d);
        final_dist = d;
      }
      ++rows;
    }
    double factor = std::nan("");
    try {
      factor = empirical_factor(dist, change_k, o.fraction);
    } catch (const std::invalid_argument&) {
    }
    std::cout << path << ',' << rows << ',' << format_double(final_dist) << ',' << last_support
              << ',' << change_k << ',' << format_double(factor) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proximal variance-reduced stochastic gradient toolkit"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a seeded instance file");
  g->add_option("--kind", gen.kind, "lasso-gaussian | lasso-unitary | lasso-overdetermined | "
                                    "sparse-logistic | group-sparse | low-rank | sgd-counterexample")
      ->capture_default_str();
  g->add_option("-m", gen.spec.m, "Number of atoms");
  g->add_option("-n", gen.spec.n, "Dimension");
  g->add_option("--sparsity", gen.spec.sparsity, "Nonzeros or nonzero blocks");
  g->add_option("--block-size", gen.spec.block_size);
  g->add_option("--rank", gen.spec.rank);
  g->add_option("--matrix-rows", gen.spec.matrix_rows);
  g->add_option("--saturated", gen.spec.saturated);
  g->add_option("--mu", gen.spec.mu);
  g->add_option("--mu-fraction", gen.spec.mu_fraction)->capture_default_str();
  g->add_option("--noise", gen.spec.noise);
  g->add_option("--entry-scale", gen.spec.entry_scale);
  g->add_flag("--no-intercept", gen.no_intercept);
  g->add_option("--seed", gen.spec.seed)->capture_default_str();
  g->add_option("-o,--output", gen.output, "Instance file (default stdout)");

  SolveOptions solve;
  auto* s = app.add_subcommand("solve", "Run one solver and write its trace CSV");
  s->add_option("--instance", solve.instance)->required();
  s->add_option("--reference", solve.reference, "Reference solution file");
  s->add_option("--method", solve.method, "fbs | prox-sgd | saga | prox-svrg")->capture_default_str();
  s->add_option("--gamma", solve.gamma, "Step size (0 = method default)");
  s->add_option("--gamma-over-L", solve.gamma_over_L, "Step size as a multiple of 1/L");
  s->add_option("--sgd-decay", solve.sgd_decay)->capture_default_str();
  s->add_option("--option", solve.option, "Prox-SVRG option I | II")->capture_default_str();
  s->add_option("--P", solve.P, "Prox-SVRG inner length (0 = m)");
  s->add_option("--iters", solve.iters)->capture_default_str();
  s->add_option("--seed", solve.seed)->capture_default_str();
  s->add_option("--ref-tol", solve.ref_tol, "Stop once |x - x*| is below this");
  s->add_option("--stride", solve.stride, "Record every stride iterations (0 = m, 1 for fbs)");
  s->add_option("--x0", solve.x0)->capture_default_str();
  s->add_option("--switch", solve.switch_rule, "none | adaptive-step | newton | riemannian-cg")
      ->capture_default_str();
  s->add_option("--window", solve.window, "Detector window (0 = 2m)");
  s->add_option("-o,--output", solve.output, "Trace CSV (default stdout)");

  CertifyOptions cert;
  auto* c = app.add_subcommand("certify", "Check ND and RI, build M_FB and the rates");
  c->add_option("--instance", cert.instance)->required();
  c->add_option("--reference", cert.reference, "Reference solution file (default: computed)");
  c->add_option("--write-reference", cert.write_reference, "Save the reference used");
  c->add_option("--gamma", cert.gamma);
  c->add_option("--gamma-over-L", cert.gamma_over_L)->capture_default_str();
  c->add_option("--P", cert.P, "Prox-SVRG inner length (0 = m)");
  c->add_flag("--local-regime", cert.local_regime, "Rates with alpha_F = alpha, alpha_R = 0");
  c->add_option("-o,--output", cert.output);

  ExperimentOptions exp;
  auto* e = app.add_subcommand("experiment", "Run a built-in experiment or a config file");
  e->add_option("target", exp.target, "Experiment name or config path");
  e->add_flag("--list", exp.list, "List built-in experiments");
  e->add_option("-o,--output", exp.output, "Output directory");
  e->add_option("--seeds", exp.seeds, "Comma-separated seeds");
  e->add_option("--stride", exp.stride, "CSV row stride (0 = m)");

  SummarizeOptions sum;
  auto* u = app.add_subcommand("summarize", "Empirical factors of trace CSV files");
  u->add_option("traces", sum.traces)->required()->check(CLI::ExistingFile);
  u->add_option("--fraction", sum.fraction)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return cmd_gen(gen);
    if (*s) return cmd_solve(solve);
    if (*c) return cmd_certify(cert);
    if (*e) return cmd_experiment(exp);
    if (*u) return cmd_summarize(sum);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 1;
  } catch (const IoError& ex) {
    std::cerr << "io error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    // Numerical failures are reported but are not configuration errors.
    std::cerr << "failed: " << ex.what() << '\n';
    return 0;
  }
  return 0;
}
