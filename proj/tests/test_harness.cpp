#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "proxvr/harness.hpp"

using namespace proxvr;
using namespace proxvr::test;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("proxvr-test-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("closed-form unitary LASSO") {
    VectorXd b(2);
    b << 2.0, 0.1;
    const VectorXd x = closed_form_unitary_lasso(MatrixXd::Identity(2, 2), b, 0.5);
    CHECK(x(0) == doctest::Approx(1.5));
    CHECK(x(1) == 0.0);
    MatrixXd k(2, 2);
    k << 1.0, 1.0, 0.0, 1.0;
    CHECK_THROWS_AS(closed_form_unitary_lasso(k, b, 0.5), std::invalid_argument);
  }

  TEST_CASE("closed form on the degenerate instance: two nonzeros, FBS fixed point") {
    const ExperimentConfig c = builtin_experiment("fig2-degenerate");
    const Instance inst = generate_instance(c.instance);
    const VectorXd xs = closed_form_unitary_lasso(inst.design, inst.observations, 0.5);
    CHECK(inst.regularizer.manifold_at(xs).support.size() == 2);
    CHECK(fixed_point_residual(inst.problem, inst.regularizer, xs, 0.05) < 1e-12);
    CHECK(fixed_point_residual(inst.problem, inst.regularizer, xs, 1.0) < 1e-12);
  }

  TEST_CASE("reference solution reaches the requested residual") {
    InstanceSpec s;
    s.kind = InstanceKind::lasso_gaussian;
    s.m = 30;
    s.n = 20;
    s.sparsity = 3;
    const Instance inst = generate_instance(s);
    const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer, 1e-13);
    CHECK(ref.residual < 1e-13);
    CHECK(fixed_point_residual(inst.problem, inst.regularizer, ref.x,
                               1.0 / inst.problem.lipschitz_constants().smooth) < 1e-13);
  }

  TEST_CASE("empirical factor of a geometric series") {
    std::vector<std::pair<Index, double>> s;
    for (Index k = 0; k <= 100; ++k) s.emplace_back(k, 3.0 * std::pow(0.9, k));
    CHECK(empirical_factor(s, 0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(empirical_factor(s, 50, 1.0) == doctest::Approx(0.9).epsilon(1e-12));
    // Values at the floor are excluded.
    s.emplace_back(101, 1e-14);
    CHECK(empirical_factor(s, 0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK_THROWS_AS(empirical_factor(s, 99), std::invalid_argument);
  }

  TEST_CASE("rate summary flags a run that matches rho(M_FB)") {
    InstanceSpec s;
    s.kind = InstanceKind::lasso_gaussian;
    s.m = 40;
    s.n = 20;
    s.sparsity = 4;
    s.seed = 3;
    const Instance inst = generate_instance(s);
    const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
    SolverConfig c;
    c.method = Method::fbs;
    c.gamma = 1.0 / inst.problem.lipschitz_constants().smooth;
    c.max_iters = 20000;
    c.ref_tol = 1e-11;
    c.x_ref = ref.x;
    const SolverTrace t = run_fbs(inst.problem, inst.regularizer, c, VectorXd::Zero(20));
    const auto rows = summarize_rates(inst.problem, inst.regularizer, ref.x, {{"fbs", &t, c.gamma, 1}});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].matches_mfb);
    CHECK(rows[0].within_theory);
    CHECK_FALSE(rows[0].slower_than_mfb);
    std::ostringstream out;
    write_rate_table(out, rows);
    CHECK(out.str().rfind("solver,", 0) == 0);
  }

  TEST_CASE("config parsing") {
    std::istringstream in(R"(
# comment
[experiment]
name = demo
seeds = 1, 2,3
stride = 7

[instance]
kind = lasso-gaussian
m = 30
n = 20
sparsity = 3

[reference]
policy = fbs
tol = 1e-12

[solver.a]
method = saga
gamma_over_L = 0.5
epochs = 10

[solver.b]
method = prox-svrg
option = II
P_over_m = 1
epochs = 9
x0 = ones

[solver.c]
method = saga
switch = newton
local_grad_tol = 1e-12

[analysis]
local_regime = true
)");
    const ExperimentConfig c = parse_experiment_config(in);
    CHECK(c.name == "demo");
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.stride == 7);
    CHECK(c.instance.m == 30);
    CHECK(c.reference_tol == 1e-12);
    REQUIRE(c.solvers.size() == 3);
    CHECK(c.solvers[0].name == "a");
    CHECK(c.solvers[0].gamma_over_L == 0.5);
    CHECK(c.solvers[1].config.method == Method::prox_svrg);
    CHECK(c.solvers[1].config.svrg_option == SvrgOption::II);
    CHECK(c.solvers[1].x0 == "ones");
    CHECK(c.solvers[2].policy.rule == SwitchRule::newton);
    CHECK(c.local_regime);
    CHECK(c.certify);
  }

  TEST_CASE("config errors") {
    auto parse = [](const std::string& text) {
      std::istringstream in(text);
      return parse_experiment_config(in);
    };
    const std::string base = "[experiment]\nname = t\n[instance]\nkind = lasso-gaussian\nm = 10\nn = 8\nsparsity = 2\n";
    CHECK_NOTHROW(parse(base + "[solver.a]\nmethod = saga\n"));
    CHECK_THROWS_AS(parse(base + "[solver.a]\nmethod = saga\nbogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse(base + "[nonsense]\nx = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse(base + "[solver.a]\nmethod = saga\ngamma = abc\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse(base + "[solver.a]\nmethod = saga\nswitch = riemannian-cg\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse(base + "[reference]\npolicy = closed-form\n[solver.a]\nmethod = fbs\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse(base), std::invalid_argument);  // no solvers
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/x.ini"), IoError);
    CHECK_THROWS_AS(builtin_experiment("fig9"), std::invalid_argument);
  }

  TEST_CASE("built-in experiments validate") {
    const auto names = builtin_experiments();
    CHECK(names.size() == 6);
    for (const auto& n : names) {
      const ExperimentConfig c = builtin_experiment(n);
      CHECK(c.name == n);
      CHECK_NOTHROW(c.validate());
    }
  }

  TEST_CASE("named initial points") {
    const ExperimentConfig c = builtin_experiment("fig2-degenerate");
    const Instance inst = generate_instance(c.instance);
    const VectorXd xs = closed_form_unitary_lasso(inst.design, inst.observations, 0.5);
    const VectorXd c0 = inst.design.transpose() * inst.observations;
    CHECK(initial_point(inst, xs, "unitary-1") == c0);
    const VectorXd p2 = initial_point(inst, xs, "unitary-2");
    for (Index i = 0; i < 16; ++i) CHECK(p2(i) == (i % 2 ? -c0(i) : c0(i)));
    CHECK(initial_point(inst, xs, "unitary-3") == VectorXd::Zero(16));
    CHECK(initial_point(inst, xs, "reference") == xs);
    CHECK(initial_point(inst, xs, "truth-x10") == 10.0 * inst.truth);
    CHECK(initial_point(inst, xs, "mu-axis")(0) == 0.5);
    CHECK_THROWS_AS(initial_point(inst, xs, "elsewhere"), std::invalid_argument);
    InstanceSpec g;
    g.kind = InstanceKind::lasso_gaussian;
    g.m = 10;
    g.n = 8;
    g.sparsity = 2;
    CHECK_THROWS_AS(initial_point(generate_instance(g), VectorXd::Zero(8), "unitary-1"),
                    std::invalid_argument);
  }

  TEST_CASE("degenerate experiment: three starting points, three final supports") {
    ExperimentConfig c = builtin_experiment("fig2-degenerate");
    c.output = scratch_dir("fig2");
    const ExperimentResult r = run_experiment(c);
    CHECK(r.failures.empty());
    CHECK(std::stoi(r.summary.at("fbs-point-1_seed1.final_support")) == 11);
    const int mid = std::stoi(r.summary.at("fbs-point-2_seed1.final_support"));
    CHECK(mid >= 2);
    CHECK(mid <= 11);
    CHECK(std::stoi(r.summary.at("fbs-point-3_seed1.final_support")) == 2);
    CHECK(std::filesystem::exists(c.output / "fbs-point-1_seed1.csv"));
    CHECK(std::filesystem::exists(c.output / "summary.txt"));
    std::filesystem::remove_all(c.output);
  }

  TEST_CASE("a missing reference file is an I/O error") {
    std::istringstream in(R"(
[experiment]
name = failing
[instance]
kind = lasso-gaussian
m = 20
n = 10
sparsity = 2
[reference]
policy = file
path = /nonexistent/ref.txt
[solver.a]
method = saga
)");
    ExperimentConfig c = parse_experiment_config(in);
    c.output = scratch_dir("failing");
    CHECK_THROWS_AS(run_experiment(c), IoError);
    std::filesystem::remove_all(c.output);
  }
}
