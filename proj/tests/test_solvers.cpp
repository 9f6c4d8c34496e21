#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "proxvr/harness.hpp"
#include "proxvr/solvers.hpp"

using namespace proxvr;
using namespace proxvr::test;

namespace {

Instance desk_lasso(std::uint64_t seed = 1) {
  InstanceSpec s;
  s.kind = InstanceKind::lasso_gaussian;
  s.m = 24;
  s.n = 12;
  s.sparsity = 3;
  s.seed = seed;
  return generate_instance(s);
}

}  // namespace

TEST_SUITE("solvers") {
  TEST_CASE("fb_step in the dead zone returns zero") {
    const Regularizer r = Regularizer::l1(1.0, 3);
    VectorXd x(3);
    x << 0.1, -0.2, 0.05;
    CHECK(fb_step(x, 0.5, VectorXd::Zero(3), r).norm() == 0.0);
  }

  TEST_CASE("closed-form unitary solution is an FBS fixed point") {
    InstanceSpec s;
    s.kind = InstanceKind::lasso_unitary;
    s.n = 16;
    s.saturated = 9;
    s.mu = 0.5;
    const Instance inst = generate_instance(s);
    const VectorXd xs = closed_form_unitary_lasso(inst.design, inst.observations, 0.5);
    for (double gamma : {0.05, 0.5, 1.0})
      CHECK((fb_step(xs, gamma, inst.problem.grad_full(xs), inst.regularizer) - xs).norm() < 1e-12);
  }

  TEST_CASE("FBS on a strongly convex quadratic contracts by 1 - gamma alpha") {
    const MatrixXd K = gaussian(20, 5, 3);
    const FiniteSumProblem p = FiniteSumProblem::least_squares(K, gaussian(20, 4));
    const Regularizer r = Regularizer::l1(0.05, 5);
    const Eigen::SelfAdjointEigenSolver<MatrixXd> es(K.transpose() * K / 20.0);
    const double alpha = es.eigenvalues()(0), gamma = 1.0 / es.eigenvalues()(4);
    SolverConfig c;
    c.method = Method::fbs;
    c.gamma = gamma;
    c.max_iters = 20000;
    const VectorXd xs = run_fbs(p, r, c, VectorXd::Zero(5)).x_final;
    REQUIRE(fixed_point_residual(p, r, xs, gamma) < 1e-13);
    c.max_iters = 50;
    c.x_ref = xs;
    const SolverTrace t = run_fbs(p, r, c, VectorXd::Zero(5));
    for (std::size_t i = 1; i < t.records.size(); ++i)
      CHECK(t.records[i].dist_to_ref <= (1.0 - gamma * alpha) * t.records[i - 1].dist_to_ref * (1 + 1e-12) + 1e-15);
  }

  TEST_CASE("FBS decreases the objective monotonically") {
    const Instance inst = desk_lasso();
    SolverConfig c;
    c.method = Method::fbs;
    c.gamma = 0.99 / inst.problem.lipschitz_constants().smooth;
    c.max_iters = 200;
    const SolverTrace t = run_fbs(inst.problem, inst.regularizer, c, VectorXd::Ones(12));
    for (std::size_t i = 1; i < t.records.size(); ++i)
      CHECK(t.records[i].phi <= t.records[i - 1].phi + 1e-14 * std::abs(t.records[i - 1].phi));
  }

  TEST_CASE("first Prox-SGD step on the three-dimensional example leaves the manifold in 2 of 3 outcomes") {
    const Instance inst = sgd_counterexample();
    const double mu = inst.regularizer.mu();
    VectorXd x0 = VectorXd::Zero(3);
    x0(0) = mu;
    const double gamma = 1.0 / inst.problem.lipschitz_constants().max;
    int two = 0;
    for (Index i = 0; i < 3; ++i) {
      const VectorXd x1 = fb_step(x0, gamma, inst.problem.grad_component(i, x0), inst.regularizer);
      if (inst.regularizer.manifold_at(x1).support.size() == 2) ++two;
    }
    CHECK(two == 2);
  }

  TEST_CASE("stochastic error dominates the gradient near the three-dimensional solution") {
    const Instance inst = sgd_counterexample();
    VectorXd x = inst.truth;
    x(0) += 1e-3;
    const VectorXd g = inst.problem.grad_full(x);
    for (Index i = 0; i < 3; ++i)
      CHECK((inst.problem.grad_component(i, x) - g).norm() >= g.norm());
  }

  TEST_CASE("debiasing identities by enumeration") {
    const Instance inst = desk_lasso(2);
    const FiniteSumProblem& p = inst.problem;
    for (std::uint64_t s = 1; s <= 10; ++s) {
      const VectorXd x = gaussian(12, 10 * s), anchor = gaussian(12, 10 * s + 1);
      const VectorXd slopes = gaussian(p.m(), 10 * s + 2);
      const VectorXd mean = p.mean_of_slopes(slopes);
      const VectorXd g = p.grad_full(x);
      VectorXd saga = VectorXd::Zero(12), svrg = VectorXd::Zero(12);
      for (Index i = 0; i < p.m(); ++i) {
        saga += saga_estimate(p, i, x, slopes, mean);
        svrg += svrg_estimate(p, i, x, anchor, p.grad_full(anchor));
      }
      CHECK((saga / p.m() - g).norm() <= 1e-12 * (1.0 + g.norm()));
      CHECK((svrg / p.m() - g).norm() <= 1e-12 * (1.0 + g.norm()));
    }
  }

  TEST_CASE("single atom: SAGA and Prox-SGD reduce to FBS") {
    const FiniteSumProblem p = FiniteSumProblem::least_squares(gaussian(1, 4, 5), gaussian(1, 6));
    const Regularizer r = Regularizer::l1(0.1, 4);
    const VectorXd x0 = gaussian(4, 7);
    SolverConfig c;
    c.gamma = 0.5 / p.lipschitz_constants().max;
    c.max_iters = 30;
    c.method = Method::fbs;
    const SolverTrace f = run_fbs(p, r, c, x0);
    c.method = Method::saga;
    CHECK((run_saga(p, r, c, x0).x_final - f.x_final).norm() < 1e-14);
    c.method = Method::prox_sgd;
    const SolverTrace sgd = run_prox_sgd(p, r, c, x0);
    VectorXd x = x0;
    for (Index k = 0; k < 30; ++k)
      x = fb_step(x, c.gamma / std::pow(1.0 + k, c.sgd_decay), p.grad_full(x), r);
    CHECK((sgd.x_final - x).norm() < 1e-14);
  }

  TEST_CASE("Prox-SVRG with P = 1: the expected step is the FBS step") {
    const Instance inst = desk_lasso(3);
    SolverConfig c;
    c.method = Method::prox_svrg;
    c.svrg_P = 1;
    c.gamma = 1.0 / (3.0 * inst.problem.lipschitz_constants().max);
    const VectorXd x0 = gaussian(12, 8);
    Solver s(inst.problem, inst.regularizer, c, x0);
    VectorXd mean = VectorXd::Zero(12);
    const VectorXd g = inst.problem.grad_full(x0);
    for (Index i = 0; i < inst.problem.m(); ++i)
      mean += x0 - c.gamma * svrg_estimate(inst.problem, i, x0, x0, g);
    mean /= inst.problem.m();
    CHECK((mean - (x0 - c.gamma * g)).norm() < 1e-14);
  }

  TEST_CASE("gradient-evaluation accounting") {
    const Instance inst = desk_lasso(4);
    const Index m = inst.problem.m();
    SolverConfig c;
    c.max_iters = 4 * m;
    c.method = Method::saga;
    const SolverTrace saga = run_saga(inst.problem, inst.regularizer, c, VectorXd::Zero(12));
    CHECK(saga.grad_evals == m + 4 * m);
    c.method = Method::prox_svrg;
    c.svrg_P = m;
    const SolverTrace svrg = run_prox_svrg(inst.problem, inst.regularizer, c, VectorXd::Zero(12));
    CHECK(svrg.grad_evals == 4 * (m + 2 * m));
    CHECK(static_cast<double>(svrg.grad_evals) / saga.grad_evals == doctest::Approx(3.0).epsilon(0.25));
    c.method = Method::prox_sgd;
    CHECK(run_prox_sgd(inst.problem, inst.regularizer, c, VectorXd::Zero(12)).grad_evals == 4 * m);
    c.method = Method::fbs;
    c.max_iters = 5;
    CHECK(run_fbs(inst.problem, inst.regularizer, c, VectorXd::Zero(12)).grad_evals == 5 * m);
  }

  TEST_CASE("seeded runs are exactly reproducible") {
    const Instance inst = desk_lasso(5);
    for (Method m : {Method::prox_sgd, Method::saga, Method::prox_svrg}) {
      SolverConfig c;
      c.method = m;
      c.max_iters = 500;
      c.seed = 9;
      const SolverTrace a = run_method(inst.problem, inst.regularizer, c, VectorXd::Zero(12));
      const SolverTrace b = run_method(inst.problem, inst.regularizer, c, VectorXd::Zero(12));
      CHECK(a.x_final == b.x_final);
      std::ostringstream ca, cb;
      write_trace_csv(ca, a);
      write_trace_csv(cb, b);
      CHECK(ca.str() == cb.str());
    }
  }

  TEST_CASE("trace CSV schema") {
    const Instance inst = desk_lasso(6);
    SolverConfig c;
    c.method = Method::saga;
    c.max_iters = 100;
    c.x_ref = VectorXd::Zero(12);
    const SolverTrace t = run_saga(inst.problem, inst.regularizer, c, VectorXd::Zero(12));
    std::ostringstream out;
    write_trace_csv(out, t, 10);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "# proxvr-trace v1");
    std::getline(in, line);
    CHECK(line == "k,phi,dist_to_ref,eps_norm,vr_residual,support_size,grad_evals,epoch,event");
    Index rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 11);
  }

  TEST_CASE("invalid configurations are rejected") {
    SolverConfig c;
    c.gamma = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    SolverConfig d;
    d.method = Method::prox_sgd;
    d.sgd_decay = 0.3;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    SolverConfig e;
    e.ref_tol = 1e-6;
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    CHECK_THROWS_AS(method_from_string("sgd2"), std::invalid_argument);
  }
}
