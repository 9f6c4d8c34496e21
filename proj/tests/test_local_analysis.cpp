#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "proxvr/harness.hpp"
#include "proxvr/instances.hpp"
#include "proxvr/local_analysis.hpp"

using namespace proxvr;
using namespace proxvr::test;

namespace {

// F = 0.5 |Kx - b|^2 with K = diag(1, sqrt 2), written as two atoms averaged.
FiniteSumProblem diagonal_toy() {
  MatrixXd rows(2, 2);
  rows << std::sqrt(2.0), 0.0, 0.0, 2.0;
  VectorXd b(2);
  b << 10.0 * std::sqrt(2.0), 20.0;
  return FiniteSumProblem::least_squares(rows, b);
}

Instance desk_lasso(std::uint64_t seed) {
  InstanceSpec s;
  s.kind = InstanceKind::lasso_gaussian;
  s.m = 40;
  s.n = 20;
  s.sparsity = 4;
  s.seed = seed;
  return generate_instance(s);
}

}  // namespace

TEST_SUITE("local_analysis") {
  TEST_CASE("identity Hessian gives alpha = 1") {
    InstanceSpec s;
    s.kind = InstanceKind::lasso_unitary;
    s.n = 16;
    s.saturated = 9;
    s.mu = 0.5;
    const Instance inst = generate_instance(s);
    const VectorXd xs = closed_form_unitary_lasso(inst.design, inst.observations, 0.5);
    const AlphaResult a = restricted_alpha(inst.problem, inst.regularizer, xs);
    CHECK(a.tangent_dim == 2);
    CHECK(a.alpha == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.ri_holds);
  }

  TEST_CASE("trivial tangent space: alpha is +inf") {
    const Instance inst = desk_lasso(1);
    const AlphaResult a = restricted_alpha(inst.problem, inst.regularizer, VectorXd::Zero(20));
    CHECK(a.tangent_dim == 0);
    CHECK(std::isinf(a.alpha));
    CHECK(a.ri_holds);
  }

  TEST_CASE("rank-deficient Hessian on the tangent space fails RI") {
    MatrixXd rows(1, 2);
    rows << 1.0, 1.0;
    const FiniteSumProblem p = FiniteSumProblem::least_squares(rows, VectorXd::Constant(1, 5.0));
    const Regularizer r = Regularizer::l1(0.1, 2);
    VectorXd x(2);
    x << 1.0, 2.0;
    const AlphaResult a = restricted_alpha(p, r, x);
    CHECK_FALSE(a.ri_holds);
    CHECK(std::abs(a.alpha) < 1e-10);
  }

  TEST_CASE("alpha does not depend on the tangent basis") {
    const Instance inst = desk_lasso(2);
    const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
    const ManifoldDescriptor d = inst.regularizer.manifold_at(ref.x);
    const MatrixXd B = inst.regularizer.tangent_basis(d);
    REQUIRE(B.cols() > 1);
    const MatrixXd Q = gaussian(B.cols(), B.cols(), 5).householderQr().householderQ();
    const MatrixXd B2 = B * Q;
    const double a1 = restricted_alpha(inst.problem, inst.regularizer, ref.x).alpha;
    const double a2 = restricted_alpha(inst.problem, inst.regularizer, ref.x, 1e-10, &B2).alpha;
    CHECK(std::abs(a1 - a2) < 1e-10);
  }

  TEST_CASE("diagonal toy: M_FB = diag(0.9, 0.8)") {
    const FiniteSumProblem p = diagonal_toy();
    const Regularizer r = Regularizer::l1(0.01, 2);
    const ReferenceSolution ref = reference_solution(p, r);
    const auto mfb = build_mfb(p, r, ref.x, 0.1);
    REQUIRE(mfb);
    const MatrixXd lifted = mfb->lifted();
    MatrixXd expect(2, 2);
    expect << 0.9, 0.0, 0.0, 0.8;
    CHECK((lifted - expect).norm() < 1e-12);
    CHECK(spectral_radius(mfb->matrix) == doctest::Approx(0.9).epsilon(1e-12));
  }

  TEST_CASE("polyhedral rho(M_FB) = 1 - gamma alpha, inside (0, 1)") {
    for (std::uint64_t seed : {3, 4, 5}) {
      const Instance inst = desk_lasso(seed);
      const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
      const double L = inst.problem.lipschitz_constants().max;
      for (double gamma : {0.5 / L, 1.0 / (3.0 * L)}) {
        const LocalCertificate c = certify(inst.problem, inst.regularizer, ref.x, gamma, inst.problem.m());
        REQUIRE(c.ri_holds);
        CHECK(c.rho_mfb > 0.0);
        CHECK(c.rho_mfb < 1.0);
        CHECK(c.rho_mfb == doctest::Approx(1.0 - gamma * c.alpha).epsilon(1e-12));
        CHECK(c.rho_mfb <= c.rates.rho_fb + 1e-15);
      }
    }
  }

  TEST_CASE("nuclear manifolds have no M_FB") {
    InstanceSpec s;
    s.kind = InstanceKind::low_rank;
    s.m = 40;
    s.n = 16;
    s.rank = 1;
    const Instance inst = generate_instance(s);
    CHECK_FALSE(build_mfb(inst.problem, inst.regularizer, inst.truth, 0.1).has_value());
  }

  TEST_CASE("spectral radius") {
    CHECK(spectral_radius(MatrixXd::Identity(4, 4)) == doctest::Approx(1.0));
    MatrixXd d = MatrixXd::Zero(2, 2);
    d.diagonal() << 0.9, 0.8;
    CHECK(spectral_radius(d) == doctest::Approx(0.9));
    const MatrixXd g = gaussian(8, 8, 11);
    const MatrixXd s = g * g.transpose();
    CHECK(std::abs(spectral_radius(s) - power_iteration(s, 20000)) < 1e-8);
    MatrixXd rot(2, 2);
    rot << 0.0, -0.5, 0.5, 0.0;  // eigenvalues +-0.5i
    CHECK(spectral_radius(rot) == doctest::Approx(0.5));
  }

  TEST_CASE("rate formulas") {
    RateInputs in;
    in.alpha = 0.0156;
    in.L = 1188.0;
    in.m = 1024;
    SUBCASE("rho_fb at the SAGA and SVRG steps") {
      in.gamma = 1.0 / (2.0 * 1188.0);
      CHECK(std::abs(theoretical_rates(in).rho_fb - 0.999993) < 1e-6);
      in.gamma = 1.0 / (3.0 * 1188.0);
      CHECK(std::abs(theoretical_rates(in).rho_fb - 0.999995) < 1e-6);
    }
    SUBCASE("large-P SVRG approximation") {
      in.alpha = 0.0032;
      in.L = 0.224;  // P = 100 L / alpha = 7000 exactly
      in.gamma = 1.0 / (10.0 * in.L);
      in.P = static_cast<Index>(std::llround(100.0 * in.L / in.alpha));
      const double rho = theoretical_rates(in).rho_svrg_largeP;
      CHECK(std::abs(rho - 5.0 / 6.0) < 1e-6);
      const double exact = 1.0 / (in.alpha * in.gamma * 0.6 * in.P) + 0.4 / 0.6;
      CHECK(rho == doctest::Approx(exact).epsilon(1e-14));
    }
    SUBCASE("SAGA rate") {
      in.alpha = 0.0032;
      in.L = 0.2239;
      in.m = 256;
      in.gamma = 1e-3;
      const double expect = 1.0 - std::min(1.0 / 1024.0, 0.0032 / (3.0 * 0.2239));
      CHECK(theoretical_rates(in).rho_saga == doctest::Approx(expect).epsilon(1e-15));
      CHECK(theoretical_rates(in).saga_contractive);
    }
    SUBCASE("alpha = 0 is non-contractive and not clamped") {
      in.alpha = 0.0;
      in.gamma = 1e-4;
      const RateBundle r = theoretical_rates(in);
      CHECK(r.rho_fb == 1.0);
      CHECK_FALSE(r.fb_contractive);
      CHECK(std::isinf(r.rho_svrg_largeP));
      CHECK_FALSE(r.svrg_largeP_contractive);
    }
    SUBCASE("SVRG bound at large steps exceeds 1") {
      in.gamma = 1.0 / (3.0 * in.L);
      in.P = 10;
      const RateBundle r = theoretical_rates(in);
      CHECK(r.rho_svrg == doctest::Approx(4.0 / 3.0 * 11.0));
      CHECK_FALSE(r.svrg_contractive);
    }
    SUBCASE("pure function of the inputs") {
      in.gamma = 1e-4;
      in.P = 100;
      const RateBundle a = theoretical_rates(in), b = theoretical_rates(in);
      CHECK(a.rho_saga == b.rho_saga);
      CHECK(a.rho_svrg == b.rho_svrg);
    }
  }

  TEST_CASE("quadratic growth with constant alpha / 2 on the manifold") {
    const Instance inst = desk_lasso(6);
    const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
    const LocalCertificate c =
        certify(inst.problem, inst.regularizer, ref.x, 1.0 / inst.problem.lipschitz_constants().max, 1);
    REQUIRE(c.ri_holds);
    CHECK(c.alpha_growth == doctest::Approx(c.alpha / 2.0));
    const MatrixXd B = inst.regularizer.tangent_basis(c.manifold);
    auto phi = [&](const VectorXd& x) {
      return inst.problem.value(x) + inst.regularizer.value(x);
    };
    const double phi_star = phi(ref.x);
    double smallest = ref.x.cwiseAbs().maxCoeff();
    for (Index i : c.manifold.support) smallest = std::min(smallest, std::abs(ref.x(i)));
    for (std::uint64_t s = 1; s <= 50; ++s) {
      VectorXd h = B * gaussian(B.cols(), 100 + s);
      h *= 0.1 * smallest / h.norm();  // stays on the manifold, signs preserved
      const VectorXd x = ref.x + h;
      CHECK(phi(x) - phi_star >= 0.99 * c.alpha_growth * h.squaredNorm());
    }
  }

  TEST_CASE("linearization residual") {
    SUBCASE("exact on the diagonal toy") {
      const FiniteSumProblem p = diagonal_toy();
      const Regularizer r = Regularizer::l1(0.01, 2);
      const ReferenceSolution ref = reference_solution(p, r);
      const auto mfb = build_mfb(p, r, ref.x, 0.1);
      REQUIRE(mfb);
      SolverConfig c;
      c.method = Method::fbs;
      c.gamma = 0.1;
      c.max_iters = 100;
      c.snapshot_stride = 1;
      const SolverTrace t = run_fbs(p, r, c, VectorXd::Ones(2));
      // Exact up to rounding: the absolute residual stays at the level of |x*| eps.
      for (const auto& [k, res] : linearization_residual(t, *mfb, ref.x, 1)) {
        const double d = (t.snapshots[static_cast<std::size_t>(k)].x - ref.x).norm();
        CHECK(res * d < 1e-13);
      }
    }
    SUBCASE("vanishes on a quadratic with l1 once the support is fixed") {
      const Instance inst = desk_lasso(7);
      const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
      const double gamma = 1.0 / inst.problem.lipschitz_constants().smooth;
      const auto mfb = build_mfb(inst.problem, inst.regularizer, ref.x, gamma);
      REQUIRE(mfb);
      SolverConfig c;
      c.method = Method::fbs;
      c.gamma = gamma;
      c.max_iters = 3000;
      c.snapshot_stride = 1;
      const SolverTrace t = run_fbs(inst.problem, inst.regularizer, c, VectorXd::Zero(20));
      Index checked = 0;
      for (const auto& [k, res] : linearization_residual(t, *mfb, ref.x, t.last_change_k)) {
        const double d = (t.snapshots[static_cast<std::size_t>(k)].x - ref.x).norm();
        if (d < 1e-4 && d > 1e-9) {
          CHECK(res < 1e-3);
          ++checked;
        }
      }
      CHECK(checked > 0);
    }
    SUBCASE("zero at the solution and missing snapshots rejected") {
      const FiniteSumProblem p = diagonal_toy();
      const Regularizer r = Regularizer::l1(0.01, 2);
      const ReferenceSolution ref = reference_solution(p, r);
      const auto mfb = build_mfb(p, r, ref.x, 0.1);
      SolverConfig c;
      c.method = Method::fbs;
      c.gamma = 0.1;
      c.max_iters = 3;
      c.snapshot_stride = 1;
      const SolverTrace t = run_fbs(p, r, c, ref.x);
      for (const auto& [k, res] : linearization_residual(t, *mfb, ref.x, 0)) CHECK(res == 0.0);
      c.snapshot_stride = 0;
      CHECK_THROWS_AS(linearization_residual(run_fbs(p, r, c, ref.x), *mfb, ref.x, 0),
                      std::invalid_argument);
    }
  }

  TEST_CASE("certificate report") {
    const Instance inst = desk_lasso(8);
    const ReferenceSolution ref = reference_solution(inst.problem, inst.regularizer);
    const LocalCertificate c = certify(inst.problem, inst.regularizer, ref.x, 0.01, 40, true);
    std::ostringstream out;
    write_certificate(out, c);
    const std::string s = out.str();
    for (const char* key : {"nd_gap=", "ri_holds=", "alpha=", "rho_mfb=", "rho_saga=", "rho_svrg=",
                            "svrg_regime=local"})
      CHECK(s.find(key) != std::string::npos);
  }
}
