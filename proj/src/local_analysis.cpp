#include "proxvr/local_analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "proxvr/format.hpp"

namespace proxvr {

AlphaResult restricted_alpha(const FiniteSumProblem& problem, const Regularizer& reg,
                             const VectorXd& xref, double tol, const MatrixXd* basis) {
  if (xref.size() != problem.dim() || reg.dim() != problem.dim())
    throw std::invalid_argument("restricted_alpha: dimension mismatch");
  const MatrixXd B = basis ? *basis : reg.tangent_basis(reg.manifold_at(xref));
  AlphaResult out;
  out.tangent_dim = B.cols();
  if (B.cols() == 0) return out;
  const MatrixXd H = problem.hessian_full(xref);
  MatrixXd reduced = B.transpose() * H * B;
  reduced = 0.5 * (reduced + reduced.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(reduced, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw std::runtime_error("restricted_alpha: eigensolver failed");
  out.alpha = eig.eigenvalues()(0);
  out.ri_holds = out.alpha > tol;
  return out;
}

std::optional<MfbResult> build_mfb(const FiniteSumProblem& problem, const Regularizer& reg,
                                   const VectorXd& xref, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("build_mfb: gamma must be positive");
  if (reg.kind() == RegularizerKind::nuclear) return std::nullopt;
  const ManifoldDescriptor desc = reg.manifold_at(xref);
  MfbResult out;
  out.basis = reg.tangent_basis(desc);
  const Index d = out.basis.cols();
  const MatrixXd& B = out.basis;
  const MatrixXd HF = B.transpose() * problem.hessian_full(xref) * B;
  const MatrixXd G = MatrixXd::Identity(d, d) - gamma * HF;
  if (reg.kind() == RegularizerKind::l1) {
    out.matrix = 0.5 * (G + G.transpose());
    return out;
  }
  const MatrixXd HR = B.transpose() * reg.manifold_hessian(xref, desc) * B;
  const MatrixXd W = (MatrixXd::Identity(d, d) + gamma * HR).inverse();
  out.matrix = W * G;
  return out;
}

double spectral_radius(const MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spectral_radius: matrix not square");
  if (M.size() == 0) return 0.0;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * scale) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(M, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw std::runtime_error("spectral_radius: eigensolver failed");
    return eig.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::EigenSolver<MatrixXd> eig(M, false);
  if (eig.info() != Eigen::Success) throw std::runtime_error("spectral_radius: eigensolver failed");
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

RateBundle theoretical_rates(const RateInputs& in) {
  if (in.gamma <= 0.0 || in.m < 1 || in.P < 1 || in.L <= 0.0)
    throw std::invalid_argument("theoretical_rates: need gamma, L > 0 and m, P >= 1");
  RateBundle r;
  const double a = std::isfinite(in.alpha) ? in.alpha : 0.0;
  r.rho_fb = 1.0 - in.gamma * a;
  r.rho_saga = 1.0 - std::min(1.0 / (4.0 * static_cast<double>(in.m)), a / (3.0 * in.L));
  const double q = 4.0 * in.L * in.gamma;
  r.rho_svrg = std::max((1.0 - in.gamma * in.alpha_F) / (1.0 + in.gamma * in.alpha_R),
                        q * static_cast<double>(in.P + 1));
  r.rho_svrg_largeP = 1.0 / (a * in.gamma * (1.0 - q) * static_cast<double>(in.P)) + q / (1.0 - q);
  auto contractive = [](double rho) { return std::isfinite(rho) && rho >= 0.0 && rho < 1.0; };
  r.fb_contractive = contractive(r.rho_fb);
  r.saga_contractive = contractive(r.rho_saga);
  r.svrg_contractive = contractive(r.rho_svrg);
  r.svrg_largeP_contractive = q < 1.0 && contractive(r.rho_svrg_largeP);
  return r;
}

RateBundle theoretical_rates(const FiniteSumProblem& problem, const LocalCertificate& cert,
                             double gamma, Index P, bool local_regime) {
  RateInputs in;
  in.alpha = cert.alpha;
  in.alpha_F = local_regime ? cert.alpha : cert.alpha_F;
  in.alpha_R = local_regime ? 0.0 : cert.alpha_R;
  in.L = cert.L > 0.0 ? cert.L : problem.lipschitz_constants().max;
  in.m = problem.m();
  in.gamma = gamma;
  in.P = P;
  RateBundle r = theoretical_rates(in);
  r.local_regime = local_regime;
  return r;
}

LocalCertificate certify(const FiniteSumProblem& problem, const Regularizer& reg,
                         const VectorXd& xref, double gamma, Index P, bool local_regime) {
  LocalCertificate c;
  c.manifold = reg.manifold_at(xref);
  c.nd = reg.nondegeneracy(c.manifold, -problem.grad_full(xref));
  const AlphaResult a = restricted_alpha(problem, reg, xref);
  c.alpha = a.alpha;
  c.ri_holds = a.ri_holds;
  c.alpha_growth = std::isfinite(a.alpha) ? 0.5 * a.alpha : a.alpha;
  const LipschitzConstants lc = problem.lipschitz_constants();
  c.L = lc.max;
  c.L_F = lc.smooth;
  c.m = problem.m();
  c.gamma = gamma;
  c.P = P;
  c.mfb = build_mfb(problem, reg, xref, gamma);
  if (c.mfb) c.rho_mfb = spectral_radius(c.mfb->matrix);
  c.rates = theoretical_rates(problem, c, gamma, P, local_regime);
  return c;
}

double saga_distance_factor(const RateBundle& rates) { return std::sqrt(rates.rho_saga); }

double svrg_distance_factor(const RateBundle& rates, Index P) {
  return std::pow(rates.rho_svrg, 1.0 / (2.0 * static_cast<double>(P)));
}

void write_certificate(std::ostream& out, const LocalCertificate& c) {
  auto flag = [](bool b) { return b ? "true" : "false"; };
  out << "manifold_kind=" << to_string(c.manifold.kind) << '\n';
  out << "manifold_size=" << c.manifold.size() << '\n';
  out << "nd_gap=" << format_double(c.nd.gap) << '\n';
  out << "nd_holds=" << flag(c.nd.holds) << '\n';
  out << "nd_saturated=" << c.nd.saturated_count << '\n';
  out << "nd_tolerance=" << format_double(c.nd.tolerance) << '\n';
  out << "ri_holds=" << flag(c.ri_holds) << '\n';
  out << "alpha=" << format_double(c.alpha) << '\n';
  out << "alpha_growth=" << format_double(c.alpha_growth) << '\n';
  out << "alpha_F=" << format_double(c.alpha_F) << '\n';
  out << "alpha_R=" << format_double(c.alpha_R) << '\n';
  out << "L=" << format_double(c.L) << '\n';
  out << "L_F=" << format_double(c.L_F) << '\n';
  out << "m=" << c.m << '\n';
  out << "gamma=" << format_double(c.gamma) << '\n';
  out << "P=" << c.P << '\n';
  out << "mfb_available=" << flag(c.mfb.has_value()) << '\n';
  out << "rho_mfb=" << format_double(c.rho_mfb) << '\n';
  out << "rho_fb=" << format_double(c.rates.rho_fb) << '\n';
  out << "rho_saga=" << format_double(c.rates.rho_saga) << '\n';
  out << "rho_svrg=" << format_double(c.rates.rho_svrg) << '\n';
  out << "rho_svrg_largeP=" << format_double(c.rates.rho_svrg_largeP) << '\n';
  out << "fb_contractive=" << flag(c.rates.fb_contractive) << '\n';
  out << "saga_contractive=" << flag(c.rates.saga_contractive) << '\n';
  out << "svrg_contractive=" << flag(c.rates.svrg_contractive) << '\n';
  out << "svrg_largeP_contractive=" << flag(c.rates.svrg_largeP_contractive) << '\n';
  out << "svrg_regime=" << (c.rates.local_regime ? "local" : "global") << '\n';
}

std::vector<std::pair<Index, double>> linearization_residual(const SolverTrace& trace,
                                                             const MfbResult& mfb,
                                                             const VectorXd& xref,
                                                             Index k_start) {
  const auto& snaps = trace.snapshots;
  if (snaps.empty()) throw std::invalid_argument("linearization_residual: trace has no snapshots");
  const MatrixXd M = mfb.lifted();
  std::vector<std::pair<Index, double>> out;
  for (std::size_t j = 0; j < snaps.size(); ++j) {
    const Snapshot& s = snaps[j];
    if (s.k < k_start) continue;
    const VectorXd* next = nullptr;
    if (s.conditional_next.size() > 0) {
      next = &s.conditional_next;
    } else if (j + 1 < snaps.size() && snaps[j + 1].k == s.k + 1) {
      next = &snaps[j + 1].x;
    } else {
      continue;
    }
    const VectorXd d = s.x - xref;
    const double dn = d.norm();
    if (dn == 0.0) {
      out.emplace_back(s.k, 0.0);
      continue;
    }
    out.emplace_back(s.k, ((*next - xref) - M * d).norm() / dn);
  }
  return out;
}

}  // namespace proxvr
