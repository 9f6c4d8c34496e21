#include "proxvr/problems.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace proxvr {

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string to_string(AtomKind kind) {
  return kind == AtomKind::least_squares ? "least-squares" : "logistic";
}

AtomKind atom_kind_from_string(const std::string& name) {
  if (name == "least-squares") return AtomKind::least_squares;
  if (name == "logistic") return AtomKind::logistic;
  throw std::invalid_argument("unknown atom kind: " + name);
}

FiniteSumProblem::FiniteSumProblem(AtomKind kind, MatrixXd rows, VectorXd targets, bool intercept)
    : kind_(kind), rows_(std::move(rows)), targets_(std::move(targets)), intercept_(intercept) {
  if (rows_.rows() < 1 || rows_.cols() < 1)
    throw std::invalid_argument("FiniteSumProblem: need m >= 1 and n >= 1");
  if (targets_.size() != rows_.rows())
    throw std::invalid_argument("FiniteSumProblem: one target per atom required");
  if (kind_ == AtomKind::logistic) {
    for (Index i = 0; i < targets_.size(); ++i)
      if (targets_(i) != 1.0 && targets_(i) != -1.0)
        throw std::invalid_argument("FiniteSumProblem: logistic labels must be +1 or -1");
  } else if (intercept_) {
    throw std::invalid_argument("FiniteSumProblem: intercept only applies to logistic atoms");
  }
}

FiniteSumProblem FiniteSumProblem::least_squares(MatrixXd K, VectorXd b) {
  return FiniteSumProblem(AtomKind::least_squares, std::move(K), std::move(b));
}

FiniteSumProblem FiniteSumProblem::logistic(const MatrixXd& features, VectorXd labels,
                                            bool intercept) {
  if (!intercept) return FiniteSumProblem(AtomKind::logistic, features, std::move(labels));
  MatrixXd rows(features.rows(), features.cols() + 1);
  rows.leftCols(features.cols()) = features;
  rows.col(features.cols()).setOnes();
  return FiniteSumProblem(AtomKind::logistic, std::move(rows), std::move(labels), true);
}

void FiniteSumProblem::check_index(Index i) const {
  if (i < 0 || i >= m()) throw std::out_of_range("atom index out of range");
}

void FiniteSumProblem::check_dim(const VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("dimension mismatch");
}

double FiniteSumProblem::value_component(Index i, const VectorXd& x) const {
  check_index(i);
  check_dim(x);
  const double t = rows_.row(i).dot(x);
  if (kind_ == AtomKind::least_squares) {
    const double r = t - targets_(i);
    return 0.5 * r * r;
  }
  return softplus(-targets_(i) * t);
}

double FiniteSumProblem::value(const VectorXd& x) const {
  check_dim(x);
  const VectorXd t = rows_ * x;
  double sum = 0.0;
  if (kind_ == AtomKind::least_squares) {
    sum = 0.5 * (t - targets_).squaredNorm();
  } else {
    for (Index i = 0; i < t.size(); ++i) sum += softplus(-targets_(i) * t(i));
  }
  return sum / static_cast<double>(m());
}

double FiniteSumProblem::slope_at(Index i, double inner) const {
  if (kind_ == AtomKind::least_squares) return inner - targets_(i);
  const double y = targets_(i);
  return -y * sigmoid(-y * inner);
}

double FiniteSumProblem::curvature_at(Index i, double inner) const {
  if (kind_ == AtomKind::least_squares) return 1.0;
  const double s = sigmoid(targets_(i) * inner);
  return s * (1.0 - s);
}

double FiniteSumProblem::slope(Index i, const VectorXd& x) const {
  check_index(i);
  check_dim(x);
  return slope_at(i, rows_.row(i).dot(x));
}

VectorXd FiniteSumProblem::grad_component(Index i, const VectorXd& x) const {
  return slope(i, x) * rows_.row(i).transpose();
}

VectorXd FiniteSumProblem::grad_full(const VectorXd& x) const {
  check_dim(x);
  const VectorXd t = rows_ * x;
  VectorXd c(t.size());
  for (Index i = 0; i < t.size(); ++i) c(i) = slope_at(i, t(i));
  return mean_of_slopes(c);
}

double FiniteSumProblem::value_and_grad(const VectorXd& x, VectorXd& grad) const {
  check_dim(x);
  const VectorXd t = rows_ * x;
  VectorXd c(t.size());
  double sum = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    c(i) = slope_at(i, t(i));
    if (kind_ == AtomKind::least_squares) {
      const double r = t(i) - targets_(i);
      sum += 0.5 * r * r;
    } else {
      sum += softplus(-targets_(i) * t(i));
    }
  }
  grad = mean_of_slopes(c);
  return sum / static_cast<double>(m());
}

VectorXd FiniteSumProblem::mean_of_slopes(const VectorXd& slopes) const {
  return rows_.transpose() * slopes / static_cast<double>(m());
}

LipschitzConstants FiniteSumProblem::lipschitz_constants() const {
  LipschitzConstants out;
  out.per_component.resize(static_cast<std::size_t>(m()));
  const double factor = kind_ == AtomKind::least_squares ? 1.0 : 0.25;
  double sum = 0.0;
  for (Index i = 0; i < m(); ++i) {
    const double li = factor * rows_.row(i).squaredNorm();
    out.per_component[static_cast<std::size_t>(i)] = li;
    out.max = std::max(out.max, li);
    sum += li;
  }
  out.mean = sum / static_cast<double>(m());
  if (kind_ == AtomKind::least_squares) {
    // Largest eigenvalue of A^T A / m, taken from the smaller Gram matrix.
    const MatrixXd gram = m() <= dim() ? MatrixXd(rows_ * rows_.transpose())
                                       : MatrixXd(rows_.transpose() * rows_);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    out.smooth = eig.eigenvalues().maxCoeff() / static_cast<double>(m());
  } else {
    out.smooth = out.mean;
  }
  return out;
}

MatrixXd FiniteSumProblem::hessian_full(const VectorXd& x) const {
  check_dim(x);
  if (kind_ == AtomKind::least_squares) {
    MatrixXd h = MatrixXd::Zero(dim(), dim());
    h.selfadjointView<Eigen::Lower>().rankUpdate(rows_.transpose(), 1.0 / static_cast<double>(m()));
    return h.selfadjointView<Eigen::Lower>();
  }
  const VectorXd t = rows_ * x;
  VectorXd w(t.size());
  for (Index i = 0; i < t.size(); ++i) w(i) = curvature_at(i, t(i));
  MatrixXd weighted = rows_.transpose() * w.asDiagonal();
  MatrixXd h = weighted * rows_ / static_cast<double>(m());
  return 0.5 * (h + h.transpose());
}

VectorXd FiniteSumProblem::hessian_vector(const VectorXd& x, const VectorXd& v) const {
  check_dim(x);
  check_dim(v);
  VectorXd av = rows_ * v;
  if (kind_ == AtomKind::logistic) {
    const VectorXd t = rows_ * x;
    for (Index i = 0; i < t.size(); ++i) av(i) *= curvature_at(i, t(i));
  }
  return rows_.transpose() * av / static_cast<double>(m());
}

}  // namespace proxvr
