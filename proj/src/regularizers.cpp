#include "proxvr/regularizers.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace proxvr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Eigen::Map<const MatrixXd> as_matrix(const VectorXd& v, Index rows, Index cols) {
  return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

VectorXd as_vector(const MatrixXd& m) {
  return Eigen::Map<const VectorXd>(m.data(), m.size());
}

// Orthonormal basis of the orthogonal complement of the columns of q (q orthonormal).
MatrixXd complement_basis(const MatrixXd& q) {
  const Index n = q.rows();
  const Index r = q.cols();
  if (r == 0) return MatrixXd::Identity(n, n);
  Eigen::HouseholderQR<MatrixXd> qr(q);
  MatrixXd full = qr.householderQ() * MatrixXd::Identity(n, n);
  return full.rightCols(n - r);
}

}  // namespace

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::l1:
      return "l1";
    case RegularizerKind::group_l12:
      return "group-l12";
    case RegularizerKind::nuclear:
      return "nuclear";
  }
  return "?";
}

RegularizerKind regularizer_kind_from_string(const std::string& name) {
  if (name == "l1") return RegularizerKind::l1;
  if (name == "group-l12") return RegularizerKind::group_l12;
  if (name == "nuclear") return RegularizerKind::nuclear;
  throw std::invalid_argument("unknown regularizer kind: " + name);
}

double max_principal_angle_sine(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols() || a.rows() != b.rows())
    throw std::invalid_argument("principal angles: basis shapes differ");
  if (a.cols() == 0) return 0.0;
  const MatrixXd residual = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<MatrixXd> svd(residual);
  return svd.singularValues()(0);
}

bool same_manifold(const ManifoldDescriptor& a, const ManifoldDescriptor& b, double angle_tol) {
  if (a.kind != b.kind || a.dim != b.dim) return false;
  if (a.kind != RegularizerKind::nuclear) return a.support == b.support;
  if (a.rank != b.rank) return false;
  if (a.rank == 0) return true;
  return max_principal_angle_sine(a.U, b.U) < angle_tol &&
         max_principal_angle_sine(a.V, b.V) < angle_tol;
}

Regularizer::Regularizer(RegularizerKind kind, double mu, Index dim)
    : kind_(kind), mu_(mu), dim_(dim) {
  if (!(mu > 0.0)) throw std::invalid_argument("Regularizer: mu must be positive");
  if (dim < 1) throw std::invalid_argument("Regularizer: dimension must be positive");
}

Regularizer Regularizer::l1(double mu, Index dim, Index free_tail) {
  if (free_tail < 0 || free_tail >= dim)
    throw std::invalid_argument("Regularizer: free_tail must leave penalized coordinates");
  Regularizer r(RegularizerKind::l1, mu, dim);
  r.free_tail_ = free_tail;
  return r;
}

Regularizer Regularizer::group_l12(double mu, std::vector<Index> block_sizes, Index free_tail) {
  if (block_sizes.empty()) throw std::invalid_argument("Regularizer: no blocks");
  Index total = 0;
  for (Index s : block_sizes) {
    if (s < 1) throw std::invalid_argument("Regularizer: block sizes must be positive");
    total += s;
  }
  if (free_tail < 0) throw std::invalid_argument("Regularizer: negative free_tail");
  Regularizer r(RegularizerKind::group_l12, mu, total + free_tail);
  r.free_tail_ = free_tail;
  r.block_starts_.reserve(block_sizes.size());
  Index start = 0;
  for (Index s : block_sizes) {
    r.block_starts_.push_back(start);
    start += s;
  }
  r.block_sizes_ = std::move(block_sizes);
  return r;
}

Regularizer Regularizer::nuclear(double mu, Index rows, Index cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("Regularizer: bad matrix shape");
  Regularizer r(RegularizerKind::nuclear, mu, rows * cols);
  r.rows_ = rows;
  r.cols_ = cols;
  return r;
}

Regularizer Regularizer::with_mu(double mu) const {
  if (!(mu > 0.0)) throw std::invalid_argument("Regularizer: mu must be positive");
  Regularizer copy = *this;
  copy.mu_ = mu;
  return copy;
}

void Regularizer::check_dim(const VectorXd& v) const {
  if (v.size() != dim_) throw std::invalid_argument("Regularizer: shape mismatch");
}

void Regularizer::check_descriptor(const ManifoldDescriptor& desc) const {
  if (desc.kind != kind_ || desc.dim != dim_)
    throw std::invalid_argument("Regularizer: descriptor does not match regularizer");
}

double Regularizer::value(const VectorXd& x) const {
  check_dim(x);
  switch (kind_) {
    case RegularizerKind::l1:
      return mu_ * x.head(penalized_dim()).lpNorm<1>();
    case RegularizerKind::group_l12: {
      double sum = 0.0;
      for (std::size_t b = 0; b < block_sizes_.size(); ++b)
        sum += x.segment(block_starts_[b], block_sizes_[b]).norm();
      return mu_ * sum;
    }
    case RegularizerKind::nuclear: {
      Eigen::JacobiSVD<MatrixXd> svd(as_matrix(x, rows_, cols_));
      return mu_ * svd.singularValues().sum();
    }
  }
  return 0.0;
}

VectorXd Regularizer::prox(double gamma, const VectorXd& v) const {
  return prox_with_manifold(gamma, v).x;
}

ProxResult Regularizer::prox_with_manifold(double gamma, const VectorXd& v) const {
  if (!(gamma > 0.0)) throw std::invalid_argument("prox: gamma must be positive");
  check_dim(v);
  const double thresh = gamma * mu_;
  ProxResult out;
  out.x = v;
  ManifoldDescriptor& d = out.manifold;
  d.kind = kind_;
  d.dim = dim_;
  d.free_tail = free_tail_;
  d.anchor = VectorXd::Zero(dim_);
  switch (kind_) {
    case RegularizerKind::l1: {
      for (Index i = 0; i < penalized_dim(); ++i) {
        const double a = std::abs(v(i)) - thresh;
        if (a > 0.0) {
          out.x(i) = sign(v(i)) * a;
          d.support.push_back(i);
          d.anchor(i) = sign(v(i));
        } else {
          out.x(i) = 0.0;
        }
      }
      break;
    }
    case RegularizerKind::group_l12: {
      for (std::size_t b = 0; b < block_sizes_.size(); ++b) {
        auto seg = out.x.segment(block_starts_[b], block_sizes_[b]);
        const double norm = seg.norm();
        if (norm > thresh) {
          d.anchor.segment(block_starts_[b], block_sizes_[b]) = seg / norm;
          seg *= 1.0 - thresh / norm;
          d.support.push_back(static_cast<Index>(b));
        } else {
          seg.setZero();
        }
      }
      break;
    }
    case RegularizerKind::nuclear: {
      Eigen::JacobiSVD<MatrixXd> svd(as_matrix(v, rows_, cols_),
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
      const VectorXd& s = svd.singularValues();
      Index r = 0;
      while (r < s.size() && s(r) > thresh) ++r;
      d.rank = r;
      d.U = svd.matrixU().leftCols(r);
      d.V = svd.matrixV().leftCols(r);
      const VectorXd shrunk = (s.head(r).array() - thresh).matrix();
      const MatrixXd x = d.U * shrunk.asDiagonal() * d.V.transpose();
      out.x = as_vector(x);
      d.anchor = as_vector(MatrixXd(d.U * d.V.transpose()));
      break;
    }
  }
  return out;
}

ManifoldDescriptor Regularizer::manifold_at(const VectorXd& x, double tol) const {
  if (tol < 0.0) throw std::invalid_argument("manifold_at: tol must be non-negative");
  check_dim(x);
  ManifoldDescriptor d;
  d.kind = kind_;
  d.dim = dim_;
  d.free_tail = free_tail_;
  d.anchor = VectorXd::Zero(dim_);
  switch (kind_) {
    case RegularizerKind::l1:
      for (Index i = 0; i < penalized_dim(); ++i) {
        if (std::abs(x(i)) > tol) {
          d.support.push_back(i);
          d.anchor(i) = sign(x(i));
        }
      }
      break;
    case RegularizerKind::group_l12:
      for (std::size_t b = 0; b < block_sizes_.size(); ++b) {
        const auto seg = x.segment(block_starts_[b], block_sizes_[b]);
        const double norm = seg.norm();
        if (norm > tol) {
          d.support.push_back(static_cast<Index>(b));
          d.anchor.segment(block_starts_[b], block_sizes_[b]) = seg / norm;
        }
      }
      break;
    case RegularizerKind::nuclear: {
      Eigen::JacobiSVD<MatrixXd> svd(as_matrix(x, rows_, cols_),
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
      const VectorXd& s = svd.singularValues();
      const double floor = s.size() > 0 ? static_cast<double>(std::max(rows_, cols_)) *
                                              std::numeric_limits<double>::epsilon() * s(0)
                                        : 0.0;
      const double cut = std::max(tol, floor);
      Index r = 0;
      while (r < s.size() && s(r) > cut) ++r;
      d.rank = r;
      d.U = svd.matrixU().leftCols(r);
      d.V = svd.matrixV().leftCols(r);
      d.anchor = as_vector(MatrixXd(d.U * d.V.transpose()));
      break;
    }
  }
  return d;
}

VectorXd Regularizer::tangent_project(const ManifoldDescriptor& desc, const VectorXd& v) const {
  check_descriptor(desc);
  check_dim(v);
  switch (kind_) {
    case RegularizerKind::l1: {
      VectorXd out = VectorXd::Zero(dim_);
      for (Index i : desc.support) out(i) = v(i);
      out.tail(free_tail_) = v.tail(free_tail_);
      return out;
    }
    case RegularizerKind::group_l12: {
      VectorXd out = VectorXd::Zero(dim_);
      for (Index b : desc.support) {
        const auto ub = static_cast<std::size_t>(b);
        out.segment(block_starts_[ub], block_sizes_[ub]) =
            v.segment(block_starts_[ub], block_sizes_[ub]);
      }
      out.tail(free_tail_) = v.tail(free_tail_);
      return out;
    }
    case RegularizerKind::nuclear: {
      const auto z = as_matrix(v, rows_, cols_);
      if (desc.rank == 0) return VectorXd::Zero(dim_);
      const MatrixXd utz = desc.U.transpose() * z;
      const MatrixXd zv = z * desc.V;
      // U U^T Z + Z V V^T - U U^T Z V V^T
      const MatrixXd p = desc.U * utz + zv * desc.V.transpose() -
                         desc.U * (utz * desc.V) * desc.V.transpose();
      return as_vector(p);
    }
  }
  return v;
}

Index Regularizer::tangent_dim(const ManifoldDescriptor& desc) const {
  check_descriptor(desc);
  switch (kind_) {
    case RegularizerKind::l1:
      return static_cast<Index>(desc.support.size()) + free_tail_;
    case RegularizerKind::group_l12: {
      Index total = free_tail_;
      for (Index b : desc.support) total += block_sizes_[static_cast<std::size_t>(b)];
      return total;
    }
    case RegularizerKind::nuclear:
      return desc.rank * (rows_ + cols_ - desc.rank);
  }
  return 0;
}

MatrixXd Regularizer::tangent_basis(const ManifoldDescriptor& desc) const {
  check_descriptor(desc);
  const Index d = tangent_dim(desc);
  MatrixXd basis = MatrixXd::Zero(dim_, d);
  if (kind_ != RegularizerKind::nuclear) {
    Index col = 0;
    if (kind_ == RegularizerKind::l1) {
      for (Index i : desc.support) basis(i, col++) = 1.0;
    } else {
      for (Index b : desc.support) {
        const auto ub = static_cast<std::size_t>(b);
        for (Index j = 0; j < block_sizes_[ub]; ++j) basis(block_starts_[ub] + j, col++) = 1.0;
      }
    }
    for (Index j = 0; j < free_tail_; ++j) basis(penalized_dim() + j, col++) = 1.0;
    return basis;
  }
  // Fixed-rank tangent space: span{u_i v_j^T} + span{u_i w^T : w in V-perp}
  // + span{z v_j^T : z in U-perp}; each family is orthonormal and they are
  // mutually orthogonal.
  const Index r = desc.rank;
  const MatrixXd u_perp = complement_basis(desc.U);
  const MatrixXd v_perp = complement_basis(desc.V);
  Index col = 0;
  auto push = [&](const VectorXd& a, const VectorXd& b) {
    const MatrixXd outer = a * b.transpose();
    basis.col(col++) = as_vector(outer);
  };
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < r; ++j) push(desc.U.col(i), desc.V.col(j));
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < v_perp.cols(); ++j) push(desc.U.col(i), v_perp.col(j));
  for (Index i = 0; i < u_perp.cols(); ++i)
    for (Index j = 0; j < r; ++j) push(u_perp.col(i), desc.V.col(j));
  return basis;
}

NDReport Regularizer::nondegeneracy(const ManifoldDescriptor& desc, const VectorXd& u,
                                    double tol) const {
  check_descriptor(desc);
  if (u.size() != dim_) throw std::invalid_argument("nondegeneracy: u does not match descriptor");
  NDReport rep;
  rep.tolerance = tol < 0.0 ? 1e-9 * mu_ : tol;
  double margin = kInf;
  double residual = 0.0;
  for (Index j = 0; j < free_tail_; ++j)
    residual = std::max(residual, std::abs(u(penalized_dim() + j)));

  switch (kind_) {
    case RegularizerKind::l1: {
      std::vector<bool> active(static_cast<std::size_t>(penalized_dim()), false);
      for (Index i : desc.support) {
        active[static_cast<std::size_t>(i)] = true;
        residual = std::max(residual, std::abs(u(i) - mu_ * desc.anchor(i)));
      }
      for (Index i = 0; i < penalized_dim(); ++i) {
        if (active[static_cast<std::size_t>(i)]) continue;
        const double m = mu_ - std::abs(u(i));
        margin = std::min(margin, m);
        if (m <= rep.tolerance) ++rep.saturated_count;
      }
      break;
    }
    case RegularizerKind::group_l12: {
      std::vector<bool> active(block_sizes_.size(), false);
      for (Index b : desc.support) {
        const auto ub = static_cast<std::size_t>(b);
        active[ub] = true;
        const VectorXd diff = u.segment(block_starts_[ub], block_sizes_[ub]) -
                              mu_ * desc.anchor.segment(block_starts_[ub], block_sizes_[ub]);
        residual = std::max(residual, diff.norm());
      }
      for (std::size_t b = 0; b < block_sizes_.size(); ++b) {
        if (active[b]) continue;
        const double m = mu_ - u.segment(block_starts_[b], block_sizes_[b]).norm();
        margin = std::min(margin, m);
        if (m <= rep.tolerance) ++rep.saturated_count;
      }
      break;
    }
    case RegularizerKind::nuclear: {
      const VectorXd pt = tangent_project(desc, u);
      residual = std::max(residual, (pt - mu_ * desc.anchor).norm());
      const VectorXd normal = u - pt;
      Eigen::JacobiSVD<MatrixXd> svd(as_matrix(normal, rows_, cols_));
      const VectorXd& s = svd.singularValues();
      const Index normal_rank = std::min(rows_, cols_) - desc.rank;
      for (Index i = 0; i < normal_rank; ++i) {
        const double m = mu_ - s(i);
        margin = std::min(margin, m);
        if (m <= rep.tolerance) ++rep.saturated_count;
      }
      break;
    }
  }
  rep.tangent_residual = residual;
  rep.gap = std::max(0.0, margin - residual);
  rep.holds = rep.gap > rep.tolerance;
  return rep;
}

double Regularizer::subdifferential_distance(const VectorXd& x, const VectorXd& g) const {
  check_dim(x);
  check_dim(g);
  double dist = 0.0;
  for (Index j = 0; j < free_tail_; ++j) dist = std::max(dist, std::abs(g(penalized_dim() + j)));
  switch (kind_) {
    case RegularizerKind::l1:
      for (Index i = 0; i < penalized_dim(); ++i) {
        const double d = x(i) != 0.0 ? std::abs(g(i) - mu_ * sign(x(i)))
                                     : std::max(0.0, std::abs(g(i)) - mu_);
        dist = std::max(dist, d);
      }
      break;
    case RegularizerKind::group_l12:
      for (std::size_t b = 0; b < block_sizes_.size(); ++b) {
        const auto xb = x.segment(block_starts_[b], block_sizes_[b]);
        const auto gb = g.segment(block_starts_[b], block_sizes_[b]);
        const double nx = xb.norm();
        const double d =
            nx > 0.0 ? (gb - mu_ * xb / nx).norm() : std::max(0.0, gb.norm() - mu_);
        dist = std::max(dist, d);
      }
      break;
    case RegularizerKind::nuclear: {
      const ManifoldDescriptor desc = manifold_at(x);
      const VectorXd pt = tangent_project(desc, g);
      const double tangential = (pt - mu_ * desc.anchor).norm();
      Eigen::JacobiSVD<MatrixXd> svd(as_matrix(VectorXd(g - pt), rows_, cols_));
      const double normal = std::max(0.0, svd.singularValues()(0) - mu_);
      dist = std::max(dist, std::max(tangential, normal));
      break;
    }
  }
  return dist;
}

MatrixXd Regularizer::manifold_hessian(const VectorXd& x, const ManifoldDescriptor& desc) const {
  check_descriptor(desc);
  check_dim(x);
  MatrixXd h = MatrixXd::Zero(dim_, dim_);
  switch (kind_) {
    case RegularizerKind::l1:
      return h;
    case RegularizerKind::group_l12:
      for (Index b : desc.support) {
        const auto ub = static_cast<std::size_t>(b);
        const Index s = block_sizes_[ub];
        const Index start = block_starts_[ub];
        const VectorXd xb = x.segment(start, s);
        const double nx = xb.norm();
        if (nx == 0.0) throw std::domain_error("manifold_hessian: active block is zero");
        const VectorXd dir = xb / nx;
        h.block(start, start, s, s) =
            (mu_ / nx) * (MatrixXd::Identity(s, s) - dir * dir.transpose());
      }
      return h;
    case RegularizerKind::nuclear:
      throw std::domain_error("manifold_hessian: fixed-rank manifold is not linear");
  }
  return h;
}

Index Regularizer::structure_size(const ManifoldDescriptor& desc) const {
  switch (desc.kind) {
    case RegularizerKind::l1:
      return static_cast<Index>(desc.support.size());
    case RegularizerKind::group_l12: {
      Index total = 0;
      for (Index b : desc.support) total += block_sizes_[static_cast<std::size_t>(b)];
      return total;
    }
    case RegularizerKind::nuclear:
      return desc.rank;
  }
  return 0;
}

}  // namespace proxvr
