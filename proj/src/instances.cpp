#include "proxvr/instances.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "proxvr/rng.hpp"

namespace proxvr {

namespace {

MatrixXd gaussian_matrix(Rng& rng, Index rows, Index cols, double scale) {
  MatrixXd out(rows, cols);
  // Row-major fill order so the stream maps to K_ij in reading order.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = scale * rng.normal();
  return out;
}

std::vector<Index> permutation(Rng& rng, Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.index(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

double random_sign(Rng& rng) { return rng.uniform01() < 0.5 ? -1.0 : 1.0; }

// b = signal + noise * |signal| * g / |g|.
VectorXd add_noise(Rng& rng, const VectorXd& signal, double noise) {
  if (noise <= 0.0) return signal;
  VectorXd g(signal.size());
  for (Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
  return signal + noise * signal.norm() * g / g.norm();
}

double default_noise(const InstanceSpec& s) {
  if (s.noise >= 0.0) return s.noise;
  return s.kind == InstanceKind::sparse_logistic ? 0.1 : 0.01;
}

Index default_sparsity(const InstanceSpec& s) {
  if (s.sparsity > 0) return s.sparsity;
  switch (s.kind) {
    case InstanceKind::lasso_unitary:
      return 2;
    case InstanceKind::group_sparse:
      return std::max<Index>(1, (s.n / s.block_size) / 16);
    default:
      return std::max<Index>(1, s.n / 16);
  }
}

Index matrix_rows_of(const InstanceSpec& s) {
  if (s.matrix_rows > 0) return s.matrix_rows;
  const auto root = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(s.n))));
  return root;
}

VectorXd soft_threshold(const VectorXd& v, double t) {
  VectorXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i)) - t;
    out(i) = a > 0.0 ? std::copysign(a, v(i)) : 0.0;
  }
  return out;
}

Instance make_unitary(const InstanceSpec& s, Rng& rng) {
  const Index n = s.n;
  const double mu = s.mu > 0.0 ? s.mu : 0.5;
  const MatrixXd g = gaussian_matrix(rng, n, n, 1.0);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  const MatrixXd K = qr.householderQ() * MatrixXd::Identity(n, n);

  const Index kappa = default_sparsity(s);
  const std::vector<Index> order = permutation(rng, n);
  VectorXd u(n);
  for (Index r = 0; r < n; ++r) {
    const Index i = order[static_cast<std::size_t>(r)];
    const double sg = random_sign(rng);
    if (r < kappa) {
      u(i) = sg * (mu + rng.uniform(0.5, 1.5));
    } else if (r < kappa + s.saturated) {
      // Saturated entries sit a relative margin inside the threshold so that
      // rounding in K^T(Kx - b) cannot push them across it.
      u(i) = sg * mu * (1.0 - s.saturation_margin);
    } else {
      u(i) = sg * mu * rng.uniform(0.1, 0.9);
    }
  }
  const VectorXd b = K * u;
  const auto m = static_cast<double>(n);
  const double root_m = std::sqrt(m);
  FiniteSumProblem problem = FiniteSumProblem::least_squares(root_m * K, root_m * b);
  VectorXd truth = soft_threshold(K.transpose() * b, mu);
  Instance inst{s, std::move(problem), Regularizer::l1(mu, n), std::move(truth), K, b};
  inst.spec.m = n;
  inst.spec.mu = mu;
  return inst;
}

Instance make_lasso(const InstanceSpec& s, Rng& rng) {
  const double scale =
      s.entry_scale > 0.0
          ? s.entry_scale
          : (s.kind == InstanceKind::lasso_overdetermined ? 1.0 / std::sqrt(static_cast<double>(s.m))
                                                          : 1.0);
  MatrixXd K = gaussian_matrix(rng, s.m, s.n, scale);
  const Index kappa = default_sparsity(s);
  const std::vector<Index> order = permutation(rng, s.n);
  VectorXd x = VectorXd::Zero(s.n);
  for (Index r = 0; r < kappa; ++r)
    x(order[static_cast<std::size_t>(r)]) = random_sign(rng) * (1.0 + std::abs(rng.normal()));
  VectorXd b = add_noise(rng, K * x, default_noise(s));
  double mu = s.mu;
  if (mu <= 0.0)
    mu = s.mu_fraction * (K.transpose() * b).cwiseAbs().maxCoeff() / static_cast<double>(s.m);
  Instance inst{s, FiniteSumProblem::least_squares(std::move(K), std::move(b)),
                Regularizer::l1(mu, s.n), std::move(x), MatrixXd(), VectorXd()};
  inst.spec.mu = mu;
  return inst;
}

Instance make_logistic(const InstanceSpec& s, Rng& rng) {
  const double scale = s.entry_scale > 0.0 ? s.entry_scale : 4.0;
  const MatrixXd Z = gaussian_matrix(rng, s.m, s.n, scale);
  const Index kappa = default_sparsity(s);
  const std::vector<Index> order = permutation(rng, s.n);
  VectorXd x = VectorXd::Zero(s.n + (s.intercept ? 1 : 0));
  for (Index r = 0; r < kappa; ++r)
    x(order[static_cast<std::size_t>(r)]) = rng.normal() / scale;
  const VectorXd t = Z * x.head(s.n);
  const double spread = std::sqrt(t.squaredNorm() / static_cast<double>(s.m));
  const double noise = default_noise(s);
  VectorXd y(s.m);
  for (Index i = 0; i < s.m; ++i) y(i) = t(i) + noise * spread * rng.normal() >= 0.0 ? 1.0 : -1.0;
  const double mu = s.mu > 0.0 ? s.mu : 1.0 / std::sqrt(static_cast<double>(s.m));
  const Index dim = s.n + (s.intercept ? 1 : 0);
  Instance inst{s, FiniteSumProblem::logistic(Z, std::move(y), s.intercept),
                Regularizer::l1(mu, dim, s.intercept ? 1 : 0), std::move(x), MatrixXd(),
                VectorXd()};
  inst.spec.mu = mu;
  return inst;
}

Instance make_group(const InstanceSpec& s, Rng& rng) {
  const double scale = s.entry_scale > 0.0 ? s.entry_scale : 1.0;
  MatrixXd K = gaussian_matrix(rng, s.m, s.n, scale);
  const Index blocks = s.n / s.block_size;
  const Index active = default_sparsity(s);
  const std::vector<Index> order = permutation(rng, blocks);
  VectorXd x = VectorXd::Zero(s.n);
  for (Index r = 0; r < active; ++r) {
    const Index blk = order[static_cast<std::size_t>(r)];
    for (Index j = 0; j < s.block_size; ++j) x(blk * s.block_size + j) = rng.normal();
  }
  VectorXd b = add_noise(rng, K * x, default_noise(s));
  std::vector<Index> sizes(static_cast<std::size_t>(blocks), s.block_size);
  double mu = s.mu;
  if (mu <= 0.0) {
    const VectorXd c = K.transpose() * b / static_cast<double>(s.m);
    double top = 0.0;
    for (Index blk = 0; blk < blocks; ++blk)
      top = std::max(top, c.segment(blk * s.block_size, s.block_size).norm());
    mu = s.mu_fraction * top;
  }
  Instance inst{s, FiniteSumProblem::least_squares(std::move(K), std::move(b)),
                Regularizer::group_l12(mu, std::move(sizes)), std::move(x), MatrixXd(),
                VectorXd()};
  inst.spec.mu = mu;
  return inst;
}

Instance make_low_rank(const InstanceSpec& s, Rng& rng) {
  const double scale = s.entry_scale > 0.0 ? s.entry_scale : 1.0;
  const Index n1 = matrix_rows_of(s);
  const Index n2 = s.n / n1;
  MatrixXd K = gaussian_matrix(rng, s.m, s.n, scale);
  const MatrixXd G = gaussian_matrix(rng, n1, s.rank, 1.0);
  const MatrixXd H = gaussian_matrix(rng, n2, s.rank, 1.0);
  const MatrixXd X = G * H.transpose();
  VectorXd x = Eigen::Map<const VectorXd>(X.data(), X.size());
  VectorXd b = add_noise(rng, K * x, default_noise(s));
  double mu = s.mu;
  if (mu <= 0.0) {
    const VectorXd c = K.transpose() * b / static_cast<double>(s.m);
    Eigen::JacobiSVD<MatrixXd> svd(Eigen::Map<const MatrixXd>(c.data(), n1, n2));
    mu = s.mu_fraction * svd.singularValues()(0);
  }
  Instance inst{s, FiniteSumProblem::least_squares(std::move(K), std::move(b)),
                Regularizer::nuclear(mu, n1, n2), std::move(x), MatrixXd(), VectorXd()};
  inst.spec.mu = mu;
  inst.spec.matrix_rows = n1;
  return inst;
}

}  // namespace

std::string to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::lasso_gaussian:
      return "lasso-gaussian";
    case InstanceKind::lasso_unitary:
      return "lasso-unitary";
    case InstanceKind::lasso_overdetermined:
      return "lasso-overdetermined";
    case InstanceKind::sparse_logistic:
      return "sparse-logistic";
    case InstanceKind::group_sparse:
      return "group-sparse";
    case InstanceKind::low_rank:
      return "low-rank";
    case InstanceKind::sgd_counterexample:
      return "sgd-counterexample";
  }
  return "?";
}

InstanceKind instance_kind_from_string(const std::string& name) {
  for (auto k : {InstanceKind::lasso_gaussian, InstanceKind::lasso_unitary,
                 InstanceKind::lasso_overdetermined, InstanceKind::sparse_logistic,
                 InstanceKind::group_sparse, InstanceKind::low_rank,
                 InstanceKind::sgd_counterexample})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown instance kind: " + name);
}

void InstanceSpec::validate() const {
  if (kind == InstanceKind::sgd_counterexample) return;
  if (n < 1) throw std::invalid_argument("instance: n must be positive");
  if (kind != InstanceKind::lasso_unitary && m < 1)
    throw std::invalid_argument("instance: m must be positive");
  if (sparsity < 0 || sparsity > n) throw std::invalid_argument("instance: sparsity exceeds n");
  switch (kind) {
    case InstanceKind::lasso_unitary: {
      const Index kappa = sparsity > 0 ? sparsity : 2;
      if (saturated < 0 || kappa + saturated > n)
        throw std::invalid_argument("instance: support plus saturated entries exceed n");
      if (saturation_margin < 0.0 || saturation_margin >= 1.0)
        throw std::invalid_argument("instance: saturation margin must lie in [0, 1)");
      break;
    }
    case InstanceKind::group_sparse:
      if (block_size < 1 || n % block_size != 0)
        throw std::invalid_argument("instance: blocks must partition {1..n}");
      if (sparsity * block_size > n)
        throw std::invalid_argument("instance: more active blocks than blocks");
      break;
    case InstanceKind::low_rank: {
      const Index n1 = matrix_rows_of(*this);
      if (n1 < 1 || n % n1 != 0)
        throw std::invalid_argument("instance: matrix shape must satisfy n1 * n2 = n");
      if (rank < 1 || rank > std::min(n1, n / n1))
        throw std::invalid_argument("instance: rank exceeds matrix dimensions");
      break;
    }
    default:
      break;
  }
}

Instance generate_instance(const InstanceSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  switch (spec.kind) {
    case InstanceKind::lasso_unitary:
      return make_unitary(spec, rng);
    case InstanceKind::lasso_gaussian:
    case InstanceKind::lasso_overdetermined:
      return make_lasso(spec, rng);
    case InstanceKind::sparse_logistic:
      return make_logistic(spec, rng);
    case InstanceKind::group_sparse:
      return make_group(spec, rng);
    case InstanceKind::low_rank:
      return make_low_rank(spec, rng);
    case InstanceKind::sgd_counterexample:
      return sgd_counterexample();
  }
  throw std::invalid_argument("instance: unknown kind");
}

Instance sgd_counterexample() {
  MatrixXd K = MatrixXd::Zero(3, 3);
  K(0, 0) = 1.0;
  K(1, 1) = std::sqrt(2.0);
  K(2, 2) = std::sqrt(3.0);
  VectorXd b(3);
  b << 2.0, std::sqrt(2.0) / 3.0, std::sqrt(3.0) / 4.0;
  InstanceSpec spec;
  spec.kind = InstanceKind::sgd_counterexample;
  spec.m = 3;
  spec.n = 3;
  spec.sparsity = 1;
  spec.mu = 1.0 / 3.0;
  spec.noise = 0.0;
  VectorXd truth = VectorXd::Zero(3);
  truth(0) = 1.0;
  return Instance{spec, FiniteSumProblem::least_squares(K, b), Regularizer::l1(1.0 / 3.0, 3),
                  std::move(truth), K, b};
}

void write_instance(std::ostream& out, const Instance& inst) {
  const auto& p = inst.problem;
  const auto& r = inst.regularizer;
  out << "proxvr-instance 1\n";
  out << "kind " << to_string(inst.spec.kind) << '\n';
  out << "seed " << inst.spec.seed << '\n';
  out << "atom " << to_string(p.kind()) << '\n';
  out << "m " << p.m() << '\n';
  out << "n " << p.dim() << '\n';
  out << "intercept " << (p.has_intercept() ? 1 : 0) << '\n';
  out << "regularizer " << to_string(r.kind()) << '\n';
  out << "mu " << format_double(r.mu()) << '\n';
  out << "free " << r.free_tail() << '\n';
  if (r.kind() == RegularizerKind::group_l12) {
    out << "blocks " << r.block_sizes().size();
    for (Index s : r.block_sizes()) out << ' ' << s;
    out << '\n';
  }
  if (r.kind() == RegularizerKind::nuclear)
    out << "shape " << r.matrix_rows() << ' ' << r.matrix_cols() << '\n';
  out << "rows\n";
  for (Index i = 0; i < p.m(); ++i) {
    for (Index j = 0; j < p.dim(); ++j) out << format_double(p.rows()(i, j)) << ' ';
    out << format_double(p.targets()(i)) << '\n';
  }
  out << "truth\n";
  for (Index j = 0; j < inst.truth.size(); ++j)
    out << (j ? " " : "") << format_double(inst.truth(j));
  out << '\n';
}

Instance read_instance(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "proxvr-instance" || version != 1)
    throw std::runtime_error("instance file: missing 'proxvr-instance 1' header");
  InstanceSpec spec;
  AtomKind atom = AtomKind::least_squares;
  RegularizerKind reg_kind = RegularizerKind::l1;
  Index m = 0, n = 0, free_tail = 0, shape_rows = 0, shape_cols = 0;
  bool intercept = false;
  double mu = 0.0;
  std::vector<Index> blocks;
  std::string key;
  while (in >> key && key != "rows") {
    if (key == "kind") {
      std::string v;
      in >> v;
      spec.kind = instance_kind_from_string(v);
    } else if (key == "seed") {
      in >> spec.seed;
    } else if (key == "atom") {
      std::string v;
      in >> v;
      atom = atom_kind_from_string(v);
    } else if (key == "m") {
      in >> m;
    } else if (key == "n") {
      in >> n;
    } else if (key == "intercept") {
      int v = 0;
      in >> v;
      intercept = v != 0;
    } else if (key == "regularizer") {
      std::string v;
      in >> v;
      reg_kind = regularizer_kind_from_string(v);
    } else if (key == "mu") {
      in >> mu;
    } else if (key == "free") {
      in >> free_tail;
    } else if (key == "blocks") {
      std::size_t count = 0;
      in >> count;
      blocks.resize(count);
      for (auto& b : blocks) in >> b;
    } else if (key == "shape") {
      in >> shape_rows >> shape_cols;
    } else {
      throw std::runtime_error("instance file: unknown header key '" + key + "'");
    }
    if (!in) throw std::runtime_error("instance file: malformed value for '" + key + "'");
  }
  if (key != "rows" || m < 1 || n < 1)
    throw std::runtime_error("instance file: header incomplete");
  MatrixXd rows(m, n);
  VectorXd targets(m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) in >> rows(i, j);
    in >> targets(i);
  }
  in >> key;
  if (!in || key != "truth") throw std::runtime_error("instance file: truncated rows section");
  VectorXd truth(n);
  for (Index j = 0; j < n; ++j) in >> truth(j);
  if (!in) throw std::runtime_error("instance file: truncated truth section");

  spec.m = m;
  spec.n = n;
  spec.mu = mu;
  FiniteSumProblem problem(atom, std::move(rows), std::move(targets), intercept);
  Regularizer reg = reg_kind == RegularizerKind::l1 ? Regularizer::l1(mu, n, free_tail)
                    : reg_kind == RegularizerKind::group_l12
                        ? Regularizer::group_l12(mu, blocks, free_tail)
                        : Regularizer::nuclear(mu, shape_rows, shape_cols);
  if (reg.dim() != n) throw std::runtime_error("instance file: regularizer shape mismatch");
  return Instance{spec, std::move(problem), std::move(reg), std::move(truth), MatrixXd(),
                  VectorXd()};
}

}  // namespace proxvr
