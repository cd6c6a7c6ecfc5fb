#include "kvlad/geometry.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kvlad/errors.hpp"
#include "kvlad/hash.hpp"
#include "kvlad/linalg.hpp"
#include "kvlad/log.hpp"

namespace kvlad {

namespace {

constexpr double kSymmetryRelTol = 1e-10;
constexpr double kOrthonormalTol = 1e-8;
constexpr double kHilbertClampTol = 1e-9;

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite values");
}

bool orthonormal_within(const Eigen::MatrixXd& u, double tol) {
  const Eigen::MatrixXd gramm = u.transpose() * u;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(u.cols(), u.cols());
  return (gramm - eye).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

const char* to_string(GeometryKind kind) {
  switch (kind) {
    case GeometryKind::Euclidean: return "euclidean";
    case GeometryKind::Spd: return "spd";
    case GeometryKind::Grassmann: return "grassmann";
  }
  return "unknown";
}

const char* to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::EuclideanRbf: return "rbf";
    case KernelFamily::Linear: return "linear";
    case KernelFamily::Stein: return "stein";
    case KernelFamily::ProjectionRbf: return "projection";
  }
  return "unknown";
}

GeometryKind kind_of(const Descriptor& x) {
  return static_cast<GeometryKind>(x.index());
}

Geometry geometry_of(const Descriptor& x) {
  Geometry g;
  g.kind = kind_of(x);
  switch (g.kind) {
    case GeometryKind::Euclidean:
      g.dim = static_cast<int>(std::get<EuclideanPoint>(x).values.size());
      break;
    case GeometryKind::Spd:
      g.dim = static_cast<int>(std::get<SpdMatrix>(x).values.rows());
      break;
    case GeometryKind::Grassmann:
      g.dim = static_cast<int>(std::get<GrassmannPoint>(x).values.rows());
      g.subdim = static_cast<int>(std::get<GrassmannPoint>(x).values.cols());
      break;
  }
  return g;
}

void KernelSpec::check() const {
  const bool euclidean_family =
      family == KernelFamily::EuclideanRbf || family == KernelFamily::Linear;
  if (euclidean_family && geometry.kind != GeometryKind::Euclidean)
    throw std::invalid_argument("KernelSpec: " + std::string(to_string(family)) +
                                " kernel requires Euclidean geometry");
  if (family == KernelFamily::Stein && geometry.kind != GeometryKind::Spd)
    throw std::invalid_argument("KernelSpec: stein kernel requires SPD geometry");
  if (family == KernelFamily::ProjectionRbf && geometry.kind != GeometryKind::Grassmann)
    throw std::invalid_argument("KernelSpec: projection kernel requires Grassmann geometry");
  if (family != KernelFamily::Linear && !(bandwidth > 0.0))
    throw std::invalid_argument("KernelSpec: bandwidth must be positive");
  if (geometry.dim <= 0) throw std::invalid_argument("KernelSpec: dim must be positive");
  if (geometry.kind == GeometryKind::Grassmann &&
      (geometry.subdim <= 0 || geometry.subdim > geometry.dim))
    throw std::invalid_argument("KernelSpec: Grassmann requires 0 < p <= d");
}

double rbf_kernel(const EuclideanPoint& x, const EuclideanPoint& y, double sigma) {
  if (x.values.size() != y.values.size())
    throw std::invalid_argument("rbf_kernel: dimension mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("rbf_kernel: sigma must be positive");
  require_finite(x.values, "rbf_kernel");
  require_finite(y.values, "rbf_kernel");
  const double d2 = (x.values - y.values).squaredNorm();
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

double linear_kernel(const EuclideanPoint& x, const EuclideanPoint& y) {
  if (x.values.size() != y.values.size())
    throw std::invalid_argument("linear_kernel: dimension mismatch");
  return x.values.dot(y.values);
}

double stein_divergence(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw std::invalid_argument("stein_divergence: size mismatch");
  const double logdet_mean = cholesky_logdet(0.5 * (a.values + b.values));
  const double logdet_a = cholesky_logdet(a.values);
  const double logdet_b = cholesky_logdet(b.values);
  return logdet_mean - 0.5 * (logdet_a + logdet_b);
}

bool stein_sigma_is_pd_safe(double sigma, int n) {
  if (sigma >= 0.5 * (n - 1) - 1e-12) return true;
  const double doubled = 2.0 * sigma;
  return std::abs(doubled - std::round(doubled)) <= 1e-12 && doubled >= 1.0 - 1e-12;
}

double stein_kernel(const SpdMatrix& a, const SpdMatrix& b, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("stein_kernel: sigma must be positive");
  const int n = static_cast<int>(a.values.rows());
  if (!stein_sigma_is_pd_safe(sigma, n)) {
    std::ostringstream key;
    key << "stein:" << sigma << ":" << n;
    std::ostringstream msg;
    msg << "stein kernel with sigma=" << sigma << " on " << n << "x" << n
        << " matrices: positive definiteness is not guaranteed (needs a "
           "half-integer or sigma >= "
        << 0.5 * (n - 1) << ")";
    log::warn_once(key.str(), msg.str());
  }
  return std::exp(-sigma * stein_divergence(a, b));
}

double projection_kernel(const GrassmannPoint& u, const GrassmannPoint& v,
                         double sigma) {
  if (u.values.rows() != v.values.rows() || u.values.cols() != v.values.cols())
    throw std::invalid_argument("projection_kernel: shape mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("projection_kernel: sigma must be positive");
  if (!orthonormal_within(u.values, kOrthonormalTol))
    throw std::invalid_argument("projection_kernel: first argument not orthonormal");
  if (!orthonormal_within(v.values, kOrthonormalTol))
    throw std::invalid_argument("projection_kernel: second argument not orthonormal");
  // |U^T V|_F^2 accumulated so that swapping the arguments (which
  // transposes the overlap matrix) produces the bitwise-identical sum.
  const Eigen::MatrixXd overlap = u.values.transpose() * v.values;
  const Eigen::Index p = overlap.rows();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    acc += overlap(i, i) * overlap(i, i);
    for (Eigen::Index j = i + 1; j < p; ++j)
      acc += overlap(i, j) * overlap(i, j) + overlap(j, i) * overlap(j, i);
  }
  return std::exp(sigma * acc);
}

EuclideanPoint spd_log_vec(const SpdMatrix& a) {
  const Eigen::Index n = a.values.rows();
  if (n != a.values.cols()) throw std::invalid_argument("spd_log_vec: not square");
  const SymmetricEigen eig = jacobi_eigen_sym(a.values);
  if (eig.values(n - 1) <= 0.0)
    throw NumericalError("spd_log_vec: matrix is not positive definite");
  const Eigen::VectorXd loglam = eig.values.array().log();
  const Eigen::MatrixXd logm =
      eig.vectors * loglam.asDiagonal() * eig.vectors.transpose();

  EuclideanPoint out;
  out.values.resize(n * (n + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) out.values(k++) = logm(i, i);
  const double root2 = std::sqrt(2.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) out.values(k++) = root2 * logm(i, j);
  return out;
}

double hilbert_dist_sq(double kxx, double kxy, double kyy) {
  if (!std::isfinite(kxx) || !std::isfinite(kxy) || !std::isfinite(kyy))
    throw std::invalid_argument("hilbert_dist_sq: non-finite kernel value");
  const double d2 = kxx - 2.0 * kxy + kyy;
  if (d2 < -kHilbertClampTol)
    throw NumericalError("hilbert_dist_sq: inconsistent kernel values (d^2 = " +
                         std::to_string(d2) + ")");
  return d2 < 0.0 ? 0.0 : d2;
}

double kernel_eval(const KernelSpec& spec, const Descriptor& x, const Descriptor& y) {
  if (kind_of(x) != spec.geometry.kind || kind_of(y) != spec.geometry.kind)
    throw std::invalid_argument("kernel_eval: descriptor geometry does not match kernel");
  switch (spec.family) {
    case KernelFamily::EuclideanRbf:
      return rbf_kernel(std::get<EuclideanPoint>(x), std::get<EuclideanPoint>(y),
                        spec.bandwidth);
    case KernelFamily::Linear:
      return linear_kernel(std::get<EuclideanPoint>(x), std::get<EuclideanPoint>(y));
    case KernelFamily::Stein:
      return stein_kernel(std::get<SpdMatrix>(x), std::get<SpdMatrix>(y),
                          spec.bandwidth);
    case KernelFamily::ProjectionRbf:
      return projection_kernel(std::get<GrassmannPoint>(x),
                               std::get<GrassmannPoint>(y), spec.bandwidth);
  }
  throw std::invalid_argument("kernel_eval: unknown kernel family");
}

GramMatrix gram(std::span<const Descriptor> descriptors, const KernelSpec& spec) {
  spec.check();
  const Eigen::Index n = static_cast<Eigen::Index>(descriptors.size());
  GramMatrix out;
  out.values.resize(n, n);
  out.item_ids.resize(descriptors.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.item_ids[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    for (Eigen::Index j = i; j < n; ++j) {
      const double k = kernel_eval(spec, descriptors[static_cast<std::size_t>(i)],
                                   descriptors[static_cast<std::size_t>(j)]);
      out.values(i, j) = k;
      out.values(j, i) = k;
    }
  }
  return out;
}

ValidationReport validate(const Descriptor& x, const Geometry& g) {
  if (kind_of(x) != g.kind)
    return {false, "geometry mismatch: expected " + std::string(to_string(g.kind)) +
                       ", got " + std::string(to_string(kind_of(x)))};

  switch (g.kind) {
    case GeometryKind::Euclidean: {
      const auto& p = std::get<EuclideanPoint>(x);
      if (static_cast<int>(p.values.size()) != g.dim)
        return {false, "dimension mismatch"};
      if (!p.values.allFinite()) return {false, "non-finite values"};
      return {};
    }
    case GeometryKind::Spd: {
      const auto& m = std::get<SpdMatrix>(x).values;
      if (m.rows() != m.cols() || static_cast<int>(m.rows()) != g.dim)
        return {false, "dimension mismatch"};
      if (!m.allFinite()) return {false, "non-finite values"};
      const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
      if (max_asymmetry(m) > kSymmetryRelTol * scale) return {false, "asymmetric"};
      if (!cholesky_succeeds(0.5 * (m + m.transpose())))
        return {false, "not positive definite"};
      return {};
    }
    case GeometryKind::Grassmann: {
      const auto& u = std::get<GrassmannPoint>(x).values;
      if (static_cast<int>(u.rows()) != g.dim || static_cast<int>(u.cols()) != g.subdim)
        return {false, "dimension mismatch"};
      if (!u.allFinite()) return {false, "non-finite values"};
      if (!orthonormal_within(u, kOrthonormalTol)) return {false, "not orthonormal"};
      return {};
    }
  }
  return {false, "unknown geometry"};
}

void hash_descriptor(Fnv1a& h, const Descriptor& d) {
  switch (kind_of(d)) {
    case GeometryKind::Euclidean: {
      const auto& v = std::get<EuclideanPoint>(d).values;
      h.f64s({v.data(), static_cast<std::size_t>(v.size())});
      break;
    }
    case GeometryKind::Spd: {
      const auto& m = std::get<SpdMatrix>(d).values;
      h.f64s({m.data(), static_cast<std::size_t>(m.size())});
      break;
    }
    case GeometryKind::Grassmann: {
      const auto& m = std::get<GrassmannPoint>(d).values;
      h.f64s({m.data(), static_cast<std::size_t>(m.size())});
      break;
    }
  }
}

}  // namespace kvlad
