#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace kvlad {

enum class GeometryKind : std::uint8_t { Euclidean = 0, Spd = 1, Grassmann = 2 };

// Descriptor space: dim is d for Euclidean, n for SPD (n x n matrices) and
// d for Grassmann; subdim is the subspace dimension p (Grassmann only).
struct Geometry {
  GeometryKind kind = GeometryKind::Euclidean;
  int dim = 0;
  int subdim = 0;

  bool operator==(const Geometry&) const = default;
};

const char* to_string(GeometryKind kind);

struct EuclideanPoint {
  Eigen::VectorXd values;
};

struct SpdMatrix {
  Eigen::MatrixXd values;  // n x n, symmetric positive definite
};

struct GrassmannPoint {
  Eigen::MatrixXd values;  // d x p, orthonormal columns
};

using Descriptor = std::variant<EuclideanPoint, SpdMatrix, GrassmannPoint>;

GeometryKind kind_of(const Descriptor& x);
Geometry geometry_of(const Descriptor& x);

enum class KernelFamily : std::uint8_t {
  EuclideanRbf = 0,
  Linear = 1,
  Stein = 2,
  ProjectionRbf = 3,
};

const char* to_string(KernelFamily family);

// Geometry + kernel family + bandwidth: the single source of truth for all
// kernel evaluations. check() enforces family/geometry compatibility and
// sigma > 0 where used.
struct KernelSpec {
  Geometry geometry;
  KernelFamily family = KernelFamily::EuclideanRbf;
  double bandwidth = 1.0;  // unused for Linear

  void check() const;  // throws std::invalid_argument on violation
  bool operator==(const KernelSpec&) const = default;
};

// Symmetric matrix of inner products between descriptors or sets, with the
// identity of each row.
struct GramMatrix {
  Eigen::MatrixXd values;
  std::vector<std::uint32_t> item_ids;
};

// Rectangular matrix of inner products between two collections (rows x
// cols), used for prediction against a trained kernel model.
struct CrossGram {
  Eigen::MatrixXd values;
  std::vector<std::uint32_t> row_ids;
  std::vector<std::uint32_t> col_ids;
};

// --- kernels -------------------------------------------------------------

// exp(-|x-y|^2 / (2 sigma^2)), in (0, 1].
double rbf_kernel(const EuclideanPoint& x, const EuclideanPoint& y, double sigma);

// Plain dot product; the oracle kernel whose feature map is the identity.
double linear_kernel(const EuclideanPoint& x, const EuclideanPoint& y);

// ln det((A+B)/2) - (ln det A + ln det B)/2, via Cholesky log-determinants.
double stein_divergence(const SpdMatrix& a, const SpdMatrix& b);

// exp(-sigma * stein_divergence(A,B)). Positive definiteness is guaranteed
// only for half-integer sigma or sigma >= (n-1)/2; outside that range a
// warning is logged (once per (sigma, n)).
double stein_kernel(const SpdMatrix& a, const SpdMatrix& b, double sigma);

// True when sigma falls in the range where the Stein kernel is known to be
// positive definite for n x n inputs.
bool stein_sigma_is_pd_safe(double sigma, int n);

// exp(sigma * |U^T V|_F^2), in [1, exp(sigma p)]. Note the positive
// exponent: this kernel rewards aligned subspaces.
double projection_kernel(const GrassmannPoint& u, const GrassmannPoint& v,
                         double sigma);

// Flattens an SPD matrix to the n(n+1)/2 vector of its matrix logarithm:
// the n diagonal entries first, then the upper-triangle off-diagonals
// scaled by sqrt(2) in row-major order. With that scaling the Euclidean
// inner product of two vectorizations equals the Frobenius inner product
// of the matrix logs.
EuclideanPoint spd_log_vec(const SpdMatrix& a);

// kxx - 2 kxy + kyy. Slightly negative results from rounding are clamped
// to zero down to -1e-9; anything below that raises NumericalError.
double hilbert_dist_sq(double kxx, double kxy, double kyy);

// Evaluates the kernel named by spec on two descriptors of its geometry.
double kernel_eval(const KernelSpec& spec, const Descriptor& x,
                   const Descriptor& y);

// Pairwise kernel matrix; the upper triangle is evaluated once and
// mirrored. item_ids are the positional indices 0..N-1.
GramMatrix gram(std::span<const Descriptor> descriptors, const KernelSpec& spec);

// --- validation ----------------------------------------------------------

struct ValidationReport {
  bool ok = true;
  std::string diagnostic;  // names the failed invariant when !ok
};

ValidationReport validate(const Descriptor& x, const Geometry& g);

class Fnv1a;

// Feeds the raw values of a descriptor into a fingerprint hash.
void hash_descriptor(Fnv1a& h, const Descriptor& d);

}  // namespace kvlad
