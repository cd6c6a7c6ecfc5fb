#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/geometry.hpp"

namespace kvlad {

enum class EncoderTag : std::uint8_t {
  Vlad = 0,
  LeVlad = 1,
  Kvlad = 2,
  Nvlad = 3,
  Svlad = 4,
  Fvlad = 5,
};

const char* to_string(EncoderTag tag);

// Normalization steps; when several are requested they apply in the fixed
// order intra -> ssr -> global.
struct NormalizationSpec {
  bool intra = false;   // per-block l2 (zero blocks untouched)
  bool ssr = false;     // signed square root, elementwise
  bool global = false;  // whole-vector l2 (skipped when all-zero)

  std::uint8_t flags() const {
    return static_cast<std::uint8_t>((intra ? 1 : 0) | (ssr ? 2 : 0) | (global ? 4 : 0));
  }
  static NormalizationSpec from_flags(std::uint8_t f) {
    return {(f & 1) != 0, (f & 2) != 0, (f & 4) != 0};
  }
};

// Explicit encoded vector with per-block structure. Block s holds the
// residual sum of cell s; cells that received no descriptor stay exactly
// zero. norm_flags records which normalizations have been applied.
struct VladCode {
  std::vector<Eigen::VectorXd> blocks;
  EncoderTag encoder = EncoderTag::Vlad;
  std::uint8_t norm_flags = 0;

  Eigen::Index length() const;
  Eigen::VectorXd flattened() const;
};

// --- conventional VLAD -----------------------------------------------------

// Block s = sum over assigned descriptors of (c_s - x_i); normalization
// applied last. The set must be Euclidean and non-empty.
VladCode vlad_encode(const DescriptorSet& set, const ExplicitCodebook& cb,
                     const NormalizationSpec& norm);

VladCode normalize(VladCode code, const NormalizationSpec& spec);

// --- exact kernel VLAD -------------------------------------------------------

// Per-set assignment and block statistics reused across pairwise inner
// products. block_norm_sq[s] is |delta_s|^2 in the Hilbert space (clamped
// at zero); block_nonzero[s] applies a relative threshold against the
// no-cancellation bound (sum_i |phi(c)-phi(x_i)|)^2, so blocks that are
// zero up to rounding are treated as exactly zero.
struct KvladProfile {
  std::vector<std::vector<int>> block_items;
  std::vector<double> point_centroid_kernel;  // k(x_i, c_{assigned(i)})
  std::vector<double> point_self_kernel;      // k(x_i, x_i)
  std::vector<double> block_norm_sq;
  std::vector<bool> block_nonzero;
};

KvladProfile kvlad_profile(const DescriptorSet& set, const ImplicitCodebook& cb);

// Eq.-4-style inner product between the implicit codes of X and Y, using
// kernel values only. The normalized form sums per-block cosines; blocks
// where either side has zero norm contribute 0.
double kvlad_inner(const DescriptorSet& x, const DescriptorSet& y,
                   const ImplicitCodebook& cb, bool normalized);

double kvlad_inner(const DescriptorSet& x, const KvladProfile& px,
                   const DescriptorSet& y, const KvladProfile& py,
                   const ImplicitCodebook& cb, bool normalized);

// Pairwise kvlad_inner over sets; profiles are built once per set and the
// upper triangle evaluated once. item_ids are the set ids.
GramMatrix kvlad_gram(std::span<const DescriptorSet> sets, const ImplicitCodebook& cb,
                      bool normalized);

// Rectangular rows-vs-cols variant for test-against-train prediction.
CrossGram kvlad_cross_gram(std::span<const DescriptorSet> rows,
                           std::span<const DescriptorSet> cols,
                           const ImplicitCodebook& cb, bool normalized);

// <X,X> - 2<X,Y> + <Y,Y> with unnormalized inner products; feeds the
// optional RBF-on-top Gram exp(-gamma d^2).
double kvlad_dist_sq(const DescriptorSet& x, const DescriptorSet& y,
                     const ImplicitCodebook& cb);

// --- Nystrom map -------------------------------------------------------------

struct NystromMap {
  std::vector<Descriptor> landmarks;
  KernelSpec kernel;
  Eigen::MatrixXd projection;   // r x M rows of Sigma^{-1/2} V^T
  Eigen::VectorXd eigenvalues;  // retained, descending
  std::uint64_t fingerprint = 0;

  int rank() const { return static_cast<int>(projection.rows()); }
};

// Eigendecomposes the landmark Gram and keeps the top eigenpairs above
// eps_rel * lambda_max (the effective rank may come out below r).
NystromMap nystrom_fit(std::span<const Descriptor> landmarks, const KernelSpec& kernel,
                       int r, double eps_rel = 1e-10);

// z_N(x) = Sigma^{-1/2} V^T [k(x,t_1),...,k(x,t_M)]^T.
EuclideanPoint nystrom_map(const Descriptor& x, const NystromMap& map);

// --- random Fourier map ------------------------------------------------------

struct FourierMap {
  Eigen::MatrixXd omegas;   // r x d, rows drawn from N(0, sigma^{-2} I)
  Eigen::VectorXd offsets;  // r, uniform on [0, 2pi)
  double sigma = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t fingerprint = 0;

  int rank() const { return static_cast<int>(omegas.rows()); }
  int dim() const { return static_cast<int>(omegas.cols()); }
};

// Draws the map deterministically from the seed (Box-Muller); regeneration
// with identical (d, sigma, r, seed) is bitwise identical.
FourierMap fourier_fit(int d, double sigma, int r, std::uint64_t seed);

// z_F(x) = sqrt(2/r) [cos(w_1^T x + b_1), ..., cos(w_r^T x + b_r)].
EuclideanPoint fourier_map(const EuclideanPoint& x, const FourierMap& map);

// --- local subspace projections ----------------------------------------------

struct SubspaceCluster {
  Eigen::MatrixXd basis_coeffs;  // U_s, N_s x r_s
  Eigen::VectorXd eigenvalues;   // Lambda_s, descending, all > eps floor
  Eigen::VectorXd centroid;      // projected centroid coordinates, r_s
};

// Per-codeword orthonormal bases of span{phi(t_{s,j})} with projected
// centroid coordinates Lambda^{1/2} U^T 1 / N_s. Holds a reference to the
// codebook whose members define the subspaces.
class SubspaceProjector {
 public:
  SubspaceProjector() = default;
  SubspaceProjector(std::vector<SubspaceCluster> clusters,
                    std::shared_ptr<const ImplicitCodebook> codebook);

  const std::vector<SubspaceCluster>& clusters() const { return clusters_; }
  const SubspaceCluster& cluster(int s) const;
  const std::shared_ptr<const ImplicitCodebook>& codebook() const { return codebook_; }
  std::uint64_t codebook_fingerprint() const { return codebook_fingerprint_; }
  int size() const { return static_cast<int>(clusters_.size()); }

 private:
  std::vector<SubspaceCluster> clusters_;
  std::shared_ptr<const ImplicitCodebook> codebook_;
  std::uint64_t codebook_fingerprint_ = 0;
};

// Eigendecomposes each within-cluster kernel matrix K_s and keeps
// min(r, N_s) eigenpairs above eps_rel * lambda_max. r <= 0 keeps the full
// rank (subject to the floor).
SubspaceProjector subspace_fit(std::shared_ptr<const ImplicitCodebook> cb, int r = 0,
                               double eps_rel = 1e-10);

// pi_s(x) = Lambda_s^{-1/2} U_s^T [k(x,t_{s,1}),...,k(x,t_{s,N_s})]^T.
EuclideanPoint subspace_project(const Descriptor& x, int s, const SubspaceProjector& proj);

// Assigns through the implicit codebook, then sums (projected centroid -
// projected descriptor) per block; blocks may have different lengths r_s.
VladCode svlad_encode(const DescriptorSet& set, const ImplicitCodebook& cb,
                      const SubspaceProjector& proj, const NormalizationSpec& norm);

// --- map-then-encode pipelines -----------------------------------------------

std::vector<EuclideanPoint> map_all(std::span<const Descriptor> descriptors,
                                    const NystromMap& map);
std::vector<EuclideanPoint> map_all(std::span<const Descriptor> descriptors,
                                    const FourierMap& map);

// Maps every descriptor and runs conventional VLAD in the r-dimensional
// space. The codebook must have been trained on vectors produced by this
// exact map (checked via the recorded fingerprints).
VladCode pipeline_encode(const DescriptorSet& set, const NystromMap& map,
                         const ExplicitCodebook& cb, const NormalizationSpec& norm);
VladCode pipeline_encode(const DescriptorSet& set, const FourierMap& map,
                         const ExplicitCodebook& cb, const NormalizationSpec& norm);

}  // namespace kvlad
