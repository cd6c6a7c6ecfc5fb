#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "kvlad/dataset.hpp"
#include "kvlad/geometry.hpp"

namespace kvlad {

struct ClusterOptions {
  int max_iters = 100;
  double rel_tol = 1e-6;  // on relative distortion decrease
  std::uint64_t seed = 0;
  int restarts = 1;
};

// Euclidean codebook: one row per center.
struct ExplicitCodebook {
  Eigen::MatrixXd centers;  // m x d
  // Fingerprint of the embedding map whose outputs trained this codebook;
  // 0 when trained on raw descriptors.
  std::uint64_t map_fingerprint = 0;

  int size() const { return static_cast<int>(centers.rows()); }
  int dim() const { return static_cast<int>(centers.cols()); }
};

// Kernel-space codebook. Centroids exist only through kernel evaluations:
// cluster s is the mean of its members' feature maps, so
// k(x, c_s) = mean_j k(x, t_{s,j}). The retained training descriptors and
// the member index lists are the entire representation; per-cluster kernel
// row sums and centroid self-kernels are cached at construction.
class ImplicitCodebook {
 public:
  ImplicitCodebook() = default;

  static ImplicitCodebook from_partition(std::vector<Descriptor> training,
                                         std::vector<std::vector<std::int32_t>> members,
                                         const KernelSpec& kernel);

  int size() const { return static_cast<int>(members_.size()); }
  const KernelSpec& kernel() const { return kernel_; }
  const std::vector<Descriptor>& training() const { return training_; }
  const std::vector<std::vector<std::int32_t>>& members() const { return members_; }
  std::uint64_t fingerprint() const { return fingerprint_; }

  // mean_j k(x, t_{s,j}) over the members of cluster s.
  double centroid_kernel(const Descriptor& x, int s) const;

  // Cached k(c_s, c_s) = (1/N_s^2) sum_{j,l} k(t_{s,j}, t_{s,l}).
  double centroid_self_kernel(int s) const;

  // Cached within-cluster kernel row sums, aligned with members(s).
  const std::vector<double>& member_row_sums(int s) const;

  // Nearest implicit centroid by Hilbert distance; ties break to the
  // lowest cluster index.
  int assign(const Descriptor& x) const;

 private:
  std::vector<Descriptor> training_;
  std::vector<std::vector<std::int32_t>> members_;
  KernelSpec kernel_;
  std::vector<double> centroid_self_;
  std::vector<std::vector<double>> row_sums_;
  std::uint64_t fingerprint_ = 0;

  void rebuild_cache();
  void check_cluster(int s) const;
};

// Lloyd iterations from k-means++ seeding; deterministic given the seed.
// Empty clusters are refilled with the point farthest from its assigned
// center. Requires m <= number of distinct points.
ExplicitCodebook kmeans_fit(std::span<const EuclideanPoint> points, int m,
                            const ClusterOptions& opts);

// Kernel k-means with implicit centroids: hard assignment by
// k(x,x) - (2/N_s) sum_j k(x,t_j) + (1/N_s^2) sum_{j,l} k(t_j,t_l),
// k-means++ seeding through Hilbert distances, and the same termination
// and empty-cluster policy as kmeans_fit. The M x M training Gram is
// computed once and reused across iterations and restarts.
ImplicitCodebook kernel_kmeans_fit(std::span<const Descriptor> descriptors,
                                   const KernelSpec& kernel, int m,
                                   const ClusterOptions& opts);

// Nearest center by squared Euclidean distance; ties break low.
int assign_explicit(const EuclideanPoint& v, const ExplicitCodebook& cb);

int assign_kernel(const Descriptor& x, const ImplicitCodebook& cb);

// Pools descriptors from all sets in order; when the pool exceeds cap, a
// seeded uniform subsample (original order preserved) is returned.
std::vector<Descriptor> pool_descriptors(std::span<const DescriptorSet> sets,
                                         std::size_t cap, std::uint64_t seed);

}  // namespace kvlad
