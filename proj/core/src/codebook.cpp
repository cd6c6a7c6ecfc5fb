#include "kvlad/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "kvlad/errors.hpp"
#include "kvlad/hash.hpp"
#include "kvlad/log.hpp"
#include "kvlad/rng.hpp"

namespace kvlad {

namespace {

using DistFn = std::function<double(std::size_t, std::size_t)>;

// k-means++ over item indices. dist2(i, j) is the squared distance from
// item i to item j taken as a center candidate. Falls back to the lowest
// unchosen index when all remaining weights vanish (duplicate-heavy data).
// The draw sequence is identical for the Euclidean and kernel variants,
// which is what makes the linear-kernel equivalence hold path-for-path.
std::vector<std::size_t> kmeanspp_indices(std::size_t n, int m, Rng& rng,
                                          const DistFn& dist2) {
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(m));
  std::vector<bool> is_chosen(n, false);
  std::vector<double> d2(n, 0.0);

  const std::size_t first = rng.uniform_index(n);
  chosen.push_back(first);
  is_chosen[first] = true;
  for (std::size_t i = 0; i < n; ++i) d2[i] = is_chosen[i] ? 0.0 : dist2(i, first);

  while (chosen.size() < static_cast<std::size_t>(m)) {
    std::size_t idx = sample_discrete(d2, rng);
    if (idx >= n) {
      idx = 0;
      while (idx < n && is_chosen[idx]) ++idx;
      if (idx >= n) throw NumericalError("kmeans++: exhausted candidates");
    }
    chosen.push_back(idx);
    is_chosen[idx] = true;
    d2[idx] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (is_chosen[i]) continue;
      d2[i] = std::min(d2[i], dist2(i, idx));
    }
  }
  return chosen;
}

// Moves the farthest point of a donor cluster (size >= 2) into each empty
// cluster, lowest empty index first. dist2_assigned holds each point's
// squared distance to its currently assigned center.
void refill_empty_clusters(std::vector<int>& assign, std::vector<double>& dist2_assigned,
                           std::vector<int>& sizes) {
  const int m = static_cast<int>(sizes.size());
  for (int s = 0; s < m; ++s) {
    if (sizes[static_cast<std::size_t>(s)] > 0) continue;
    std::ptrdiff_t best = -1;
    double best_d = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < assign.size(); ++i) {
      if (sizes[static_cast<std::size_t>(assign[i])] < 2) continue;
      if (dist2_assigned[i] > best_d) {
        best_d = dist2_assigned[i];
        best = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (best < 0) throw NumericalError("kmeans: cannot refill empty cluster");
    sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(best)])]--;
    assign[static_cast<std::size_t>(best)] = s;
    sizes[static_cast<std::size_t>(s)] = 1;
    dist2_assigned[static_cast<std::size_t>(best)] = 0.0;
  }
}

// Lloyd distortion is non-increasing in exact arithmetic. The tolerance is
// 1e-12 relative plus an absolute floor scaled by the summand magnitude:
// each of the n distance terms cancels values of size `term_scale`, so the
// accumulated rounding drift can reach ~n * term_scale * 1e-14 when the
// distortion itself is many orders smaller (degenerate bandwidths).
void check_monotone(double d_new, double d_prev, double n, double term_scale) {
  const double tol =
      1e-12 * std::max(1.0, std::abs(d_prev)) + 1e-14 * n * std::max(1.0, term_scale);
  if (d_new > d_prev + tol)
    throw NumericalError("kmeans: distortion increased across an iteration");
}

struct FitOutcome {
  std::vector<int> assign;
  double distortion = 0.0;
  int iterations = 0;
};

// One Lloyd run on explicit points. centers_out rows end up as the means
// of the final partition.
FitOutcome lloyd_explicit(const Eigen::MatrixXd& pts, int m, const ClusterOptions& opts,
                          std::uint64_t seed, Eigen::MatrixXd& centers_out) {
  const std::size_t n = static_cast<std::size_t>(pts.rows());
  Rng rng(seed);

  const auto seeds = kmeanspp_indices(
      n, m, rng, [&](std::size_t i, std::size_t j) {
        return std::max(0.0, (pts.row(static_cast<Eigen::Index>(i)) -
                              pts.row(static_cast<Eigen::Index>(j)))
                                 .squaredNorm());
      });

  Eigen::MatrixXd centers(m, pts.cols());
  for (int s = 0; s < m; ++s)
    centers.row(s) = pts.row(static_cast<Eigen::Index>(seeds[static_cast<std::size_t>(s)]));

  std::vector<int> assign(n, 0);
  std::vector<double> dist2(n, 0.0);

  const auto assign_pass = [&](std::vector<int>& a, std::vector<double>& d2) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d =
          std::max(0.0, (pts.row(static_cast<Eigen::Index>(i)) - centers.row(0)).squaredNorm());
      for (int s = 1; s < m; ++s) {
        const double d =
            std::max(0.0, (pts.row(static_cast<Eigen::Index>(i)) - centers.row(s)).squaredNorm());
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      a[i] = best;
      d2[i] = best_d;
      total += best_d;
    }
    return total;
  };

  const auto update_pass = [&](std::vector<int>& a, std::vector<double>& d2) {
    std::vector<int> sizes(static_cast<std::size_t>(m), 0);
    for (int s : a) sizes[static_cast<std::size_t>(s)]++;
    refill_empty_clusters(a, d2, sizes);
    centers.setZero();
    for (std::size_t i = 0; i < n; ++i)
      centers.row(a[i]) += pts.row(static_cast<Eigen::Index>(i));
    for (int s = 0; s < m; ++s)
      centers.row(s) /= static_cast<double>(sizes[static_cast<std::size_t>(s)]);
  };

  const double term_scale = pts.rowwise().squaredNorm().maxCoeff();

  double d_prev = assign_pass(assign, dist2);
  FitOutcome out;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    out.iterations = iter + 1;
    update_pass(assign, dist2);
    std::vector<int> next(n, 0);
    std::vector<double> next_d2(n, 0.0);
    const double d_new = assign_pass(next, next_d2);
    check_monotone(d_new, d_prev, static_cast<double>(n), term_scale);
    if (next == assign) {
      d_prev = d_new;
      break;
    }
    const double rel = (d_prev - d_new) / std::max(d_prev, std::numeric_limits<double>::min());
    assign = std::move(next);
    dist2 = std::move(next_d2);
    d_prev = d_new;
    if (rel < opts.rel_tol) break;
  }
  update_pass(assign, dist2);

  centers_out = centers;
  out.assign = std::move(assign);
  out.distortion = d_prev;
  return out;
}

// One kernel-Lloyd run on a precomputed Gram. Mirrors lloyd_explicit step
// for step; centroids are member means, so the update step only rebuilds
// the member lists.
FitOutcome lloyd_kernel(const Eigen::MatrixXd& g, int m, const ClusterOptions& opts,
                        std::uint64_t seed,
                        std::vector<std::vector<std::int32_t>>& members_out) {
  const std::size_t n = static_cast<std::size_t>(g.rows());
  Rng rng(seed);

  const auto seeds = kmeanspp_indices(n, m, rng, [&](std::size_t i, std::size_t j) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto jj = static_cast<Eigen::Index>(j);
    return std::max(0.0, g(ii, ii) - 2.0 * g(ii, jj) + g(jj, jj));
  });

  std::vector<std::vector<std::int32_t>> members(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s)
    members[static_cast<std::size_t>(s)] = {
        static_cast<std::int32_t>(seeds[static_cast<std::size_t>(s)])};

  std::vector<int> assign(n, 0);
  std::vector<double> dist2(n, 0.0);

  const auto assign_pass = [&](std::vector<int>& a, std::vector<double>& d2) {
    // Per-cluster constants for this iteration.
    std::vector<double> within(static_cast<std::size_t>(m), 0.0);
    for (int s = 0; s < m; ++s) {
      const auto& mem = members[static_cast<std::size_t>(s)];
      double acc = 0.0;
      for (std::int32_t j : mem)
        for (std::int32_t l : mem) acc += g(j, l);
      const double ns = static_cast<double>(mem.size());
      within[static_cast<std::size_t>(s)] = acc / (ns * ns);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int s = 0; s < m; ++s) {
        const auto& mem = members[static_cast<std::size_t>(s)];
        double cross = 0.0;
        for (std::int32_t j : mem) cross += g(ii, j);
        const double d = std::max(
            0.0, g(ii, ii) - 2.0 * cross / static_cast<double>(mem.size()) +
                     within[static_cast<std::size_t>(s)]);
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      a[i] = best;
      d2[i] = best_d;
      total += best_d;
    }
    return total;
  };

  const auto update_pass = [&](std::vector<int>& a, std::vector<double>& d2) {
    std::vector<int> sizes(static_cast<std::size_t>(m), 0);
    for (int s : a) sizes[static_cast<std::size_t>(s)]++;
    refill_empty_clusters(a, d2, sizes);
    for (auto& mem : members) mem.clear();
    for (std::size_t i = 0; i < n; ++i)
      members[static_cast<std::size_t>(a[i])].push_back(static_cast<std::int32_t>(i));
  };

  const double term_scale = g.cwiseAbs().maxCoeff();

  double d_prev = assign_pass(assign, dist2);
  FitOutcome out;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    out.iterations = iter + 1;
    update_pass(assign, dist2);
    std::vector<int> next(n, 0);
    std::vector<double> next_d2(n, 0.0);
    const double d_new = assign_pass(next, next_d2);
    check_monotone(d_new, d_prev, static_cast<double>(n), term_scale);
    if (next == assign) {
      d_prev = d_new;
      break;
    }
    const double rel = (d_prev - d_new) / std::max(d_prev, std::numeric_limits<double>::min());
    assign = std::move(next);
    dist2 = std::move(next_d2);
    d_prev = d_new;
    if (rel < opts.rel_tol) break;
  }
  update_pass(assign, dist2);

  members_out = members;
  out.assign = std::move(assign);
  out.distortion = d_prev;
  return out;
}

void check_cluster_options(const ClusterOptions& opts) {
  if (opts.max_iters < 1) throw std::invalid_argument("ClusterOptions: max_iters must be >= 1");
  if (!(opts.rel_tol >= 0.0)) throw std::invalid_argument("ClusterOptions: rel_tol must be >= 0");
  if (opts.restarts < 1) throw std::invalid_argument("ClusterOptions: restarts must be >= 1");
}

std::size_t count_distinct(std::span<const EuclideanPoint> points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  const auto less = [&](std::size_t a, std::size_t b) {
    const auto& va = points[a].values;
    const auto& vb = points[b].values;
    for (Eigen::Index k = 0; k < va.size(); ++k) {
      if (va(k) < vb(k)) return true;
      if (va(k) > vb(k)) return false;
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::size_t distinct = points.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i)
    if (less(order[i - 1], order[i])) ++distinct;
  return distinct;
}

}  // namespace

ExplicitCodebook kmeans_fit(std::span<const EuclideanPoint> points, int m,
                            const ClusterOptions& opts) {
  check_cluster_options(opts);
  if (points.empty()) throw std::invalid_argument("kmeans_fit: no points");
  if (m < 1) throw std::invalid_argument("kmeans_fit: m must be >= 1");
  const Eigen::Index d = points[0].values.size();
  for (const auto& p : points)
    if (p.values.size() != d) throw std::invalid_argument("kmeans_fit: dimension mismatch");
  if (static_cast<std::size_t>(m) > count_distinct(points))
    throw std::invalid_argument("kmeans_fit: m exceeds the number of distinct points");

  Eigen::MatrixXd pts(static_cast<Eigen::Index>(points.size()), d);
  for (std::size_t i = 0; i < points.size(); ++i)
    pts.row(static_cast<Eigen::Index>(i)) = points[i].values;

  Eigen::MatrixXd best_centers;
  double best_distortion = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    Eigen::MatrixXd centers;
    const FitOutcome fit = lloyd_explicit(pts, m, opts, derive_seed(opts.seed, r), centers);
    if (fit.distortion < best_distortion) {
      best_distortion = fit.distortion;
      best_centers = centers;
    }
  }
  return ExplicitCodebook{std::move(best_centers), 0};
}

ImplicitCodebook kernel_kmeans_fit(std::span<const Descriptor> descriptors,
                                   const KernelSpec& kernel, int m,
                                   const ClusterOptions& opts) {
  check_cluster_options(opts);
  kernel.check();
  if (descriptors.empty()) throw std::invalid_argument("kernel_kmeans_fit: no descriptors");
  if (m < 1 || static_cast<std::size_t>(m) > descriptors.size())
    throw std::invalid_argument("kernel_kmeans_fit: need 1 <= m <= number of descriptors");
  for (const auto& x : descriptors)
    if (kind_of(x) != kernel.geometry.kind)
      throw std::invalid_argument("kernel_kmeans_fit: descriptor geometry mismatch");

  const GramMatrix g = gram(descriptors, kernel);

  std::vector<std::vector<std::int32_t>> best_members;
  double best_distortion = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    std::vector<std::vector<std::int32_t>> members;
    const FitOutcome fit = lloyd_kernel(g.values, m, opts, derive_seed(opts.seed, r), members);
    if (fit.distortion < best_distortion) {
      best_distortion = fit.distortion;
      best_members = std::move(members);
    }
  }

  return ImplicitCodebook::from_partition(
      std::vector<Descriptor>(descriptors.begin(), descriptors.end()),
      std::move(best_members), kernel);
}

ImplicitCodebook ImplicitCodebook::from_partition(
    std::vector<Descriptor> training, std::vector<std::vector<std::int32_t>> members,
    const KernelSpec& kernel) {
  kernel.check();
  ImplicitCodebook cb;
  cb.training_ = std::move(training);
  cb.members_ = std::move(members);
  cb.kernel_ = kernel;

  // Partition invariant: disjoint, non-empty, covering.
  std::vector<bool> seen(cb.training_.size(), false);
  std::size_t covered = 0;
  for (const auto& mem : cb.members_) {
    if (mem.empty()) throw std::invalid_argument("ImplicitCodebook: empty member list");
    for (std::int32_t j : mem) {
      if (j < 0 || static_cast<std::size_t>(j) >= cb.training_.size())
        throw std::invalid_argument("ImplicitCodebook: member index out of range");
      if (seen[static_cast<std::size_t>(j)])
        throw std::invalid_argument("ImplicitCodebook: member lists overlap");
      seen[static_cast<std::size_t>(j)] = true;
      ++covered;
    }
  }
  if (covered != cb.training_.size())
    throw std::invalid_argument("ImplicitCodebook: member lists do not cover the training set");

  for (const auto& x : cb.training_)
    if (kind_of(x) != kernel.geometry.kind)
      throw std::invalid_argument("ImplicitCodebook: descriptor geometry mismatch");

  cb.rebuild_cache();

  Fnv1a h;
  h.u8(static_cast<std::uint8_t>(kernel.geometry.kind));
  h.u32(static_cast<std::uint32_t>(kernel.geometry.dim));
  h.u32(static_cast<std::uint32_t>(kernel.geometry.subdim));
  h.u8(static_cast<std::uint8_t>(kernel.family));
  h.f64(kernel.bandwidth);
  h.u32(static_cast<std::uint32_t>(cb.training_.size()));
  for (const auto& t : cb.training_) hash_descriptor(h, t);
  for (const auto& mem : cb.members_) {
    h.u32(static_cast<std::uint32_t>(mem.size()));
    for (std::int32_t j : mem) h.u32(static_cast<std::uint32_t>(j));
  }
  cb.fingerprint_ = h.value();
  return cb;
}

void ImplicitCodebook::rebuild_cache() {
  const int m = size();
  centroid_self_.assign(static_cast<std::size_t>(m), 0.0);
  row_sums_.assign(static_cast<std::size_t>(m), {});
  for (int s = 0; s < m; ++s) {
    const auto& mem = members_[static_cast<std::size_t>(s)];
    const std::size_t ns = mem.size();
    auto& rows = row_sums_[static_cast<std::size_t>(s)];
    rows.assign(ns, 0.0);
    // Within-cluster kernels; symmetric, so evaluate each pair once.
    std::vector<double> k_cache(ns * ns, 0.0);
    for (std::size_t a = 0; a < ns; ++a) {
      for (std::size_t b = a; b < ns; ++b) {
        const double k =
            kernel_eval(kernel_, training_[static_cast<std::size_t>(mem[a])],
                        training_[static_cast<std::size_t>(mem[b])]);
        k_cache[a * ns + b] = k;
        k_cache[b * ns + a] = k;
      }
    }
    double total = 0.0;
    for (std::size_t a = 0; a < ns; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < ns; ++b) row += k_cache[a * ns + b];
      rows[a] = row;
      total += row;
    }
    const double dns = static_cast<double>(ns);
    centroid_self_[static_cast<std::size_t>(s)] = total / (dns * dns);
  }
}

void ImplicitCodebook::check_cluster(int s) const {
  if (s < 0 || s >= size())
    throw std::invalid_argument("ImplicitCodebook: cluster index out of range");
}

double ImplicitCodebook::centroid_kernel(const Descriptor& x, int s) const {
  check_cluster(s);
  const auto& mem = members_[static_cast<std::size_t>(s)];
  double acc = 0.0;
  for (std::int32_t j : mem)
    acc += kernel_eval(kernel_, x, training_[static_cast<std::size_t>(j)]);
  return acc / static_cast<double>(mem.size());
}

double ImplicitCodebook::centroid_self_kernel(int s) const {
  check_cluster(s);
  return centroid_self_[static_cast<std::size_t>(s)];
}

const std::vector<double>& ImplicitCodebook::member_row_sums(int s) const {
  check_cluster(s);
  return row_sums_[static_cast<std::size_t>(s)];
}

int ImplicitCodebook::assign(const Descriptor& x) const {
  if (kind_of(x) != kernel_.geometry.kind)
    throw std::invalid_argument("ImplicitCodebook::assign: geometry mismatch");
  const double kxx = kernel_eval(kernel_, x, x);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int s = 0; s < size(); ++s) {
    const double d = kxx - 2.0 * centroid_kernel(x, s) + centroid_self_kernel(s);
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  return best;
}

int assign_explicit(const EuclideanPoint& v, const ExplicitCodebook& cb) {
  if (v.values.size() != cb.centers.cols())
    throw std::invalid_argument("assign_explicit: dimension mismatch");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int s = 0; s < cb.size(); ++s) {
    const double d = (v.values.transpose() - cb.centers.row(s)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  return best;
}

int assign_kernel(const Descriptor& x, const ImplicitCodebook& cb) { return cb.assign(x); }

std::vector<Descriptor> pool_descriptors(std::span<const DescriptorSet> sets,
                                         std::size_t cap, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& s : sets) total += s.descriptors.size();
  std::vector<const Descriptor*> all;
  all.reserve(total);
  for (const auto& s : sets)
    for (const auto& d : s.descriptors) all.push_back(&d);

  std::vector<std::size_t> keep(all.size());
  std::iota(keep.begin(), keep.end(), 0);
  if (cap > 0 && all.size() > cap) {
    Rng rng(derive_seed(seed, 0x706F6F6CULL));  // "pool"
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + rng.uniform_index(keep.size() - i);
      std::swap(keep[i], keep[j]);
    }
    keep.resize(cap);
    std::sort(keep.begin(), keep.end());
  }

  std::vector<Descriptor> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(*all[i]);
  return out;
}

}  // namespace kvlad
