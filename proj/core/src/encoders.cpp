#include "kvlad/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "kvlad/errors.hpp"
#include "kvlad/hash.hpp"
#include "kvlad/linalg.hpp"
#include "kvlad/rng.hpp"

namespace kvlad {

namespace {

constexpr double kDistClampTol = 1e-9;
// Relative threshold deciding that a Hilbert block norm is zero: the norm
// squared is compared against 1e-10 times the no-cancellation bound
// (sum_i ||phi(c) - phi(x_i)||)^2. Encoding exactly the member set of a
// cluster lands many orders of magnitude below it; generic occupied
// blocks land far above.
constexpr double kZeroBlockRel = 1e-10;

void require_nonempty(const DescriptorSet& set, const char* what) {
  if (set.descriptors.empty())
    throw std::invalid_argument(std::string(what) + ": empty descriptor set");
}

}  // namespace

const char* to_string(EncoderTag tag) {
  switch (tag) {
    case EncoderTag::Vlad: return "vlad";
    case EncoderTag::LeVlad: return "le-vlad";
    case EncoderTag::Kvlad: return "kvlad";
    case EncoderTag::Nvlad: return "nvlad";
    case EncoderTag::Svlad: return "svlad";
    case EncoderTag::Fvlad: return "fvlad";
  }
  return "unknown";
}

Eigen::Index VladCode::length() const {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

Eigen::VectorXd VladCode::flattened() const {
  Eigen::VectorXd out(length());
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.segment(at, b.size()) = b;
    at += b.size();
  }
  return out;
}

VladCode vlad_encode(const DescriptorSet& set, const ExplicitCodebook& cb,
                     const NormalizationSpec& norm) {
  require_nonempty(set, "vlad_encode");
  const int m = cb.size();
  const Eigen::Index d = cb.centers.cols();

  VladCode code;
  code.encoder = EncoderTag::Vlad;
  code.blocks.assign(static_cast<std::size_t>(m), Eigen::VectorXd::Zero(d));
  for (const auto& desc : set.descriptors) {
    if (kind_of(desc) != GeometryKind::Euclidean)
      throw std::invalid_argument("vlad_encode: descriptor is not Euclidean");
    const auto& x = std::get<EuclideanPoint>(desc);
    if (x.values.size() != d)
      throw std::invalid_argument("vlad_encode: descriptor dimension mismatch");
    const int s = assign_explicit(x, cb);
    code.blocks[static_cast<std::size_t>(s)] += cb.centers.row(s).transpose() - x.values;
  }
  return normalize(std::move(code), norm);
}

VladCode normalize(VladCode code, const NormalizationSpec& spec) {
  if (spec.intra) {
    for (auto& b : code.blocks) {
      const double n = b.norm();
      if (n > 0.0) b /= n;
    }
  }
  if (spec.ssr) {
    for (auto& b : code.blocks)
      b = b.unaryExpr([](double v) {
        return v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v);
      });
  }
  if (spec.global) {
    double sq = 0.0;
    for (const auto& b : code.blocks) sq += b.squaredNorm();
    const double n = std::sqrt(sq);
    if (n > 0.0)
      for (auto& b : code.blocks) b /= n;
  }
  code.norm_flags |= spec.flags();
  return code;
}

KvladProfile kvlad_profile(const DescriptorSet& set, const ImplicitCodebook& cb) {
  require_nonempty(set, "kvlad_profile");
  const int m = cb.size();
  const auto& kernel = cb.kernel();
  const auto& training = cb.training();
  const std::size_t n = set.descriptors.size();

  KvladProfile p;
  p.block_items.assign(static_cast<std::size_t>(m), {});
  p.point_centroid_kernel.assign(n, 0.0);
  p.point_self_kernel.assign(n, 0.0);
  p.block_norm_sq.assign(static_cast<std::size_t>(m), 0.0);
  p.block_nonzero.assign(static_cast<std::size_t>(m), false);

  std::vector<double> kx_train(training.size(), 0.0);
  std::vector<double> assigned_d2(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const Descriptor& x = set.descriptors[i];
    if (kind_of(x) != kernel.geometry.kind)
      throw std::invalid_argument("kvlad_profile: descriptor geometry mismatch");
    const double kxx = kernel_eval(kernel, x, x);
    for (std::size_t j = 0; j < training.size(); ++j)
      kx_train[j] = kernel_eval(kernel, x, training[j]);

    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    double best_ck = 0.0;
    for (int s = 0; s < m; ++s) {
      const auto& mem = cb.members()[static_cast<std::size_t>(s)];
      double cross = 0.0;
      for (std::int32_t j : mem) cross += kx_train[static_cast<std::size_t>(j)];
      const double ck = cross / static_cast<double>(mem.size());
      const double d = kxx - 2.0 * ck + cb.centroid_self_kernel(s);
      if (d < best_d) {
        best_d = d;
        best = s;
        best_ck = ck;
      }
    }
    p.block_items[static_cast<std::size_t>(best)].push_back(static_cast<int>(i));
    p.point_centroid_kernel[i] = best_ck;
    p.point_self_kernel[i] = kxx;
    assigned_d2[i] = std::max(0.0, best_d);
  }

  for (int s = 0; s < m; ++s) {
    const auto& items = p.block_items[static_cast<std::size_t>(s)];
    if (items.empty()) continue;
    const double self_s = cb.centroid_self_kernel(s);
    const double cnt = static_cast<double>(items.size());

    double pair_sum = 0.0;  // sum_{i,j} k(x_i, x_j), each unordered pair once
    for (std::size_t a = 0; a < items.size(); ++a) {
      pair_sum += p.point_self_kernel[static_cast<std::size_t>(items[a])];
      for (std::size_t b = a + 1; b < items.size(); ++b)
        pair_sum += 2.0 * kernel_eval(kernel,
                                      set.descriptors[static_cast<std::size_t>(items[a])],
                                      set.descriptors[static_cast<std::size_t>(items[b])]);
    }
    double sum_kxc = 0.0;
    double bound_root = 0.0;
    for (int idx : items) {
      sum_kxc += p.point_centroid_kernel[static_cast<std::size_t>(idx)];
      bound_root += std::sqrt(assigned_d2[static_cast<std::size_t>(idx)]);
    }
    const double q =
        std::max(0.0, pair_sum + cnt * cnt * self_s - 2.0 * cnt * sum_kxc);
    p.block_norm_sq[static_cast<std::size_t>(s)] = q;
    p.block_nonzero[static_cast<std::size_t>(s)] =
        q > kZeroBlockRel * bound_root * bound_root;
  }
  return p;
}

double kvlad_inner(const DescriptorSet& x, const KvladProfile& px,
                   const DescriptorSet& y, const KvladProfile& py,
                   const ImplicitCodebook& cb, bool normalized) {
  const int m = cb.size();
  const auto& kernel = cb.kernel();
  double acc = 0.0;
  for (int s = 0; s < m; ++s) {
    const auto& ix = px.block_items[static_cast<std::size_t>(s)];
    const auto& iy = py.block_items[static_cast<std::size_t>(s)];
    if (ix.empty() || iy.empty()) continue;
    if (normalized && (!px.block_nonzero[static_cast<std::size_t>(s)] ||
                       !py.block_nonzero[static_cast<std::size_t>(s)]))
      continue;

    double cross = 0.0;
    for (int i : ix)
      for (int j : iy)
        cross += kernel_eval(kernel, x.descriptors[static_cast<std::size_t>(i)],
                             y.descriptors[static_cast<std::size_t>(j)]);
    double sum_kxc = 0.0;
    for (int i : ix) sum_kxc += px.point_centroid_kernel[static_cast<std::size_t>(i)];
    double sum_kyc = 0.0;
    for (int j : iy) sum_kyc += py.point_centroid_kernel[static_cast<std::size_t>(j)];

    const double cx = static_cast<double>(ix.size());
    const double cy = static_cast<double>(iy.size());
    const double ip = cross + cx * cy * cb.centroid_self_kernel(s) -
                      cy * sum_kxc - cx * sum_kyc;
    if (normalized) {
      acc += ip / (std::sqrt(px.block_norm_sq[static_cast<std::size_t>(s)]) *
                   std::sqrt(py.block_norm_sq[static_cast<std::size_t>(s)]));
    } else {
      acc += ip;
    }
  }
  return acc;
}

double kvlad_inner(const DescriptorSet& x, const DescriptorSet& y,
                   const ImplicitCodebook& cb, bool normalized) {
  const KvladProfile px = kvlad_profile(x, cb);
  const KvladProfile py = kvlad_profile(y, cb);
  return kvlad_inner(x, px, y, py, cb, normalized);
}

GramMatrix kvlad_gram(std::span<const DescriptorSet> sets, const ImplicitCodebook& cb,
                      bool normalized) {
  if (sets.empty()) throw std::invalid_argument("kvlad_gram: no sets");
  std::vector<KvladProfile> profiles;
  profiles.reserve(sets.size());
  for (const auto& s : sets) profiles.push_back(kvlad_profile(s, cb));

  const Eigen::Index n = static_cast<Eigen::Index>(sets.size());
  GramMatrix out;
  out.values.resize(n, n);
  out.item_ids.resize(sets.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.item_ids[static_cast<std::size_t>(i)] = sets[static_cast<std::size_t>(i)].id;
    for (Eigen::Index j = i; j < n; ++j) {
      const double v = kvlad_inner(sets[static_cast<std::size_t>(i)],
                                   profiles[static_cast<std::size_t>(i)],
                                   sets[static_cast<std::size_t>(j)],
                                   profiles[static_cast<std::size_t>(j)], cb, normalized);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  }
  return out;
}

CrossGram kvlad_cross_gram(std::span<const DescriptorSet> rows,
                           std::span<const DescriptorSet> cols,
                           const ImplicitCodebook& cb, bool normalized) {
  if (rows.empty() || cols.empty())
    throw std::invalid_argument("kvlad_cross_gram: no sets");
  std::vector<KvladProfile> row_profiles;
  row_profiles.reserve(rows.size());
  for (const auto& s : rows) row_profiles.push_back(kvlad_profile(s, cb));
  std::vector<KvladProfile> col_profiles;
  col_profiles.reserve(cols.size());
  for (const auto& s : cols) col_profiles.push_back(kvlad_profile(s, cb));

  CrossGram out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(cols.size()));
  for (const auto& s : rows) out.row_ids.push_back(s.id);
  for (const auto& s : cols) out.col_ids.push_back(s.id);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kvlad_inner(rows[i], row_profiles[i], cols[j], col_profiles[j], cb, normalized);
  return out;
}

double kvlad_dist_sq(const DescriptorSet& x, const DescriptorSet& y,
                     const ImplicitCodebook& cb) {
  const KvladProfile px = kvlad_profile(x, cb);
  const KvladProfile py = kvlad_profile(y, cb);
  const double xx = kvlad_inner(x, px, x, px, cb, false);
  const double xy = kvlad_inner(x, px, y, py, cb, false);
  const double yy = kvlad_inner(y, py, y, py, cb, false);
  const double d2 = xx - 2.0 * xy + yy;
  const double scale = std::max({1.0, std::abs(xx), std::abs(yy)});
  if (d2 < -kDistClampTol * scale)
    throw NumericalError("kvlad_dist_sq: inconsistent inner products");
  return std::max(0.0, d2);
}

NystromMap nystrom_fit(std::span<const Descriptor> landmarks, const KernelSpec& kernel,
                       int r, double eps_rel) {
  kernel.check();
  if (landmarks.empty()) throw std::invalid_argument("nystrom_fit: no landmarks");
  if (r < 1) throw std::invalid_argument("nystrom_fit: r must be >= 1");
  if (static_cast<std::size_t>(r) > landmarks.size())
    throw std::invalid_argument("nystrom_fit: r exceeds the number of landmarks");

  const GramMatrix g = gram(landmarks, kernel);
  const SymmetricEigen eig = jacobi_eigen_sym(g.values);
  const double lambda_max = eig.values(0);
  if (!(lambda_max > 0.0))
    throw NumericalError("nystrom_fit: degenerate kernel (no positive eigenvalue)");

  int keep = 0;
  while (keep < r && keep < eig.values.size() &&
         eig.values(keep) > eps_rel * lambda_max)
    ++keep;

  NystromMap map;
  map.landmarks.assign(landmarks.begin(), landmarks.end());
  map.kernel = kernel;
  map.eigenvalues = eig.values.head(keep);
  map.projection.resize(keep, static_cast<Eigen::Index>(landmarks.size()));
  for (int k = 0; k < keep; ++k)
    map.projection.row(k) = eig.vectors.col(k).transpose() / std::sqrt(eig.values(k));

  Fnv1a h;
  h.str("nystrom");
  h.u8(static_cast<std::uint8_t>(kernel.geometry.kind));
  h.u32(static_cast<std::uint32_t>(kernel.geometry.dim));
  h.u32(static_cast<std::uint32_t>(kernel.geometry.subdim));
  h.u8(static_cast<std::uint8_t>(kernel.family));
  h.f64(kernel.bandwidth);
  h.u32(static_cast<std::uint32_t>(landmarks.size()));
  h.u32(static_cast<std::uint32_t>(keep));
  for (const auto& t : landmarks) hash_descriptor(h, t);
  map.fingerprint = h.value();
  return map;
}

EuclideanPoint nystrom_map(const Descriptor& x, const NystromMap& map) {
  if (kind_of(x) != map.kernel.geometry.kind)
    throw std::invalid_argument("nystrom_map: geometry mismatch");
  Eigen::VectorXd kappa(static_cast<Eigen::Index>(map.landmarks.size()));
  for (std::size_t j = 0; j < map.landmarks.size(); ++j)
    kappa(static_cast<Eigen::Index>(j)) = kernel_eval(map.kernel, x, map.landmarks[j]);
  return EuclideanPoint{map.projection * kappa};
}

FourierMap fourier_fit(int d, double sigma, int r, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("fourier_fit: d must be >= 1");
  if (r < 1) throw std::invalid_argument("fourier_fit: r must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("fourier_fit: sigma must be positive");

  Rng rng(seed);
  FourierMap map;
  map.sigma = sigma;
  map.seed = seed;
  map.omegas.resize(r, d);
  const double inv_sigma = 1.0 / sigma;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < d; ++j) map.omegas(i, j) = inv_sigma * rng.normal();
  map.offsets.resize(r);
  for (int i = 0; i < r; ++i) map.offsets(i) = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Fnv1a h;
  h.str("fourier");
  h.u32(static_cast<std::uint32_t>(d));
  h.u32(static_cast<std::uint32_t>(r));
  h.f64(sigma);
  h.u64(seed);
  map.fingerprint = h.value();
  return map;
}

EuclideanPoint fourier_map(const EuclideanPoint& x, const FourierMap& map) {
  if (x.values.size() != map.omegas.cols())
    throw std::invalid_argument("fourier_map: dimension mismatch");
  const int r = map.rank();
  const double scale = std::sqrt(2.0 / static_cast<double>(r));
  Eigen::VectorXd phase = map.omegas * x.values + map.offsets;
  return EuclideanPoint{scale * phase.array().cos().matrix()};
}

SubspaceProjector::SubspaceProjector(std::vector<SubspaceCluster> clusters,
                                     std::shared_ptr<const ImplicitCodebook> codebook)
    : clusters_(std::move(clusters)), codebook_(std::move(codebook)) {
  if (codebook_) codebook_fingerprint_ = codebook_->fingerprint();
}

const SubspaceCluster& SubspaceProjector::cluster(int s) const {
  if (s < 0 || s >= size())
    throw std::invalid_argument("SubspaceProjector: cluster index out of range");
  return clusters_[static_cast<std::size_t>(s)];
}

SubspaceProjector subspace_fit(std::shared_ptr<const ImplicitCodebook> cb, int r,
                               double eps_rel) {
  if (!cb) throw std::invalid_argument("subspace_fit: null codebook");
  const auto& kernel = cb->kernel();
  const auto& training = cb->training();

  std::vector<SubspaceCluster> clusters;
  clusters.reserve(static_cast<std::size_t>(cb->size()));
  for (int s = 0; s < cb->size(); ++s) {
    const auto& mem = cb->members()[static_cast<std::size_t>(s)];
    const Eigen::Index ns = static_cast<Eigen::Index>(mem.size());
    Eigen::MatrixXd k_s(ns, ns);
    for (Eigen::Index a = 0; a < ns; ++a) {
      for (Eigen::Index b = a; b < ns; ++b) {
        const double k = kernel_eval(
            kernel,
            training[static_cast<std::size_t>(mem[static_cast<std::size_t>(a)])],
            training[static_cast<std::size_t>(mem[static_cast<std::size_t>(b)])]);
        k_s(a, b) = k;
        k_s(b, a) = k;
      }
    }
    const SymmetricEigen eig = jacobi_eigen_sym(k_s);
    const double lambda_max = eig.values(0);
    if (!(lambda_max > 0.0))
      throw NumericalError("subspace_fit: cluster " + std::to_string(s) +
                           " has a degenerate kernel matrix");
    const int cap = r > 0 ? std::min<int>(r, static_cast<int>(ns)) : static_cast<int>(ns);
    int keep = 0;
    while (keep < cap && eig.values(keep) > eps_rel * lambda_max) ++keep;

    SubspaceCluster cl;
    cl.basis_coeffs = eig.vectors.leftCols(keep);
    cl.eigenvalues = eig.values.head(keep);
    cl.centroid.resize(keep);
    const Eigen::VectorXd col_sums = cl.basis_coeffs.colwise().sum();
    for (int k = 0; k < keep; ++k)
      cl.centroid(k) = std::sqrt(cl.eigenvalues(k)) * col_sums(k) / static_cast<double>(ns);
    clusters.push_back(std::move(cl));
  }
  return SubspaceProjector(std::move(clusters), std::move(cb));
}

EuclideanPoint subspace_project(const Descriptor& x, int s, const SubspaceProjector& proj) {
  const auto& cb = proj.codebook();
  if (!cb) throw std::invalid_argument("subspace_project: projector has no codebook");
  if (kind_of(x) != cb->kernel().geometry.kind)
    throw std::invalid_argument("subspace_project: geometry mismatch");
  const SubspaceCluster& cl = proj.cluster(s);
  const auto& mem = cb->members()[static_cast<std::size_t>(s)];

  Eigen::VectorXd kappa(static_cast<Eigen::Index>(mem.size()));
  for (std::size_t j = 0; j < mem.size(); ++j)
    kappa(static_cast<Eigen::Index>(j)) =
        kernel_eval(cb->kernel(), x, cb->training()[static_cast<std::size_t>(mem[j])]);

  Eigen::VectorXd coords = cl.basis_coeffs.transpose() * kappa;
  for (Eigen::Index k = 0; k < coords.size(); ++k)
    coords(k) /= std::sqrt(cl.eigenvalues(k));
  return EuclideanPoint{std::move(coords)};
}

VladCode svlad_encode(const DescriptorSet& set, const ImplicitCodebook& cb,
                      const SubspaceProjector& proj, const NormalizationSpec& norm) {
  require_nonempty(set, "svlad_encode");
  if (proj.codebook_fingerprint() != cb.fingerprint())
    throw DataError("svlad_encode: projector was fitted on a different codebook");
  const int m = cb.size();
  const auto& kernel = cb.kernel();
  const auto& training = cb.training();

  VladCode code;
  code.encoder = EncoderTag::Svlad;
  code.blocks.reserve(static_cast<std::size_t>(m));
  for (int s = 0; s < m; ++s)
    code.blocks.push_back(Eigen::VectorXd::Zero(proj.cluster(s).eigenvalues.size()));

  std::vector<double> kx_train(training.size(), 0.0);
  for (const auto& x : set.descriptors) {
    if (kind_of(x) != kernel.geometry.kind)
      throw std::invalid_argument("svlad_encode: descriptor geometry mismatch");
    const double kxx = kernel_eval(kernel, x, x);
    for (std::size_t j = 0; j < training.size(); ++j)
      kx_train[j] = kernel_eval(kernel, x, training[j]);

    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int s = 0; s < m; ++s) {
      const auto& mem = cb.members()[static_cast<std::size_t>(s)];
      double cross = 0.0;
      for (std::int32_t j : mem) cross += kx_train[static_cast<std::size_t>(j)];
      const double d =
          kxx - 2.0 * cross / static_cast<double>(mem.size()) + cb.centroid_self_kernel(s);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }

    const SubspaceCluster& cl = proj.cluster(best);
    const auto& mem = cb.members()[static_cast<std::size_t>(best)];
    Eigen::VectorXd kappa(static_cast<Eigen::Index>(mem.size()));
    for (std::size_t j = 0; j < mem.size(); ++j)
      kappa(static_cast<Eigen::Index>(j)) = kx_train[static_cast<std::size_t>(mem[j])];
    Eigen::VectorXd coords = cl.basis_coeffs.transpose() * kappa;
    for (Eigen::Index k = 0; k < coords.size(); ++k)
      coords(k) /= std::sqrt(cl.eigenvalues(k));
    code.blocks[static_cast<std::size_t>(best)] += cl.centroid - coords;
  }
  return normalize(std::move(code), norm);
}

std::vector<EuclideanPoint> map_all(std::span<const Descriptor> descriptors,
                                    const NystromMap& map) {
  std::vector<EuclideanPoint> out;
  out.reserve(descriptors.size());
  for (const auto& d : descriptors) out.push_back(nystrom_map(d, map));
  return out;
}

std::vector<EuclideanPoint> map_all(std::span<const Descriptor> descriptors,
                                    const FourierMap& map) {
  std::vector<EuclideanPoint> out;
  out.reserve(descriptors.size());
  for (const auto& d : descriptors) {
    if (kind_of(d) != GeometryKind::Euclidean)
      throw std::invalid_argument("fourier map_all: descriptor is not Euclidean");
    out.push_back(fourier_map(std::get<EuclideanPoint>(d), map));
  }
  return out;
}

namespace {

VladCode encode_mapped(const DescriptorSet& set, std::vector<EuclideanPoint> mapped,
                       const ExplicitCodebook& cb, const NormalizationSpec& norm,
                       EncoderTag tag) {
  DescriptorSet tmp;
  tmp.id = set.id;
  tmp.label = set.label;
  tmp.descriptors.reserve(mapped.size());
  for (auto& v : mapped) tmp.descriptors.emplace_back(std::move(v));
  VladCode code = vlad_encode(tmp, cb, norm);
  code.encoder = tag;
  return code;
}

}  // namespace

VladCode pipeline_encode(const DescriptorSet& set, const NystromMap& map,
                         const ExplicitCodebook& cb, const NormalizationSpec& norm) {
  require_nonempty(set, "pipeline_encode");
  if (cb.map_fingerprint != map.fingerprint)
    throw DataError("pipeline_encode: codebook was not trained with this Nystrom map");
  return encode_mapped(set, map_all(set.descriptors, map), cb, norm, EncoderTag::Nvlad);
}

VladCode pipeline_encode(const DescriptorSet& set, const FourierMap& map,
                         const ExplicitCodebook& cb, const NormalizationSpec& norm) {
  require_nonempty(set, "pipeline_encode");
  if (cb.map_fingerprint != map.fingerprint)
    throw DataError("pipeline_encode: codebook was not trained with this Fourier map");
  return encode_mapped(set, map_all(set.descriptors, map), cb, norm, EncoderTag::Fvlad);
}

}  // namespace kvlad
