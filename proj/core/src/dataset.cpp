#include "kvlad/dataset.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "kvlad/errors.hpp"
#include "kvlad/linalg.hpp"
#include "kvlad/rng.hpp"

namespace kvlad {

namespace {

void check_counts(int classes, int sets_per_class, int per_set, int dim,
                  double train_fraction) {
  if (classes < 1) throw std::invalid_argument("generator: classes must be >= 1");
  if (sets_per_class < 1)
    throw std::invalid_argument("generator: sets_per_class must be >= 1");
  if (per_set < 1) throw std::invalid_argument("generator: per_set must be >= 1");
  if (dim < 1) throw std::invalid_argument("generator: dim must be >= 1");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("generator: train_fraction must be in [0, 1]");
}

int train_count(int sets_per_class, double fraction) {
  const int n = static_cast<int>(std::lround(fraction * sets_per_class));
  return std::clamp(n, 1, sets_per_class);
}

Eigen::VectorXd normal_vector(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

Eigen::MatrixXd normal_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Distributes the generated sets of one class between the splits.
void place_sets(Dataset& ds, std::vector<DescriptorSet> sets, int n_train) {
  for (int s = 0; s < static_cast<int>(sets.size()); ++s) {
    if (s < n_train)
      ds.train.push_back(std::move(sets[static_cast<std::size_t>(s)]));
    else
      ds.test.push_back(std::move(sets[static_cast<std::size_t>(s)]));
  }
}

}  // namespace

Dataset gen_euclidean(const EuclideanGenParams& p) {
  check_counts(p.classes, p.sets_per_class, p.per_set, p.dim, p.train_fraction);
  if (!(p.separation >= 0.0))
    throw std::invalid_argument("gen_euclidean: separation must be >= 0");

  Rng rng(p.seed);
  constexpr int kComponents = 3;

  // Component centers shared across classes.
  std::vector<Eigen::VectorXd> base(kComponents);
  for (auto& b : base) b = 2.0 * normal_vector(rng, p.dim);

  // Per-class offsets, rescaled so the smallest pairwise distance is 1;
  // class means then sit exactly `separation` apart at the closest pair.
  std::vector<Eigen::VectorXd> offsets(static_cast<std::size_t>(p.classes));
  if (p.classes == 1) {
    offsets[0] = Eigen::VectorXd::Zero(p.dim);
  } else {
    double min_dist = 0.0;
    do {
      for (auto& o : offsets) o = normal_vector(rng, p.dim);
      min_dist = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < offsets.size(); ++a)
        for (std::size_t b = a + 1; b < offsets.size(); ++b)
          min_dist = std::min(min_dist, (offsets[a] - offsets[b]).norm());
    } while (!(min_dist > 0.0));
    for (auto& o : offsets) o /= min_dist;
  }

  Dataset ds;
  ds.geometry = {GeometryKind::Euclidean, p.dim, 0};
  const int n_train = train_count(p.sets_per_class, p.train_fraction);
  std::uint32_t next_id = 0;

  for (int c = 0; c < p.classes; ++c) {
    std::vector<Eigen::VectorXd> means(kComponents);
    for (int k = 0; k < kComponents; ++k)
      means[static_cast<std::size_t>(k)] =
          base[static_cast<std::size_t>(k)] +
          p.separation * offsets[static_cast<std::size_t>(c)];

    std::vector<DescriptorSet> sets;
    for (int s = 0; s < p.sets_per_class; ++s) {
      DescriptorSet set;
      set.id = next_id++;
      set.label = static_cast<std::uint32_t>(c);
      set.descriptors.reserve(static_cast<std::size_t>(p.per_set));
      for (int i = 0; i < p.per_set; ++i) {
        const std::size_t k = rng.uniform_index(kComponents);
        EuclideanPoint pt;
        pt.values = means[k] + normal_vector(rng, p.dim);
        set.descriptors.emplace_back(std::move(pt));
      }
      sets.push_back(std::move(set));
    }
    place_sets(ds, std::move(sets), n_train);
  }
  return ds;
}

Dataset gen_spd(const SpdGenParams& p) {
  check_counts(p.classes, p.sets_per_class, p.per_set, p.dim, p.train_fraction);

  Rng rng(p.seed);
  const int n = p.dim;
  const int samples = 2 * n;

  Dataset ds;
  ds.geometry = {GeometryKind::Spd, n, 0};
  const int n_train = train_count(p.sets_per_class, p.train_fraction);
  std::uint32_t next_id = 0;

  for (int c = 0; c < p.classes; ++c) {
    // Entries of G_c are N(0, 4). The Stein geometry is congruence
    // invariant, so the within-class spread of the sample covariances is
    // set by the 2n-draw estimate alone; the factor widens the
    // between-class spread of the hidden scales well past it.
    const Eigen::MatrixXd g = 2.0 * normal_matrix(rng, n, n);
    const Eigen::MatrixXd sigma =
        g * g.transpose() + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();

    std::vector<DescriptorSet> sets;
    for (int s = 0; s < p.sets_per_class; ++s) {
      DescriptorSet set;
      set.id = next_id++;
      set.label = static_cast<std::uint32_t>(c);
      set.descriptors.reserve(static_cast<std::size_t>(p.per_set));
      for (int i = 0; i < p.per_set; ++i) {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
        for (int k = 0; k < samples; ++k) {
          const Eigen::VectorXd v = chol * normal_vector(rng, n);
          cov.noalias() += v * v.transpose();
        }
        cov /= static_cast<double>(samples);
        cov += 1e-3 * Eigen::MatrixXd::Identity(n, n);
        set.descriptors.emplace_back(SpdMatrix{std::move(cov)});
      }
      sets.push_back(std::move(set));
    }
    place_sets(ds, std::move(sets), n_train);
  }
  return ds;
}

Dataset gen_grassmann(const GrassmannGenParams& p) {
  check_counts(p.classes, p.sets_per_class, p.per_set, p.dim, p.train_fraction);
  if (p.subdim < 1 || p.subdim > p.dim)
    throw std::invalid_argument("gen_grassmann: requires 0 < p <= d");
  if (!(p.noise >= 0.0))
    throw std::invalid_argument("gen_grassmann: noise must be >= 0");

  Rng rng(p.seed);
  Dataset ds;
  ds.geometry = {GeometryKind::Grassmann, p.dim, p.subdim};
  const int n_train = train_count(p.sets_per_class, p.train_fraction);
  std::uint32_t next_id = 0;

  for (int c = 0; c < p.classes; ++c) {
    const Eigen::MatrixXd basis =
        mgs_orthonormalize(normal_matrix(rng, p.dim, p.subdim));

    std::vector<DescriptorSet> sets;
    for (int s = 0; s < p.sets_per_class; ++s) {
      DescriptorSet set;
      set.id = next_id++;
      set.label = static_cast<std::uint32_t>(c);
      set.descriptors.reserve(static_cast<std::size_t>(p.per_set));
      for (int i = 0; i < p.per_set; ++i) {
        GrassmannPoint pt;
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
          const Eigen::MatrixXd perturbed =
              basis + p.noise * normal_matrix(rng, p.dim, p.subdim);
          try {
            pt.values = mgs_orthonormalize(perturbed);
            ok = true;
          } catch (const NumericalError&) {
            // rank-deficient draw, retry
          }
        }
        if (!ok)
          throw NumericalError(
              "gen_grassmann: perturbation rank-deficient after 10 draws");
        set.descriptors.emplace_back(std::move(pt));
      }
      sets.push_back(std::move(set));
    }
    place_sets(ds, std::move(sets), n_train);
  }
  return ds;
}

}  // namespace kvlad
