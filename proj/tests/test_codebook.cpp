#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/geometry.hpp"
#include "kvlad/rng.hpp"

using namespace kvlad;

namespace {

EuclideanPoint ep(std::initializer_list<double> vals) {
  EuclideanPoint p;
  p.values.resize(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double v : vals) p.values(i++) = v;
  return p;
}

std::vector<EuclideanPoint> random_points(Rng& rng, int n, int d) {
  std::vector<EuclideanPoint> pts;
  for (int i = 0; i < n; ++i) {
    EuclideanPoint p;
    p.values.resize(d);
    for (int j = 0; j < d; ++j) p.values(j) = rng.normal();
    pts.push_back(std::move(p));
  }
  return pts;
}

KernelSpec linear_spec(int d) {
  return {{GeometryKind::Euclidean, d, 0}, KernelFamily::Linear, 1.0};
}

}  // namespace

TEST_CASE("kmeans recovers two well-separated clusters") {
  std::vector<EuclideanPoint> pts = {ep({0, 0}), ep({0.1, 0}), ep({10, 10}), ep({10.1, 10})};
  ClusterOptions opts;
  opts.seed = 42;
  const ExplicitCodebook cb = kmeans_fit(pts, 2, opts);

  std::vector<Eigen::Vector2d> centers;
  for (int s = 0; s < 2; ++s) centers.push_back(cb.centers.row(s).transpose());
  std::sort(centers.begin(), centers.end(),
            [](const auto& a, const auto& b) { return a(0) < b(0); });
  CHECK(centers[0](0) == doctest::Approx(0.05));
  CHECK(centers[0](1) == doctest::Approx(0.0));
  CHECK(centers[1](0) == doctest::Approx(10.05));
  CHECK(centers[1](1) == doctest::Approx(10.0));
}

TEST_CASE("kmeans with m = N puts every point in its own cell") {
  Rng rng(1);
  const auto pts = random_points(rng, 6, 3);
  ClusterOptions opts;
  opts.seed = 9;
  const ExplicitCodebook cb = kmeans_fit(pts, 6, opts);

  double distortion = 0.0;
  for (const auto& p : pts) {
    const int s = assign_explicit(p, cb);
    distortion += (p.values.transpose() - cb.centers.row(s)).squaredNorm();
  }
  CHECK(distortion == doctest::Approx(0.0).scale(1.0).epsilon(1e-18));

  // no two centers identical
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b)
      CHECK((cb.centers.row(a) - cb.centers.row(b)).norm() > 0.0);
}

TEST_CASE("kmeans is deterministic and rejects m above the distinct count") {
  Rng rng(2);
  const auto pts = random_points(rng, 40, 4);
  ClusterOptions opts;
  opts.seed = 1234;
  const ExplicitCodebook a = kmeans_fit(pts, 5, opts);
  const ExplicitCodebook b = kmeans_fit(pts, 5, opts);
  CHECK(a.centers == b.centers);  // bitwise

  std::vector<EuclideanPoint> dup = {ep({1, 1}), ep({1, 1}), ep({2, 2})};
  CHECK_THROWS_AS(kmeans_fit(dup, 3, opts), std::invalid_argument);
  CHECK_NOTHROW(kmeans_fit(dup, 2, opts));
}

TEST_CASE("kernel kmeans with m=1 yields a single all-member cluster") {
  Rng rng(3);
  const auto pts = random_points(rng, 10, 2);
  std::vector<Descriptor> descs(pts.begin(), pts.end());
  ClusterOptions opts;
  opts.seed = 7;
  const ImplicitCodebook cb = kernel_kmeans_fit(descs, linear_spec(2), 1, opts);
  REQUIRE(cb.size() == 1);
  CHECK(cb.members()[0].size() == 10);
}

TEST_CASE("kernel kmeans with the linear kernel matches Euclidean kmeans") {
  Rng rng(4);
  for (std::uint64_t seed : {11ULL, 22ULL, 33ULL, 44ULL}) {
    const int n = 30 + static_cast<int>(rng.uniform_index(170));
    const int d = 2 + static_cast<int>(rng.uniform_index(7));
    const int m = 2 + static_cast<int>(rng.uniform_index(5));
    const auto pts = random_points(rng, n, d);
    std::vector<Descriptor> descs(pts.begin(), pts.end());

    ClusterOptions opts;
    opts.seed = seed;
    opts.rel_tol = 0.0;
    opts.max_iters = 300;
    const ExplicitCodebook ecb = kmeans_fit(pts, m, opts);
    const ImplicitCodebook icb = kernel_kmeans_fit(descs, linear_spec(d), m, opts);

    // Same final partition, cluster for cluster.
    for (int s = 0; s < m; ++s)
      for (std::int32_t j : icb.members()[static_cast<std::size_t>(s)])
        CHECK(assign_explicit(pts[static_cast<std::size_t>(j)], ecb) == s);
  }
}

TEST_CASE("kernel kmeans separates two synthetic SPD classes") {
  double purity_sum = 0.0;
  const int n = 4;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SpdGenParams params;
    params.classes = 2;
    params.sets_per_class = 2;
    params.per_set = 30;
    params.dim = n;
    params.seed = seed;
    params.train_fraction = 1.0;
    const Dataset ds = gen_spd(params);

    std::vector<Descriptor> descs;
    std::vector<int> labels;
    for (const auto& set : ds.train)
      for (const auto& d : set.descriptors) {
        descs.push_back(d);
        labels.push_back(static_cast<int>(set.label));
      }

    KernelSpec stein{{GeometryKind::Spd, n, 0}, KernelFamily::Stein, 0.5 * (n - 1)};
    ClusterOptions opts;
    opts.seed = seed;
    const ImplicitCodebook cb = kernel_kmeans_fit(descs, stein, 2, opts);

    int cluster0_class0 = 0, cluster0_class1 = 0, cluster1_class0 = 0, cluster1_class1 = 0;
    for (std::int32_t j : cb.members()[0])
      (labels[static_cast<std::size_t>(j)] == 0 ? cluster0_class0 : cluster0_class1)++;
    for (std::int32_t j : cb.members()[1])
      (labels[static_cast<std::size_t>(j)] == 0 ? cluster1_class0 : cluster1_class1)++;
    const int agree = std::max(cluster0_class0 + cluster1_class1,
                               cluster0_class1 + cluster1_class0);
    purity_sum += static_cast<double>(agree) / static_cast<double>(descs.size());
  }
  CHECK(purity_sum / 10.0 >= 0.9);
}

TEST_CASE("centroid kernel: singleton and two-member means") {
  // Linear kernel; training vectors chosen so k(x, t1) = 0.2, k(x, t2) = 0.6.
  std::vector<Descriptor> training = {ep({1, 0}), ep({0, 1}), ep({5, 5})};
  const ImplicitCodebook cb = ImplicitCodebook::from_partition(
      training, {{0, 1}, {2}}, linear_spec(2));

  const Descriptor x = ep({0.2, 0.6});
  CHECK(cb.centroid_kernel(x, 0) == doctest::Approx(0.4));
  CHECK(cb.centroid_kernel(x, 1) == doctest::Approx(5.0 * 0.2 + 5.0 * 0.6));

  // singleton cluster: centroid kernel is k(x, t); self kernel is k(t, t)
  CHECK(cb.centroid_self_kernel(1) == doctest::Approx(50.0));
  CHECK_THROWS_AS(cb.centroid_kernel(x, 2), std::invalid_argument);
}

TEST_CASE("cached centroid self-kernels match recomputation") {
  Rng rng(5);
  const auto pts = random_points(rng, 25, 3);
  std::vector<Descriptor> descs(pts.begin(), pts.end());
  KernelSpec rbf{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, 1.1};
  ClusterOptions opts;
  opts.seed = 99;
  const ImplicitCodebook cb = kernel_kmeans_fit(descs, rbf, 4, opts);

  for (int s = 0; s < cb.size(); ++s) {
    const auto& mem = cb.members()[static_cast<std::size_t>(s)];
    double acc = 0.0;
    for (std::int32_t a : mem)
      for (std::int32_t b : mem)
        acc += kernel_eval(rbf, descs[static_cast<std::size_t>(a)],
                           descs[static_cast<std::size_t>(b)]);
    const double ns = static_cast<double>(mem.size());
    CHECK(std::abs(cb.centroid_self_kernel(s) - acc / (ns * ns)) < 1e-12);

    const auto& rows = cb.member_row_sums(s);
    REQUIRE(rows.size() == mem.size());
    double row0 = 0.0;
    for (std::int32_t b : mem)
      row0 += kernel_eval(rbf, descs[static_cast<std::size_t>(mem[0])],
                          descs[static_cast<std::size_t>(b)]);
    CHECK(std::abs(rows[0] - row0) < 1e-12);
  }
}

TEST_CASE("assignment: ties break to the lowest index") {
  // explicit
  ExplicitCodebook cb;
  cb.centers.resize(2, 2);
  cb.centers << 0, 0, 1, 1;
  CHECK(assign_explicit(ep({1, 0}), cb) == 0);  // distances tie at 1
  CHECK(assign_explicit(ep({9, 9}), cb) == 1);
  cb.centers.resize(3, 2);
  cb.centers << 0, 0, 1, 1, 5, 5;
  CHECK(assign_explicit(ep({1, 1}), cb) == 1);  // exact center match
  CHECK_THROWS_AS(assign_explicit(ep({1, 2, 3}), cb), std::invalid_argument);

  // kernel: duplicate singleton clusters tie exactly
  std::vector<Descriptor> training = {ep({2, 0}), ep({2, 0}), ep({0, 9})};
  const ImplicitCodebook icb = ImplicitCodebook::from_partition(
      training, {{0}, {1}, {2}}, linear_spec(2));
  CHECK(assign_kernel(ep({2, 0.1}), icb) == 0);
  CHECK(assign_kernel(ep({0.1, 9}), icb) == 2);  // matches retained member
}

TEST_CASE("kernel kmeans assignment is self-consistent after convergence") {
  Rng rng(6);
  const auto pts = random_points(rng, 60, 3);
  std::vector<Descriptor> descs(pts.begin(), pts.end());
  KernelSpec rbf{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, 1.5};
  ClusterOptions opts;
  opts.seed = 5;
  opts.rel_tol = 0.0;
  opts.max_iters = 500;
  const ImplicitCodebook cb = kernel_kmeans_fit(descs, rbf, 5, opts);

  // partition invariant
  std::set<std::int32_t> seen;
  std::size_t covered = 0;
  for (const auto& mem : cb.members()) {
    CHECK_FALSE(mem.empty());
    for (std::int32_t j : mem) {
      CHECK(seen.insert(j).second);
      ++covered;
    }
  }
  CHECK(covered == descs.size());

  // every member assigns back to its own cluster
  for (int s = 0; s < cb.size(); ++s)
    for (std::int32_t j : cb.members()[static_cast<std::size_t>(s)])
      CHECK(cb.assign(descs[static_cast<std::size_t>(j)]) == s);
}

TEST_CASE("kernel kmeans is deterministic bitwise") {
  Rng rng(8);
  const auto pts = random_points(rng, 30, 2);
  std::vector<Descriptor> descs(pts.begin(), pts.end());
  KernelSpec rbf{{GeometryKind::Euclidean, 2, 0}, KernelFamily::EuclideanRbf, 0.8};
  ClusterOptions opts;
  opts.seed = 31337;
  const ImplicitCodebook a = kernel_kmeans_fit(descs, rbf, 3, opts);
  const ImplicitCodebook b = kernel_kmeans_fit(descs, rbf, 3, opts);
  CHECK(a.members() == b.members());
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("from_partition validates the partition") {
  std::vector<Descriptor> training = {ep({1, 0}), ep({0, 1})};
  CHECK_THROWS_AS(
      ImplicitCodebook::from_partition(training, {{0}, {}}, linear_spec(2)),
      std::invalid_argument);  // empty member list
  CHECK_THROWS_AS(
      ImplicitCodebook::from_partition(training, {{0}, {0, 1}}, linear_spec(2)),
      std::invalid_argument);  // overlap
  CHECK_THROWS_AS(ImplicitCodebook::from_partition(training, {{0}}, linear_spec(2)),
                  std::invalid_argument);  // not covering
}

TEST_CASE("restarts never worsen the final distortion") {
  Rng rng(9);
  const auto pts = random_points(rng, 50, 3);
  const auto distortion = [&](const ExplicitCodebook& cb) {
    double acc = 0.0;
    for (const auto& p : pts) {
      const int s = assign_explicit(p, cb);
      acc += (p.values.transpose() - cb.centers.row(s)).squaredNorm();
    }
    return acc;
  };
  ClusterOptions one;
  one.seed = 77;
  ClusterOptions five = one;
  five.restarts = 5;
  const double d1 = distortion(kmeans_fit(pts, 6, one));
  const double d5 = distortion(kmeans_fit(pts, 6, five));
  CHECK(d5 <= d1 + 1e-9);
}

TEST_CASE("pool_descriptors caps deterministically and keeps order") {
  Rng rng(10);
  const auto pts = random_points(rng, 30, 2);
  DescriptorSet a{0, 0, {pts.begin(), pts.begin() + 15}};
  DescriptorSet b{1, 1, {pts.begin() + 15, pts.end()}};
  std::vector<DescriptorSet> sets = {a, b};

  const auto all = pool_descriptors(sets, 0, 5);
  CHECK(all.size() == 30);
  const auto capped = pool_descriptors(sets, 10, 5);
  CHECK(capped.size() == 10);
  const auto capped2 = pool_descriptors(sets, 10, 5);
  for (std::size_t i = 0; i < capped.size(); ++i)
    CHECK(std::get<EuclideanPoint>(capped[i]).values ==
          std::get<EuclideanPoint>(capped2[i]).values);
}
