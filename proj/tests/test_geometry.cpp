#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "kvlad/errors.hpp"
#include "kvlad/geometry.hpp"
#include "kvlad/linalg.hpp"
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

SpdMatrix random_spd(Rng& rng, int n) {
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
  return SpdMatrix{g * g.transpose() + 0.5 * n * Eigen::MatrixXd::Identity(n, n)};
}

GrassmannPoint random_grassmann(Rng& rng, int d, int p) {
  Eigen::MatrixXd a(d, p);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = rng.normal();
  return GrassmannPoint{mgs_orthonormalize(a)};
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
  return jacobi_eigen_sym(m).values.minCoeff();
}

}  // namespace

TEST_CASE("rbf kernel: frozen examples") {
  CHECK(rbf_kernel(ep({0.3, -2.0}), ep({0.3, -2.0}), 1.0) == doctest::Approx(1.0));
  CHECK(rbf_kernel(ep({0, 0}), ep({1, 0}), 1.0) == doctest::Approx(0.606531).epsilon(1e-5));
  CHECK(rbf_kernel(ep({0}), ep({2}), 1.0) == doctest::Approx(0.135335).epsilon(1e-5));
  CHECK_THROWS_AS(rbf_kernel(ep({0, 0}), ep({1}), 1.0), std::invalid_argument);
  EuclideanPoint bad = ep({1.0});
  bad.values(0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rbf_kernel(bad, ep({1.0}), 1.0), std::invalid_argument);
}

TEST_CASE("linear kernel: frozen examples") {
  CHECK(linear_kernel(ep({1, 0}), ep({0, 1})) == 0.0);
  CHECK(linear_kernel(ep({1, 2}), ep({3, 4})) == doctest::Approx(11.0));
  CHECK(linear_kernel(ep({3, 4}), ep({3, 4})) == doctest::Approx(25.0));
  CHECK_THROWS_AS(linear_kernel(ep({1}), ep({1, 2})), std::invalid_argument);
}

TEST_CASE("stein divergence: frozen examples") {
  Rng rng(5);
  const SpdMatrix a = random_spd(rng, 3);
  CHECK(stein_divergence(a, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  SpdMatrix one{Eigen::MatrixXd::Constant(1, 1, 1.0)};
  SpdMatrix four{Eigen::MatrixXd::Constant(1, 1, 4.0)};
  CHECK(stein_divergence(one, four) == doctest::Approx(0.223144).epsilon(1e-5));

  SpdMatrix eye2{Eigen::MatrixXd::Identity(2, 2)};
  SpdMatrix four2{4.0 * Eigen::MatrixXd::Identity(2, 2)};
  CHECK(stein_divergence(eye2, four2) == doctest::Approx(0.446287).epsilon(1e-5));

  SpdMatrix bad{Eigen::MatrixXd::Zero(2, 2)};
  bad.values << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(stein_divergence(bad, eye2), NumericalError);
}

TEST_CASE("stein kernel: frozen examples and sigma validity") {
  SpdMatrix one{Eigen::MatrixXd::Constant(1, 1, 1.0)};
  SpdMatrix four{Eigen::MatrixXd::Constant(1, 1, 4.0)};
  CHECK(stein_kernel(one, one, 2.0) == doctest::Approx(1.0));
  CHECK(stein_kernel(one, four, 1.0) == doctest::Approx(0.8).epsilon(1e-12));

  CHECK(stein_sigma_is_pd_safe(0.5, 5));   // half-integer
  CHECK(stein_sigma_is_pd_safe(1.5, 5));   // half-integer
  CHECK(stein_sigma_is_pd_safe(2.0, 5));   // = (n-1)/2
  CHECK(stein_sigma_is_pd_safe(3.7, 5));   // above (n-1)/2
  CHECK_FALSE(stein_sigma_is_pd_safe(0.7, 5));
  CHECK_FALSE(stein_sigma_is_pd_safe(0.3, 5));  // below 1/2 and not half-integer
}

TEST_CASE("stein gram over random SPD matrices is numerically PSD") {
  Rng rng(17);
  std::vector<Descriptor> descs;
  for (int i = 0; i < 20; ++i) descs.push_back(random_spd(rng, 3));
  KernelSpec spec{{GeometryKind::Spd, 3, 0}, KernelFamily::Stein, 2.0};
  const GramMatrix g = gram(descs, spec);
  CHECK(min_eigenvalue(g.values) >= -1e-8);
}

TEST_CASE("stein congruence invariance") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const SpdMatrix a = random_spd(rng, 3);
    const SpdMatrix b = random_spd(rng, 3);
    Eigen::MatrixXd m(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = rng.normal();
    m += 3.0 * Eigen::MatrixXd::Identity(3, 3);  // keep it invertible
    const SpdMatrix am{m * a.values * m.transpose()};
    const SpdMatrix bm{m * b.values * m.transpose()};
    CHECK(std::abs(stein_divergence(am, bm) - stein_divergence(a, b)) < 1e-8);
  }
}

TEST_CASE("projection kernel: frozen examples") {
  GrassmannPoint u{Eigen::MatrixXd::Zero(3, 1)};
  u.values(0, 0) = 1.0;
  GrassmannPoint v{Eigen::MatrixXd::Zero(3, 1)};
  v.values(1, 0) = 1.0;
  CHECK(projection_kernel(u, v, 1.0) == doctest::Approx(1.0));

  Rng rng(31);
  const GrassmannPoint w = random_grassmann(rng, 5, 2);
  CHECK(projection_kernel(w, w, 0.5) == doctest::Approx(2.718282).epsilon(1e-6));

  GrassmannPoint bad{2.0 * Eigen::MatrixXd::Identity(3, 1)};
  CHECK_THROWS_AS(projection_kernel(bad, u, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(projection_kernel(u, random_grassmann(rng, 4, 1), 1.0),
                  std::invalid_argument);
}

TEST_CASE("projection kernel basis invariance") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const GrassmannPoint u = random_grassmann(rng, 6, 2);
    const GrassmannPoint v = random_grassmann(rng, 6, 2);
    Eigen::MatrixXd r(2, 2), q(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        r(i, j) = rng.normal();
        q(i, j) = rng.normal();
      }
    const GrassmannPoint ur{u.values * mgs_orthonormalize(r)};
    const GrassmannPoint vq{v.values * mgs_orthonormalize(q)};
    const double base = projection_kernel(u, v, 0.7);
    CHECK(std::abs(projection_kernel(ur, vq, 0.7) - base) < 1e-12 * base);
  }
}

TEST_CASE("kernel symmetry is exact") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const EuclideanPoint x = ep({rng.normal(), rng.normal(), rng.normal()});
    const EuclideanPoint y = ep({rng.normal(), rng.normal(), rng.normal()});
    CHECK(rbf_kernel(x, y, 0.9) == rbf_kernel(y, x, 0.9));
    CHECK(linear_kernel(x, y) == linear_kernel(y, x));

    const SpdMatrix a = random_spd(rng, 4);
    const SpdMatrix b = random_spd(rng, 4);
    CHECK(stein_kernel(a, b, 1.5) == stein_kernel(b, a, 1.5));

    const GrassmannPoint u = random_grassmann(rng, 5, 2);
    const GrassmannPoint v = random_grassmann(rng, 5, 2);
    CHECK(projection_kernel(u, v, 0.4) == projection_kernel(v, u, 0.4));
  }
}

TEST_CASE("spd_log_vec: frozen examples and isometry") {
  const EuclideanPoint zero = spd_log_vec(SpdMatrix{Eigen::MatrixXd::Identity(2, 2)});
  REQUIRE(zero.values.size() == 3);
  CHECK(zero.values.cwiseAbs().maxCoeff() < 1e-14);

  const double e = std::exp(1.0);
  const EuclideanPoint diag = spd_log_vec(SpdMatrix{e * Eigen::MatrixXd::Identity(2, 2)});
  CHECK(diag.values(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(diag.values(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(diag.values(2) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const SpdMatrix a = random_spd(rng, 4);
    const EuclideanPoint v = spd_log_vec(a);
    // Independent oracle: matrix log via the reference eigensolver.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a.values);
    const Eigen::MatrixXd logm = ref.eigenvectors() *
                                 ref.eigenvalues().array().log().matrix().asDiagonal() *
                                 ref.eigenvectors().transpose();
    CHECK(v.values.squaredNorm() ==
          doctest::Approx(logm.squaredNorm()).epsilon(1e-10));
  }

  // Inner products match the Frobenius inner product of the logs.
  const SpdMatrix a = random_spd(rng, 3);
  const SpdMatrix b = random_spd(rng, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.values), eb(b.values);
  const Eigen::MatrixXd la = ea.eigenvectors() *
                             ea.eigenvalues().array().log().matrix().asDiagonal() *
                             ea.eigenvectors().transpose();
  const Eigen::MatrixXd lb = eb.eigenvectors() *
                             eb.eigenvalues().array().log().matrix().asDiagonal() *
                             eb.eigenvectors().transpose();
  CHECK(spd_log_vec(a).values.dot(spd_log_vec(b).values) ==
        doctest::Approx((la.array() * lb.array()).sum()).epsilon(1e-10));
}

TEST_CASE("hilbert_dist_sq: frozen examples and linear-kernel oracle") {
  CHECK(hilbert_dist_sq(1.0, 1.0, 1.0) == 0.0);
  CHECK(hilbert_dist_sq(1.0, 0.5, 1.0) == doctest::Approx(1.0));
  CHECK(hilbert_dist_sq(1.0, 1.0 + 1e-10, 1.0) == 0.0);  // rounding clamp
  CHECK_THROWS_AS(hilbert_dist_sq(1.0, 2.0, 1.0), NumericalError);

  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    const EuclideanPoint x = ep({rng.normal(), rng.normal()});
    const EuclideanPoint y = ep({rng.normal(), rng.normal()});
    const double d2 = hilbert_dist_sq(linear_kernel(x, x), linear_kernel(x, y),
                                      linear_kernel(y, y));
    CHECK(std::abs(d2 - (x.values - y.values).squaredNorm()) < 1e-10);
  }
}

TEST_CASE("gram: examples and PSD spot checks") {
  KernelSpec rbf{{GeometryKind::Euclidean, 1, 0}, KernelFamily::EuclideanRbf, 1.0};
  std::vector<Descriptor> two = {ep({0.0}), ep({2.0})};
  const GramMatrix g2 = gram(two, rbf);
  CHECK(g2.values(0, 0) == doctest::Approx(1.0));
  CHECK(g2.values(1, 1) == doctest::Approx(1.0));
  CHECK(g2.values(0, 1) == doctest::Approx(0.135335).epsilon(1e-5));
  CHECK(g2.values(1, 0) == g2.values(0, 1));
  CHECK(g2.item_ids == std::vector<std::uint32_t>{0, 1});

  Rng rng(53);
  std::vector<Descriptor> euclid;
  for (int i = 0; i < 50; ++i) euclid.push_back(ep({rng.normal(), rng.normal(), rng.normal()}));
  KernelSpec rbf3{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, 1.3};
  const GramMatrix ge = gram(euclid, rbf3);
  for (int i = 0; i < 50; ++i) CHECK(ge.values(i, i) == doctest::Approx(1.0));
  CHECK(min_eigenvalue(ge.values) >= -1e-9);

  std::vector<Descriptor> grass;
  for (int i = 0; i < 50; ++i) grass.push_back(random_grassmann(rng, 6, 2));
  KernelSpec proj{{GeometryKind::Grassmann, 6, 2}, KernelFamily::ProjectionRbf, 0.5};
  const GramMatrix gg = gram(grass, proj);
  CHECK(min_eigenvalue(gg.values) >= -1e-8 * gg.values.diagonal().maxCoeff());

  CHECK_THROWS_AS(gram(std::vector<Descriptor>{ep({1.0}), random_spd(rng, 2)}, rbf),
                  std::invalid_argument);
}

TEST_CASE("validate names the failed invariant") {
  const Geometry spd_geo{GeometryKind::Spd, 2, 0};
  CHECK(validate(SpdMatrix{Eigen::MatrixXd::Identity(2, 2)}, spd_geo).ok);

  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.2, 1.0;
  const auto r1 = validate(SpdMatrix{asym}, spd_geo);
  CHECK_FALSE(r1.ok);
  CHECK(r1.diagnostic == "asymmetric");

  const Geometry grass_geo{GeometryKind::Grassmann, 3, 1};
  const auto r2 = validate(GrassmannPoint{2.0 * Eigen::MatrixXd::Identity(3, 1)}, grass_geo);
  CHECK_FALSE(r2.ok);
  CHECK(r2.diagnostic == "not orthonormal");

  Eigen::MatrixXd indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  const auto r3 = validate(SpdMatrix{indef}, spd_geo);
  CHECK_FALSE(r3.ok);
  CHECK(r3.diagnostic == "not positive definite");

  const auto r4 = validate(ep({1.0, 2.0}), Geometry{GeometryKind::Euclidean, 3, 0});
  CHECK_FALSE(r4.ok);
  CHECK(r4.diagnostic == "dimension mismatch");
}

TEST_CASE("kernel spec compatibility checks") {
  KernelSpec ok{{GeometryKind::Spd, 3, 0}, KernelFamily::Stein, 1.0};
  CHECK_NOTHROW(ok.check());
  KernelSpec wrong{{GeometryKind::Spd, 3, 0}, KernelFamily::EuclideanRbf, 1.0};
  CHECK_THROWS_AS(wrong.check(), std::invalid_argument);
  KernelSpec negative{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, -1.0};
  CHECK_THROWS_AS(negative.check(), std::invalid_argument);
  KernelSpec grassbad{{GeometryKind::Grassmann, 3, 5}, KernelFamily::ProjectionRbf, 1.0};
  CHECK_THROWS_AS(grassbad.check(), std::invalid_argument);
}
