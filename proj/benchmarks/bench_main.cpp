// Microbenchmarks for the kernel and encoder hot paths. Run with
// --benchmark_filter=... to narrow; all fixtures are seeded and fixed-size.

#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/encoders.hpp"
#include "kvlad/geometry.hpp"
#include "kvlad/linalg.hpp"
#include "kvlad/rng.hpp"

using namespace kvlad;

namespace {

EuclideanPoint randn_point(Rng& rng, int d) {
  EuclideanPoint p;
  p.values.resize(d);
  for (int j = 0; j < d; ++j) p.values(j) = rng.normal();
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

void bm_rbf_kernel(benchmark::State& state) {
  Rng rng(1);
  const int d = static_cast<int>(state.range(0));
  const EuclideanPoint x = randn_point(rng, d);
  const EuclideanPoint y = randn_point(rng, d);
  for (auto _ : state) benchmark::DoNotOptimize(rbf_kernel(x, y, 1.0));
}
BENCHMARK(bm_rbf_kernel)->Arg(8)->Arg(64)->Arg(256);

void bm_stein_kernel(benchmark::State& state) {
  Rng rng(2);
  const int n = static_cast<int>(state.range(0));
  const SpdMatrix a = random_spd(rng, n);
  const SpdMatrix b = random_spd(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(stein_kernel(a, b, 0.5 * (n - 1)));
}
BENCHMARK(bm_stein_kernel)->Arg(5)->Arg(13)->Arg(32);

void bm_projection_kernel(benchmark::State& state) {
  Rng rng(3);
  const int d = static_cast<int>(state.range(0));
  const GrassmannPoint u = random_grassmann(rng, d, 3);
  const GrassmannPoint v = random_grassmann(rng, d, 3);
  for (auto _ : state) benchmark::DoNotOptimize(projection_kernel(u, v, 0.2));
}
BENCHMARK(bm_projection_kernel)->Arg(31)->Arg(64);

void bm_spd_log_vec(benchmark::State& state) {
  Rng rng(4);
  const SpdMatrix a = random_spd(rng, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(spd_log_vec(a));
}
BENCHMARK(bm_spd_log_vec)->Arg(5)->Arg(13);

void bm_gram(benchmark::State& state) {
  Rng rng(5);
  const int n = static_cast<int>(state.range(0));
  std::vector<Descriptor> descs;
  for (int i = 0; i < n; ++i) descs.push_back(randn_point(rng, 16));
  const KernelSpec spec{{GeometryKind::Euclidean, 16, 0}, KernelFamily::EuclideanRbf, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(gram(descs, spec));
}
BENCHMARK(bm_gram)->Arg(64)->Arg(256);

void bm_jacobi_eigen(benchmark::State& state) {
  Rng rng(6);
  const int n = static_cast<int>(state.range(0));
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  for (auto _ : state) benchmark::DoNotOptimize(jacobi_eigen_sym(sym));
}
BENCHMARK(bm_jacobi_eigen)->Arg(32)->Arg(128);

struct EncoderFixtures {
  ExplicitCodebook explicit_cb;
  std::shared_ptr<const ImplicitCodebook> implicit_cb;
  SubspaceProjector projector;
  NystromMap nystrom;
  FourierMap fourier;
  DescriptorSet set_a, set_b;

  EncoderFixtures() {
    Rng rng(7);
    const int d = 16, m = 8, train = 256, per_set = 100;
    std::vector<EuclideanPoint> training;
    for (int i = 0; i < train; ++i) training.push_back(randn_point(rng, d));
    ClusterOptions opts;
    opts.seed = 1;
    explicit_cb = kmeans_fit(training, m, opts);

    std::vector<Descriptor> descs(training.begin(), training.end());
    const KernelSpec rbf{{GeometryKind::Euclidean, d, 0}, KernelFamily::EuclideanRbf, 2.0};
    implicit_cb = std::make_shared<const ImplicitCodebook>(
        kernel_kmeans_fit(descs, rbf, m, opts));
    projector = subspace_fit(implicit_cb, 32);
    nystrom = nystrom_fit(descs, rbf, 64);
    fourier = fourier_fit(d, 2.0, 256, 9);

    set_a.id = 0;
    set_b.id = 1;
    for (int i = 0; i < per_set; ++i) {
      set_a.descriptors.push_back(randn_point(rng, d));
      set_b.descriptors.push_back(randn_point(rng, d));
    }
  }
};

const EncoderFixtures& fixtures() {
  static EncoderFixtures f;
  return f;
}

void bm_vlad_encode(benchmark::State& state) {
  const auto& f = fixtures();
  NormalizationSpec norm;
  norm.intra = norm.ssr = norm.global = true;
  for (auto _ : state)
    benchmark::DoNotOptimize(vlad_encode(f.set_a, f.explicit_cb, norm));
}
BENCHMARK(bm_vlad_encode);

void bm_svlad_encode(benchmark::State& state) {
  const auto& f = fixtures();
  NormalizationSpec norm;
  norm.intra = norm.ssr = norm.global = true;
  for (auto _ : state)
    benchmark::DoNotOptimize(svlad_encode(f.set_a, *f.implicit_cb, f.projector, norm));
}
BENCHMARK(bm_svlad_encode);

void bm_nvlad_encode(benchmark::State& state) {
  const auto& f = fixtures();
  ExplicitCodebook cb = f.explicit_cb;  // same shape; fingerprint wired below
  const auto mapped = map_all(f.set_a.descriptors, f.nystrom);
  ClusterOptions opts;
  opts.seed = 2;
  std::vector<EuclideanPoint> train_mapped =
      map_all(f.implicit_cb->training(), f.nystrom);
  cb = kmeans_fit(train_mapped, 8, opts);
  cb.map_fingerprint = f.nystrom.fingerprint;
  for (auto _ : state)
    benchmark::DoNotOptimize(pipeline_encode(f.set_a, f.nystrom, cb, {}));
}
BENCHMARK(bm_nvlad_encode);

void bm_fvlad_encode(benchmark::State& state) {
  const auto& f = fixtures();
  ClusterOptions opts;
  opts.seed = 3;
  std::vector<EuclideanPoint> train_mapped =
      map_all(f.implicit_cb->training(), f.fourier);
  ExplicitCodebook cb = kmeans_fit(train_mapped, 8, opts);
  cb.map_fingerprint = f.fourier.fingerprint;
  for (auto _ : state)
    benchmark::DoNotOptimize(pipeline_encode(f.set_a, f.fourier, cb, {}));
}
BENCHMARK(bm_fvlad_encode);

void bm_kvlad_inner(benchmark::State& state) {
  const auto& f = fixtures();
  for (auto _ : state)
    benchmark::DoNotOptimize(kvlad_inner(f.set_a, f.set_b, *f.implicit_cb, true));
}
BENCHMARK(bm_kvlad_inner);

void bm_fourier_map(benchmark::State& state) {
  const auto& f = fixtures();
  const auto& x = std::get<EuclideanPoint>(f.set_a.descriptors[0]);
  for (auto _ : state) benchmark::DoNotOptimize(fourier_map(x, f.fourier));
}
BENCHMARK(bm_fourier_map);

void bm_nystrom_map(benchmark::State& state) {
  const auto& f = fixtures();
  for (auto _ : state)
    benchmark::DoNotOptimize(nystrom_map(f.set_a.descriptors[0], f.nystrom));
}
BENCHMARK(bm_nystrom_map);

}  // namespace

BENCHMARK_MAIN();
