#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/encoders.hpp"
#include "kvlad/errors.hpp"
#include "kvlad/eval.hpp"
#include "kvlad/geometry.hpp"
#include "kvlad/io.hpp"
#include "kvlad/rng.hpp"

using namespace kvlad;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("kvlad_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path file(const std::string& name) const { return path / name; }
};

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  return ba == bb;
}

bool descriptors_equal(const Descriptor& a, const Descriptor& b) {
  if (kind_of(a) != kind_of(b)) return false;
  switch (kind_of(a)) {
    case GeometryKind::Euclidean:
      return std::get<EuclideanPoint>(a).values == std::get<EuclideanPoint>(b).values;
    case GeometryKind::Spd:
      return std::get<SpdMatrix>(a).values == std::get<SpdMatrix>(b).values;
    case GeometryKind::Grassmann:
      return std::get<GrassmannPoint>(a).values == std::get<GrassmannPoint>(b).values;
  }
  return false;
}

void corrupt_byte(const fs::path& p, std::size_t offset, char value) {
  std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&value, 1);
}

void truncate_file(const fs::path& p, std::size_t keep) {
  fs::resize_file(p, keep);
}

}  // namespace

TEST_CASE("generators are pure functions of their parameters") {
  EuclideanGenParams ep;
  ep.classes = 3;
  ep.sets_per_class = 4;
  ep.per_set = 10;
  ep.dim = 5;
  ep.seed = 99;
  const Dataset a = gen_euclidean(ep);
  const Dataset b = gen_euclidean(ep);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    for (std::size_t k = 0; k < a.train[i].descriptors.size(); ++k)
      CHECK(descriptors_equal(a.train[i].descriptors[k], b.train[i].descriptors[k]));

  SpdGenParams sp;
  sp.classes = 2;
  sp.sets_per_class = 3;
  sp.per_set = 5;
  sp.dim = 4;
  sp.seed = 7;
  const Dataset sa = gen_spd(sp);
  const Dataset sb = gen_spd(sp);
  for (std::size_t i = 0; i < sa.train.size(); ++i)
    for (std::size_t k = 0; k < sa.train[i].descriptors.size(); ++k)
      CHECK(descriptors_equal(sa.train[i].descriptors[k], sb.train[i].descriptors[k]));

  GrassmannGenParams gp;
  gp.classes = 2;
  gp.sets_per_class = 3;
  gp.per_set = 5;
  gp.dim = 8;
  gp.subdim = 2;
  gp.seed = 3;
  const Dataset ga = gen_grassmann(gp);
  const Dataset gb = gen_grassmann(gp);
  for (std::size_t i = 0; i < ga.train.size(); ++i)
    for (std::size_t k = 0; k < ga.train[i].descriptors.size(); ++k)
      CHECK(descriptors_equal(ga.train[i].descriptors[k], gb.train[i].descriptors[k]));
}

TEST_CASE("generator outputs validate; ids unique; train covers all classes") {
  SpdGenParams sp;
  sp.classes = 3;
  sp.sets_per_class = 4;
  sp.per_set = 6;
  sp.dim = 5;
  sp.seed = 1;
  const Dataset ds = gen_spd(sp);

  std::set<std::uint32_t> ids;
  std::set<std::uint32_t> train_classes;
  for (const auto& s : ds.train) {
    CHECK(ids.insert(s.id).second);
    train_classes.insert(s.label);
    for (const auto& d : s.descriptors) CHECK(validate(d, ds.geometry).ok);
  }
  for (const auto& s : ds.test) {
    CHECK(ids.insert(s.id).second);
    for (const auto& d : s.descriptors) CHECK(validate(d, ds.geometry).ok);
  }
  CHECK(train_classes.size() == 3);

  GrassmannGenParams gp;
  gp.classes = 2;
  gp.sets_per_class = 2;
  gp.per_set = 4;
  gp.dim = 10;
  gp.subdim = 3;
  gp.seed = 5;
  const Dataset gd = gen_grassmann(gp);
  for (const auto& s : gd.train)
    for (const auto& d : s.descriptors) {
      const auto& u = std::get<GrassmannPoint>(d).values;
      CHECK((u.transpose() * u - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <
            1e-10);
    }
}

TEST_CASE("SPD generator: within-class Stein divergence below between-class") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SpdGenParams sp;
    sp.classes = 2;
    sp.sets_per_class = 1;
    sp.per_set = 12;
    sp.dim = 4;
    sp.seed = seed;
    sp.train_fraction = 1.0;
    const Dataset ds = gen_spd(sp);
    const auto& a = ds.train[0].descriptors;
    const auto& b = ds.train[1].descriptors;

    double within = 0.0, between = 0.0;
    int wn = 0, bn = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) {
        within += stein_divergence(std::get<SpdMatrix>(a[i]), std::get<SpdMatrix>(a[j]));
        within += stein_divergence(std::get<SpdMatrix>(b[i]), std::get<SpdMatrix>(b[j]));
        wn += 2;
      }
    for (const auto& da : a)
      for (const auto& db : b) {
        between += stein_divergence(std::get<SpdMatrix>(da), std::get<SpdMatrix>(db));
        ++bn;
      }
    CHECK(within / wn < between / bn);
  }
}

TEST_CASE("Grassmann generator: zero noise collapses each class to one subspace") {
  GrassmannGenParams gp;
  gp.classes = 2;
  gp.sets_per_class = 1;
  gp.per_set = 5;
  gp.dim = 7;
  gp.subdim = 2;
  gp.noise = 0.0;
  gp.seed = 9;
  gp.train_fraction = 1.0;
  const Dataset ds = gen_grassmann(gp);
  const double sigma = 0.5;
  const double kmax = std::exp(sigma * gp.subdim);
  for (const auto& set : ds.train)
    for (std::size_t i = 0; i < set.descriptors.size(); ++i)
      for (std::size_t j = i + 1; j < set.descriptors.size(); ++j) {
        const double k = projection_kernel(std::get<GrassmannPoint>(set.descriptors[i]),
                                           std::get<GrassmannPoint>(set.descriptors[j]),
                                           sigma);
        CHECK(k == doctest::Approx(kmax).epsilon(1e-9));
      }
}

TEST_CASE("Euclidean generator: zero separation gives chance-level accuracy") {
  EuclideanGenParams epp;
  epp.classes = 2;
  epp.sets_per_class = 60;
  epp.per_set = 40;
  epp.dim = 4;
  epp.separation = 0.0;
  epp.seed = 123;
  const Dataset ds = gen_euclidean(epp);

  // plain VLAD + ridge
  std::vector<EuclideanPoint> pool;
  for (const auto& s : ds.train)
    for (const auto& d : s.descriptors) pool.push_back(std::get<EuclideanPoint>(d));
  ClusterOptions opts;
  opts.seed = 5;
  const ExplicitCodebook cb = kmeans_fit(pool, 8, opts);

  NormalizationSpec norm;
  norm.intra = norm.global = true;
  std::vector<VladCode> train_codes, test_codes;
  std::vector<std::uint32_t> train_labels, test_labels;
  for (const auto& s : ds.train) {
    train_codes.push_back(vlad_encode(s, cb, norm));
    train_labels.push_back(s.label);
  }
  for (const auto& s : ds.test) {
    test_codes.push_back(vlad_encode(s, cb, norm));
    test_labels.push_back(s.label);
  }
  const RidgeModel model = ridge_train(train_codes, train_labels, 1e-3);
  const double acc = accuracy(ridge_predict(model, test_codes), test_labels);
  CHECK(acc >= 0.5 - 0.1 - 1e-9);
  CHECK(acc <= 0.5 + 0.1 + 1e-9);
}

TEST_CASE("dataset round-trip is bitwise lossless") {
  TempDir dir;
  SpdGenParams sp;
  sp.classes = 2;
  sp.sets_per_class = 3;
  sp.per_set = 4;
  sp.dim = 3;
  sp.seed = 2;
  const Dataset ds = gen_spd(sp);

  const auto p = dir.file("d.kvld");
  write_dataset(p, ds.geometry, ds.train);
  const LoadedDataset back = read_dataset(p);
  CHECK(back.geometry == ds.geometry);
  REQUIRE(back.sets.size() == ds.train.size());
  for (std::size_t i = 0; i < back.sets.size(); ++i) {
    CHECK(back.sets[i].id == ds.train[i].id);
    CHECK(back.sets[i].label == ds.train[i].label);
    for (std::size_t k = 0; k < back.sets[i].descriptors.size(); ++k)
      CHECK(descriptors_equal(back.sets[i].descriptors[k], ds.train[i].descriptors[k]));
  }

  // writing the loaded data again reproduces the file byte for byte
  const auto p2 = dir.file("d2.kvld");
  write_dataset(p2, back.geometry, back.sets);
  CHECK(same_bytes(p, p2));
}

TEST_CASE("malformed dataset files produce named diagnostics") {
  TempDir dir;
  EuclideanGenParams epp;
  epp.classes = 2;
  epp.sets_per_class = 2;
  epp.per_set = 3;
  epp.dim = 2;
  epp.seed = 4;
  const Dataset ds = gen_euclidean(epp);
  const auto p = dir.file("d.kvld");
  write_dataset(p, ds.geometry, ds.train);

  corrupt_byte(p, 0, 'X');
  CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("bad magic"), DataError);

  write_dataset(p, ds.geometry, ds.train);
  corrupt_byte(p, 4, 9);  // version low byte
  CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("unsupported version"),
                       DataError);

  write_dataset(p, ds.geometry, ds.train);
  truncate_file(p, fs::file_size(p) - 5);
  CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("unexpected end"), DataError);
}

TEST_CASE("codebook round-trips: explicit and implicit") {
  TempDir dir;
  Rng rng(6);

  ExplicitCodebook ecb;
  ecb.centers.resize(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) ecb.centers(i, j) = rng.normal();
  ecb.map_fingerprint = 0xDEADBEEF12345678ULL;
  const auto pe = dir.file("e.kvlc");
  write_codebook(pe, ecb);
  const AnyCodebook le = read_codebook(pe);
  REQUIRE(std::holds_alternative<ExplicitCodebook>(le));
  CHECK(std::get<ExplicitCodebook>(le).centers == ecb.centers);
  CHECK(std::get<ExplicitCodebook>(le).map_fingerprint == ecb.map_fingerprint);

  std::vector<Descriptor> training;
  for (int i = 0; i < 12; ++i) {
    EuclideanPoint pt;
    pt.values.resize(3);
    for (int j = 0; j < 3; ++j) pt.values(j) = rng.normal();
    training.push_back(std::move(pt));
  }
  KernelSpec rbf{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, 1.4};
  ClusterOptions opts;
  opts.seed = 11;
  const ImplicitCodebook icb = kernel_kmeans_fit(training, rbf, 3, opts);
  const auto pi = dir.file("i.kvlc");
  write_codebook(pi, icb);
  const AnyCodebook li = read_codebook(pi);
  REQUIRE(std::holds_alternative<std::shared_ptr<const ImplicitCodebook>>(li));
  const auto& licb = *std::get<std::shared_ptr<const ImplicitCodebook>>(li);
  CHECK(licb.members() == icb.members());
  CHECK(licb.kernel() == icb.kernel());
  CHECK(licb.fingerprint() == icb.fingerprint());
}

TEST_CASE("codes round-trip including variable-length svlad blocks") {
  TempDir dir;
  Rng rng(7);

  // hand-built codes with unequal block lengths
  std::vector<VladCode> codes(2);
  for (auto& c : codes) {
    c.encoder = EncoderTag::Svlad;
    c.norm_flags = 3;
    c.blocks = {Eigen::VectorXd::Random(2), Eigen::VectorXd::Random(5),
                Eigen::VectorXd::Random(1)};
  }
  const std::vector<std::uint32_t> ids = {10, 20};
  const std::vector<std::uint32_t> labels = {0, 1};
  const CodeTable table = CodeTable::from_codes(codes, ids, labels);

  const auto p = dir.file("c.kvle");
  write_codes(p, table);
  const CodeTable back = read_codes(p);
  CHECK(back.encoder == EncoderTag::Svlad);
  CHECK(back.norm_flags == 3);
  CHECK(back.block_lengths == table.block_lengths);
  CHECK(back.ids == ids);
  CHECK(back.labels == labels);
  CHECK(back.values == table.values);

  const auto rebuilt = back.to_codes();
  for (std::size_t i = 0; i < rebuilt.size(); ++i)
    for (std::size_t s = 0; s < 3; ++s)
      CHECK(rebuilt[i].blocks[s] == codes[i].blocks[s]);
}

TEST_CASE("gram and cross-gram round-trips") {
  TempDir dir;
  Rng rng(8);
  GramMatrix g;
  g.values.resize(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) {
      g.values(i, j) = rng.normal();
      g.values(j, i) = g.values(i, j);
    }
  g.item_ids = {3, 1, 4, 1};
  const auto p = dir.file("g.kvlg");
  write_gram(p, g);
  const GramMatrix back = read_gram(p);
  CHECK(back.values == g.values);
  CHECK(back.item_ids == g.item_ids);

  CrossGram c;
  c.values.resize(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) c.values(i, j) = rng.normal();
  c.row_ids = {7, 8};
  c.col_ids = {1, 2, 3};
  const auto px = dir.file("x.kvlx");
  write_cross_gram(px, c);
  const CrossGram cback = read_cross_gram(px);
  CHECK(cback.values == c.values);
  CHECK(cback.row_ids == c.row_ids);
  CHECK(cback.col_ids == c.col_ids);
}

TEST_CASE("map and projector round-trips verify their fingerprints") {
  TempDir dir;
  Rng rng(9);

  std::vector<Descriptor> landmarks;
  for (int i = 0; i < 10; ++i) {
    EuclideanPoint pt;
    pt.values.resize(3);
    for (int j = 0; j < 3; ++j) pt.values(j) = rng.normal();
    landmarks.push_back(std::move(pt));
  }
  KernelSpec rbf{{GeometryKind::Euclidean, 3, 0}, KernelFamily::EuclideanRbf, 1.0};
  const NystromMap nmap = nystrom_fit(landmarks, rbf, 5);
  const auto pn = dir.file("n.kvln");
  write_nystrom(pn, nmap);
  const NystromMap nback = read_nystrom(pn);
  CHECK(nback.projection == nmap.projection);
  CHECK(nback.eigenvalues == nmap.eigenvalues);
  CHECK(nback.fingerprint == nmap.fingerprint);
  CHECK(nback.kernel == nmap.kernel);

  const FourierMap fmap = fourier_fit(4, 0.8, 16, 321);
  const auto pf = dir.file("f.kvlf");
  write_fourier(pf, fmap);
  const FourierMap fback = read_fourier(pf);
  CHECK(fback.omegas == fmap.omegas);
  CHECK(fback.offsets == fmap.offsets);
  CHECK(fback.fingerprint == fmap.fingerprint);

  ClusterOptions opts;
  opts.seed = 13;
  auto cb = std::make_shared<const ImplicitCodebook>(
      kernel_kmeans_fit(landmarks, rbf, 2, opts));
  const SubspaceProjector proj = subspace_fit(cb);
  const auto ps = dir.file("s.kvls");
  write_subspace(ps, proj);
  const SubspaceProjector pback = read_subspace(ps, cb);
  REQUIRE(pback.size() == proj.size());
  for (int s = 0; s < proj.size(); ++s) {
    CHECK(pback.cluster(s).basis_coeffs == proj.cluster(s).basis_coeffs);
    CHECK(pback.cluster(s).eigenvalues == proj.cluster(s).eigenvalues);
    CHECK(pback.cluster(s).centroid == proj.cluster(s).centroid);
  }

  // attaching to the wrong codebook is rejected
  auto other = std::make_shared<const ImplicitCodebook>(
      kernel_kmeans_fit(landmarks, rbf, 5, opts));
  CHECK_THROWS_AS(read_subspace(ps, other), DataError);
}

TEST_CASE("model round-trips") {
  TempDir dir;
  Rng rng(10);

  RidgeModel ridge;
  ridge.weights = Eigen::MatrixXd::Random(5, 3);
  ridge.lambda = 0.25;
  ridge.classes = {0, 2, 5};
  const auto pr = dir.file("r.kvlm");
  write_model(pr, ridge);
  const AnyModel rback = read_model(pr);
  REQUIRE(std::holds_alternative<RidgeModel>(rback));
  CHECK(std::get<RidgeModel>(rback).weights == ridge.weights);
  CHECK(std::get<RidgeModel>(rback).classes == ridge.classes);
  CHECK(std::get<RidgeModel>(rback).lambda == ridge.lambda);

  KernelRidgeModel kridge;
  kridge.dual = Eigen::MatrixXd::Random(4, 2);
  kridge.bias = Eigen::VectorXd::Random(2);
  kridge.lambda = 1e-3;
  kridge.classes = {1, 9};
  kridge.training_ids = {0, 1, 2, 3};
  const auto pk = dir.file("k.kvlm");
  write_model(pk, kridge);
  const AnyModel kback = read_model(pk);
  REQUIRE(std::holds_alternative<KernelRidgeModel>(kback));
  CHECK(std::get<KernelRidgeModel>(kback).dual == kridge.dual);
  CHECK(std::get<KernelRidgeModel>(kback).bias == kridge.bias);
  CHECK(std::get<KernelRidgeModel>(kback).training_ids == kridge.training_ids);
}

TEST_CASE("CSV export writes 17-significant-digit values") {
  TempDir dir;
  GramMatrix g;
  g.values.resize(2, 2);
  g.values << 1.0, 1.0 / 3.0, 1.0 / 3.0, 2.0;
  g.item_ids = {0, 1};
  const auto p = dir.file("g.csv");
  write_gram_csv(p, g);

  std::ifstream in(p);
  std::string line1, line2;
  std::getline(in, line1);
  std::getline(in, line2);
  CHECK(line1 == "1,0.33333333333333331");
  CHECK(line2 == "0.33333333333333331,2");
}
