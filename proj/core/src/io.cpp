#include "kvlad/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "kvlad/errors.hpp"
#include "kvlad/hash.hpp"

namespace kvlad {

namespace {

constexpr std::uint16_t kFormatVersion = 1;

// --- little-endian buffer primitives -----------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }

  void magic(const char tag[5]) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(tag[i]));
  }

  void matrix_row_major(const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }

  void vector(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> buf, std::string name)
      : buf_(std::move(buf)), name_(std::move(name)) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(buf_[pos_++]) << (8 * i);
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void expect_magic(const char tag[5]) {
    need(4);
    for (int i = 0; i < 4; ++i) {
      if (buf_[pos_ + static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(tag[i]))
        throw DataError(name_ + ": bad magic (expected \"" + tag + "\")");
    }
    pos_ += 4;
  }

  void expect_version() {
    const std::uint16_t v = u16();
    if (v != kFormatVersion)
      throw DataError(name_ + ": unsupported version " + std::to_string(v));
  }

  Eigen::MatrixXd matrix_row_major(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
    return m;
  }

  Eigen::VectorXd vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = f64();
    return v;
  }

  void expect_exhausted() {
    if (pos_ != buf_.size())
      throw DataError(name_ + ": trailing bytes after payload");
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw DataError(name_ + ": unexpected end of file");
  }

  std::vector<std::uint8_t> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

void atomic_write(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  atomic_write(path, bytes);
}

ByteReader open_reader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return ByteReader(std::move(buf), path.filename().string());
}

// --- geometry / descriptor blocks --------------------------------------------

Eigen::Index descriptor_value_count(const Geometry& g) {
  switch (g.kind) {
    case GeometryKind::Euclidean: return g.dim;
    case GeometryKind::Spd: return static_cast<Eigen::Index>(g.dim) * g.dim;
    case GeometryKind::Grassmann: return static_cast<Eigen::Index>(g.dim) * g.subdim;
  }
  throw DataError("invalid geometry tag");
}

void write_geometry_header(ByteWriter& w, const Geometry& g) {
  w.u8(static_cast<std::uint8_t>(g.kind));
  w.u8(0);  // pad
  w.u32(static_cast<std::uint32_t>(g.dim));
  w.u32(static_cast<std::uint32_t>(g.subdim));
}

Geometry read_geometry_header(ByteReader& r, const std::string& what) {
  const std::uint8_t tag = r.u8();
  if (tag > 2) throw DataError(what + ": invalid geometry tag " + std::to_string(tag));
  r.u8();  // pad
  Geometry g;
  g.kind = static_cast<GeometryKind>(tag);
  g.dim = static_cast<int>(r.u32());
  g.subdim = static_cast<int>(r.u32());
  if (g.dim < 1) throw DataError(what + ": invalid dimension");
  if (g.kind == GeometryKind::Grassmann && (g.subdim < 1 || g.subdim > g.dim))
    throw DataError(what + ": invalid Grassmann subdimension");
  return g;
}

void write_descriptor(ByteWriter& w, const Descriptor& d) {
  switch (kind_of(d)) {
    case GeometryKind::Euclidean:
      w.vector(std::get<EuclideanPoint>(d).values);
      break;
    case GeometryKind::Spd:
      w.matrix_row_major(std::get<SpdMatrix>(d).values);
      break;
    case GeometryKind::Grassmann:
      w.matrix_row_major(std::get<GrassmannPoint>(d).values);
      break;
  }
}

Descriptor read_descriptor(ByteReader& r, const Geometry& g, const std::string& what) {
  Descriptor d;
  switch (g.kind) {
    case GeometryKind::Euclidean:
      d = EuclideanPoint{r.vector(g.dim)};
      break;
    case GeometryKind::Spd:
      d = SpdMatrix{r.matrix_row_major(g.dim, g.dim)};
      break;
    case GeometryKind::Grassmann:
      d = GrassmannPoint{r.matrix_row_major(g.dim, g.subdim)};
      break;
  }
  if (ValidationReport rep = validate(d, g); !rep.ok)
    throw DataError(what + ": invalid descriptor (" + rep.diagnostic + ")");
  return d;
}

void write_descriptor_block(ByteWriter& w, const Geometry& g,
                            std::span<const Descriptor> descriptors) {
  write_geometry_header(w, g);
  w.u32(static_cast<std::uint32_t>(descriptors.size()));
  for (const auto& d : descriptors) write_descriptor(w, d);
}

std::pair<Geometry, std::vector<Descriptor>> read_descriptor_block(
    ByteReader& r, const std::string& what) {
  const Geometry g = read_geometry_header(r, what);
  const std::uint32_t count = r.u32();
  std::vector<Descriptor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_descriptor(r, g, what));
  return {g, std::move(out)};
}

void write_kernel_spec(ByteWriter& w, const KernelSpec& k) {
  w.u8(static_cast<std::uint8_t>(k.family));
  w.f64(k.bandwidth);
}

KernelSpec read_kernel_spec(ByteReader& r, const Geometry& g, const std::string& what) {
  const std::uint8_t fam = r.u8();
  if (fam > 3) throw DataError(what + ": invalid kernel family " + std::to_string(fam));
  KernelSpec k;
  k.geometry = g;
  k.family = static_cast<KernelFamily>(fam);
  k.bandwidth = r.f64();
  try {
    k.check();
  } catch (const std::invalid_argument& e) {
    throw DataError(what + ": " + e.what());
  }
  return k;
}

std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

// --- datasets -----------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, const Geometry& geometry,
                   std::span<const DescriptorSet> sets) {
  ByteWriter w;
  w.magic("KVLD");
  w.u16(kFormatVersion);
  write_geometry_header(w, geometry);
  w.u32(static_cast<std::uint32_t>(sets.size()));
  for (const auto& set : sets) {
    if (set.descriptors.empty())
      throw DataError("write_dataset: set " + std::to_string(set.id) + " is empty");
    w.u32(set.id);
    w.u32(set.label);
    w.u32(static_cast<std::uint32_t>(set.descriptors.size()));
    for (const auto& d : set.descriptors) {
      if (kind_of(d) != geometry.kind)
        throw DataError("write_dataset: descriptor geometry mismatch");
      write_descriptor(w, d);
    }
  }
  atomic_write(path, w.bytes());
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLD");
  r.expect_version();
  LoadedDataset out;
  out.geometry = read_geometry_header(r, "dataset");
  const std::uint32_t num_sets = r.u32();
  out.sets.reserve(num_sets);
  for (std::uint32_t i = 0; i < num_sets; ++i) {
    DescriptorSet set;
    set.id = r.u32();
    set.label = r.u32();
    const std::uint32_t count = r.u32();
    if (count == 0) throw DataError("dataset: empty descriptor set");
    set.descriptors.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k)
      set.descriptors.push_back(read_descriptor(r, out.geometry, "dataset"));
    out.sets.push_back(std::move(set));
  }
  r.expect_exhausted();
  return out;
}

// --- codebooks ----------------------------------------------------------------

void write_codebook(const std::filesystem::path& path, const ExplicitCodebook& cb) {
  ByteWriter w;
  w.magic("KVLC");
  w.u16(kFormatVersion);
  w.u8(0);  // explicit
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(cb.size()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.u64(cb.map_fingerprint);
  w.matrix_row_major(cb.centers);
  atomic_write(path, w.bytes());
}

void write_codebook(const std::filesystem::path& path, const ImplicitCodebook& cb) {
  ByteWriter w;
  w.magic("KVLC");
  w.u16(kFormatVersion);
  w.u8(1);  // implicit
  w.u8(0);
  write_descriptor_block(w, cb.kernel().geometry, cb.training());
  w.u32(static_cast<std::uint32_t>(cb.size()));
  for (const auto& mem : cb.members()) {
    w.u32(static_cast<std::uint32_t>(mem.size()));
    for (std::int32_t j : mem) w.u32(static_cast<std::uint32_t>(j));
  }
  write_kernel_spec(w, cb.kernel());
  atomic_write(path, w.bytes());
}

AnyCodebook read_codebook(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLC");
  r.expect_version();
  const std::uint8_t kind = r.u8();
  r.u8();
  if (kind == 0) {
    ExplicitCodebook cb;
    const std::uint32_t m = r.u32();
    const std::uint32_t d = r.u32();
    if (m == 0 || d == 0) throw DataError("codebook: invalid shape");
    cb.map_fingerprint = r.u64();
    cb.centers = r.matrix_row_major(m, d);
    if (!cb.centers.allFinite()) throw DataError("codebook: non-finite centers");
    r.expect_exhausted();
    return cb;
  }
  if (kind != 1) throw DataError("codebook: invalid kind byte");

  auto [geometry, training] = read_descriptor_block(r, "codebook");
  const std::uint32_t m = r.u32();
  std::vector<std::vector<std::int32_t>> members(m);
  for (auto& mem : members) {
    const std::uint32_t count = r.u32();
    mem.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) mem.push_back(static_cast<std::int32_t>(r.u32()));
  }
  const KernelSpec kernel = read_kernel_spec(r, geometry, "codebook");
  r.expect_exhausted();
  try {
    return std::make_shared<const ImplicitCodebook>(
        ImplicitCodebook::from_partition(std::move(training), std::move(members), kernel));
  } catch (const std::invalid_argument& e) {
    throw DataError("codebook: " + std::string(e.what()));
  }
}

// --- encoded codes --------------------------------------------------------------

CodeTable CodeTable::from_codes(std::span<const VladCode> codes,
                                std::span<const std::uint32_t> ids,
                                std::span<const std::uint32_t> labels) {
  if (codes.empty()) throw DataError("CodeTable: no codes");
  if (codes.size() != ids.size() || codes.size() != labels.size())
    throw DataError("CodeTable: ids/labels do not match codes");
  CodeTable t;
  t.encoder = codes[0].encoder;
  t.norm_flags = codes[0].norm_flags;
  for (const auto& b : codes[0].blocks)
    t.block_lengths.push_back(static_cast<std::uint32_t>(b.size()));
  t.ids.assign(ids.begin(), ids.end());
  t.labels.assign(labels.begin(), labels.end());
  t.values.resize(static_cast<Eigen::Index>(codes.size()), codes[0].length());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].encoder != t.encoder || codes[i].norm_flags != t.norm_flags ||
        codes[i].blocks.size() != t.block_lengths.size())
      throw DataError("CodeTable: heterogeneous codes");
    for (std::size_t s = 0; s < codes[i].blocks.size(); ++s)
      if (codes[i].blocks[s].size() !=
          static_cast<Eigen::Index>(t.block_lengths[s]))
        throw DataError("CodeTable: block structure mismatch");
    t.values.row(static_cast<Eigen::Index>(i)) = codes[i].flattened();
  }
  return t;
}

std::vector<VladCode> CodeTable::to_codes() const {
  std::vector<VladCode> out(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    VladCode& c = out[static_cast<std::size_t>(i)];
    c.encoder = encoder;
    c.norm_flags = norm_flags;
    Eigen::Index at = 0;
    for (std::uint32_t len : block_lengths) {
      c.blocks.push_back(values.row(i).segment(at, len).transpose());
      at += len;
    }
  }
  return out;
}

void write_codes(const std::filesystem::path& path, const CodeTable& table) {
  ByteWriter w;
  w.magic("KVLE");
  w.u16(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(table.encoder));
  w.u8(table.norm_flags);
  w.u32(static_cast<std::uint32_t>(table.block_lengths.size()));
  for (std::uint32_t len : table.block_lengths) w.u32(len);
  w.u32(static_cast<std::uint32_t>(table.values.rows()));
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    w.u32(table.ids[static_cast<std::size_t>(i)]);
    w.u32(table.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) w.f64(table.values(i, j));
  }
  atomic_write(path, w.bytes());
}

CodeTable read_codes(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLE");
  r.expect_version();
  CodeTable t;
  const std::uint8_t enc = r.u8();
  if (enc > 5) throw DataError("codes: invalid encoder tag");
  t.encoder = static_cast<EncoderTag>(enc);
  t.norm_flags = r.u8();
  const std::uint32_t m = r.u32();
  Eigen::Index total = 0;
  for (std::uint32_t s = 0; s < m; ++s) {
    t.block_lengths.push_back(r.u32());
    total += t.block_lengths.back();
  }
  const std::uint32_t num_sets = r.u32();
  if (num_sets == 0) throw DataError("codes: empty file");
  t.values.resize(num_sets, total);
  for (std::uint32_t i = 0; i < num_sets; ++i) {
    t.ids.push_back(r.u32());
    t.labels.push_back(r.u32());
    for (Eigen::Index j = 0; j < total; ++j) t.values(static_cast<Eigen::Index>(i), j) = r.f64();
  }
  r.expect_exhausted();
  return t;
}

// --- Grams ----------------------------------------------------------------------

void write_gram(const std::filesystem::path& path, const GramMatrix& gram) {
  const Eigen::Index n = gram.values.rows();
  if (n != gram.values.cols() || static_cast<std::size_t>(n) != gram.item_ids.size())
    throw DataError("write_gram: inconsistent gram");
  ByteWriter w;
  w.magic("KVLG");
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(n));
  for (std::uint32_t id : gram.item_ids) w.u32(id);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) w.f64(gram.values(i, j));
  atomic_write(path, w.bytes());
}

GramMatrix read_gram(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLG");
  r.expect_version();
  const std::uint32_t n = r.u32();
  GramMatrix g;
  g.item_ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) g.item_ids.push_back(r.u32());
  g.values.resize(n, n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i; j < n; ++j) {
      const double v = r.f64();
      g.values(i, j) = v;
      g.values(j, i) = v;
    }
  }
  r.expect_exhausted();
  return g;
}

void write_cross_gram(const std::filesystem::path& path, const CrossGram& cross) {
  if (static_cast<std::size_t>(cross.values.rows()) != cross.row_ids.size() ||
      static_cast<std::size_t>(cross.values.cols()) != cross.col_ids.size())
    throw DataError("write_cross_gram: inconsistent cross gram");
  ByteWriter w;
  w.magic("KVLX");
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(cross.values.rows()));
  w.u32(static_cast<std::uint32_t>(cross.values.cols()));
  for (std::uint32_t id : cross.row_ids) w.u32(id);
  for (std::uint32_t id : cross.col_ids) w.u32(id);
  w.matrix_row_major(cross.values);
  atomic_write(path, w.bytes());
}

CrossGram read_cross_gram(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLX");
  r.expect_version();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  CrossGram c;
  for (std::uint32_t i = 0; i < rows; ++i) c.row_ids.push_back(r.u32());
  for (std::uint32_t j = 0; j < cols; ++j) c.col_ids.push_back(r.u32());
  c.values = r.matrix_row_major(rows, cols);
  r.expect_exhausted();
  return c;
}

// --- maps and projectors ----------------------------------------------------------

void write_nystrom(const std::filesystem::path& path, const NystromMap& map) {
  ByteWriter w;
  w.magic("KVLN");
  w.u16(kFormatVersion);
  w.u64(map.fingerprint);
  write_descriptor_block(w, map.kernel.geometry, map.landmarks);
  write_kernel_spec(w, map.kernel);
  w.u32(static_cast<std::uint32_t>(map.rank()));
  w.vector(map.eigenvalues);
  w.matrix_row_major(map.projection);
  atomic_write(path, w.bytes());
}

NystromMap read_nystrom(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLN");
  r.expect_version();
  NystromMap map;
  map.fingerprint = r.u64();
  auto [geometry, landmarks] = read_descriptor_block(r, "nystrom map");
  map.landmarks = std::move(landmarks);
  map.kernel = read_kernel_spec(r, geometry, "nystrom map");
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > map.landmarks.size())
    throw DataError("nystrom map: invalid rank");
  map.eigenvalues = r.vector(rank);
  map.projection =
      r.matrix_row_major(rank, static_cast<Eigen::Index>(map.landmarks.size()));
  r.expect_exhausted();
  return map;
}

void write_fourier(const std::filesystem::path& path, const FourierMap& map) {
  ByteWriter w;
  w.magic("KVLF");
  w.u16(kFormatVersion);
  w.u64(map.fingerprint);
  w.u32(static_cast<std::uint32_t>(map.dim()));
  w.u32(static_cast<std::uint32_t>(map.rank()));
  w.f64(map.sigma);
  w.u64(map.seed);
  w.matrix_row_major(map.omegas);
  w.vector(map.offsets);
  atomic_write(path, w.bytes());
}

FourierMap read_fourier(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLF");
  r.expect_version();
  FourierMap map;
  map.fingerprint = r.u64();
  const std::uint32_t d = r.u32();
  const std::uint32_t rank = r.u32();
  if (d == 0 || rank == 0) throw DataError("fourier map: invalid shape");
  map.sigma = r.f64();
  map.seed = r.u64();
  map.omegas = r.matrix_row_major(rank, d);
  map.offsets = r.vector(rank);
  r.expect_exhausted();

  // The map is a pure function of (d, sigma, r, seed); verify integrity.
  const FourierMap regen = fourier_fit(static_cast<int>(d), map.sigma,
                                       static_cast<int>(rank), map.seed);
  if (regen.fingerprint != map.fingerprint)
    throw DataError("fourier map: fingerprint mismatch (corrupted file?)");
  return map;
}

void write_subspace(const std::filesystem::path& path, const SubspaceProjector& proj) {
  ByteWriter w;
  w.magic("KVLS");
  w.u16(kFormatVersion);
  w.u64(proj.codebook_fingerprint());
  w.u32(static_cast<std::uint32_t>(proj.size()));
  for (const auto& cl : proj.clusters()) {
    w.u32(static_cast<std::uint32_t>(cl.basis_coeffs.rows()));
    w.u32(static_cast<std::uint32_t>(cl.basis_coeffs.cols()));
    w.matrix_row_major(cl.basis_coeffs);
    w.vector(cl.eigenvalues);
    w.vector(cl.centroid);
  }
  atomic_write(path, w.bytes());
}

SubspaceProjector read_subspace(const std::filesystem::path& path,
                                std::shared_ptr<const ImplicitCodebook> codebook) {
  if (!codebook) throw DataError("read_subspace: null codebook");
  ByteReader r = open_reader(path);
  r.expect_magic("KVLS");
  r.expect_version();
  const std::uint64_t fp = r.u64();
  if (fp != codebook->fingerprint())
    throw DataError("subspace projector: fitted on a different codebook");
  const std::uint32_t m = r.u32();
  if (static_cast<int>(m) != codebook->size())
    throw DataError("subspace projector: cluster count mismatch");
  std::vector<SubspaceCluster> clusters;
  clusters.reserve(m);
  for (std::uint32_t s = 0; s < m; ++s) {
    const std::uint32_t ns = r.u32();
    const std::uint32_t rs = r.u32();
    if (ns != codebook->members()[s].size())
      throw DataError("subspace projector: member count mismatch");
    SubspaceCluster cl;
    cl.basis_coeffs = r.matrix_row_major(ns, rs);
    cl.eigenvalues = r.vector(rs);
    cl.centroid = r.vector(rs);
    clusters.push_back(std::move(cl));
  }
  r.expect_exhausted();
  return SubspaceProjector(std::move(clusters), std::move(codebook));
}

// --- models ------------------------------------------------------------------------

void write_model(const std::filesystem::path& path, const AnyModel& model) {
  ByteWriter w;
  w.magic("KVLM");
  w.u16(kFormatVersion);
  if (const auto* ridge = std::get_if<RidgeModel>(&model)) {
    w.u8(0);
    w.u8(0);
    w.f64(ridge->lambda);
    w.u32(static_cast<std::uint32_t>(ridge->classes.size()));
    for (std::uint32_t c : ridge->classes) w.u32(c);
    w.u32(static_cast<std::uint32_t>(ridge->weights.rows()));
    w.matrix_row_major(ridge->weights);
  } else {
    const auto& kridge = std::get<KernelRidgeModel>(model);
    w.u8(1);
    w.u8(0);
    w.f64(kridge.lambda);
    w.u32(static_cast<std::uint32_t>(kridge.classes.size()));
    for (std::uint32_t c : kridge.classes) w.u32(c);
    w.u32(static_cast<std::uint32_t>(kridge.training_ids.size()));
    for (std::uint32_t id : kridge.training_ids) w.u32(id);
    w.matrix_row_major(kridge.dual);
    w.vector(kridge.bias);
  }
  atomic_write(path, w.bytes());
}

AnyModel read_model(const std::filesystem::path& path) {
  ByteReader r = open_reader(path);
  r.expect_magic("KVLM");
  r.expect_version();
  const std::uint8_t kind = r.u8();
  r.u8();
  const double lambda = r.f64();
  const std::uint32_t c = r.u32();
  if (c < 2) throw DataError("model: needs >= 2 classes");
  std::vector<std::uint32_t> classes;
  for (std::uint32_t i = 0; i < c; ++i) classes.push_back(r.u32());

  if (kind == 0) {
    RidgeModel model;
    model.lambda = lambda;
    model.classes = std::move(classes);
    const std::uint32_t rows = r.u32();
    model.weights = r.matrix_row_major(rows, c);
    r.expect_exhausted();
    return model;
  }
  if (kind != 1) throw DataError("model: invalid kind byte");
  KernelRidgeModel model;
  model.lambda = lambda;
  model.classes = std::move(classes);
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) model.training_ids.push_back(r.u32());
  model.dual = r.matrix_row_major(n, c);
  model.bias = r.vector(c);
  r.expect_exhausted();
  return model;
}

// --- CSV export ----------------------------------------------------------------------

namespace {

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_g17(m(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace

void write_gram_csv(const std::filesystem::path& path, const GramMatrix& gram) {
  atomic_write_text(path, matrix_csv(gram.values));
}

void write_cross_gram_csv(const std::filesystem::path& path, const CrossGram& cross) {
  atomic_write_text(path, matrix_csv(cross.values));
}

void write_codes_csv(const std::filesystem::path& path, const CodeTable& table) {
  std::string out;
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    out += std::to_string(table.ids[static_cast<std::size_t>(i)]);
    out += ',';
    out += std::to_string(table.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      out += ',';
      out += format_g17(table.values(i, j));
    }
    out += '\n';
  }
  atomic_write_text(path, out);
}

}  // namespace kvlad
