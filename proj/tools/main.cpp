// kvlad command-line front end: gen, codebook, encode, gram, classify,
// eval, bench, export. Prints a single-line JSON summary to stdout and a
// human-readable log to stderr. Exit codes: 0 success, 1 usage error,
// 2 data error, 3 numerical error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/encoders.hpp"
#include "kvlad/errors.hpp"
#include "kvlad/eval.hpp"
#include "kvlad/geometry.hpp"
#include "kvlad/io.hpp"
#include "kvlad/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kvlad;

namespace {

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

GeometryKind parse_geometry(const std::string& s) {
  if (s == "euclidean") return GeometryKind::Euclidean;
  if (s == "spd") return GeometryKind::Spd;
  if (s == "grassmann") return GeometryKind::Grassmann;
  throw UsageError("unknown geometry \"" + s + "\" (euclidean, spd, grassmann)");
}

KernelFamily parse_kernel(const std::string& s) {
  if (s == "rbf") return KernelFamily::EuclideanRbf;
  if (s == "linear") return KernelFamily::Linear;
  if (s == "stein") return KernelFamily::Stein;
  if (s == "projection") return KernelFamily::ProjectionRbf;
  throw UsageError("unknown kernel \"" + s + "\" (rbf, linear, stein, projection)");
}

EncoderTag parse_encoder(const std::string& s) {
  if (s == "vlad") return EncoderTag::Vlad;
  if (s == "le-vlad") return EncoderTag::LeVlad;
  if (s == "kvlad") return EncoderTag::Kvlad;
  if (s == "nvlad") return EncoderTag::Nvlad;
  if (s == "svlad") return EncoderTag::Svlad;
  if (s == "fvlad") return EncoderTag::Fvlad;
  throw UsageError("unknown encoder \"" + s + "\"");
}

NormalizationSpec parse_norm(const std::string& s) {
  NormalizationSpec norm;
  if (s.empty() || s == "none") return norm;
  std::size_t at = 0;
  while (at <= s.size()) {
    const std::size_t comma = s.find(',', at);
    const std::string tok =
        s.substr(at, comma == std::string::npos ? comma : comma - at);
    if (tok == "intra")
      norm.intra = true;
    else if (tok == "ssr")
      norm.ssr = true;
    else if (tok == "global")
      norm.global = true;
    else
      throw UsageError("unknown normalization flag \"" + tok +
                       "\" (intra, ssr, global)");
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return norm;
}

std::string read_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char buf[4] = {0, 0, 0, 0};
  in.read(buf, 4);
  return std::string(buf, 4);
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Flat `key = value` config support. --config FILE (anywhere on the
// command line) loads FILE and injects --key=value tokens for keys that
// were not given explicitly, so flags always override the file.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file path");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw DataError("cannot open config file " + config_path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw UsageError(config_path + " line " + std::to_string(lineno) +
                       ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw UsageError(config_path + " line " + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') ||
                              (value.front() == '\'' && value.back() == '\'')))
      value = value.substr(1, value.size() - 2);

    const std::string flag = "--" + key;
    bool already = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) already = true;
    if (already) continue;
    args.push_back(value.empty() ? flag : flag + "=" + value);
  }
  return args;
}

// Resolves spec defaults: m = 256 for Euclidean, 32 for SPD/Grassmann.
int default_codebook_size(GeometryKind kind) {
  return kind == GeometryKind::Euclidean ? 256 : 32;
}

std::vector<std::uint32_t> labels_from_sets(const std::vector<DescriptorSet>& sets) {
  std::vector<std::uint32_t> out;
  out.reserve(sets.size());
  for (const auto& s : sets) out.push_back(s.label);
  return out;
}

// Labels for a sequence of item ids, taken from a dataset file.
std::vector<std::uint32_t> labels_for_ids(const fs::path& labels_path,
                                          const std::vector<std::uint32_t>& ids) {
  const LoadedDataset ds = read_dataset(labels_path);
  std::vector<std::uint32_t> out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    const auto it = std::find_if(ds.sets.begin(), ds.sets.end(),
                                 [id](const DescriptorSet& s) { return s.id == id; });
    if (it == ds.sets.end())
      throw DataError(labels_path.string() + ": no set with id " + std::to_string(id));
    out.push_back(it->label);
  }
  return out;
}

// Flattens an SPD dataset through the matrix log (the le-vlad path).
std::vector<DescriptorSet> flatten_spd_sets(const std::vector<DescriptorSet>& sets) {
  std::vector<DescriptorSet> out;
  out.reserve(sets.size());
  for (const auto& s : sets) {
    DescriptorSet flat;
    flat.id = s.id;
    flat.label = s.label;
    flat.descriptors.reserve(s.descriptors.size());
    for (const auto& d : s.descriptors)
      flat.descriptors.emplace_back(spd_log_vec(std::get<SpdMatrix>(d)));
    out.push_back(std::move(flat));
  }
  return out;
}

std::uint64_t file_size_or_zero(const fs::path& p) {
  std::error_code ec;
  const auto n = fs::file_size(p, ec);
  return ec ? 0 : static_cast<std::uint64_t>(n);
}

// --- gen ---------------------------------------------------------------------

struct GenOptions {
  std::string geometry = "euclidean";
  int classes = 2;
  int sets_per_class = 10;
  int per_set = 0;  // 0 -> geometry default (1000 Euclidean, 100 manifolds)
  int d = 0;        // 0 -> geometry default
  int p = 3;
  double separation = 6.0;
  double noise = 0.2;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenOptions& opt) {
  Stopwatch watch;
  const GeometryKind kind = parse_geometry(opt.geometry);
  const int per_set =
      opt.per_set > 0 ? opt.per_set : (kind == GeometryKind::Euclidean ? 1000 : 100);
  const int d = opt.d > 0 ? opt.d : (kind == GeometryKind::Euclidean ? 8 : 5);

  Dataset ds;
  switch (kind) {
    case GeometryKind::Euclidean: {
      EuclideanGenParams p;
      p.classes = opt.classes;
      p.sets_per_class = opt.sets_per_class;
      p.per_set = per_set;
      p.dim = d;
      p.separation = opt.separation;
      p.seed = opt.seed;
      p.train_fraction = opt.train_fraction;
      ds = gen_euclidean(p);
      break;
    }
    case GeometryKind::Spd: {
      SpdGenParams p;
      p.classes = opt.classes;
      p.sets_per_class = opt.sets_per_class;
      p.per_set = per_set;
      p.dim = d;
      p.seed = opt.seed;
      p.train_fraction = opt.train_fraction;
      ds = gen_spd(p);
      break;
    }
    case GeometryKind::Grassmann: {
      GrassmannGenParams p;
      p.classes = opt.classes;
      p.sets_per_class = opt.sets_per_class;
      p.per_set = per_set;
      p.dim = d;
      p.subdim = opt.p;
      p.noise = opt.noise;
      p.seed = opt.seed;
      p.train_fraction = opt.train_fraction;
      ds = gen_grassmann(p);
      break;
    }
  }

  fs::path base(opt.out);
  if (base.extension() == ".kvld") base.replace_extension();
  const fs::path train_path = base.string() + ".train.kvld";
  const fs::path test_path = base.string() + ".test.kvld";

  write_dataset(train_path, ds.geometry, ds.train);
  if (!ds.test.empty()) write_dataset(test_path, ds.geometry, ds.test);

  log::info("gen: wrote " + std::to_string(ds.train.size()) + " train and " +
            std::to_string(ds.test.size()) + " test sets");
  json summary = {{"command", "gen"},
                  {"geometry", to_string(kind)},
                  {"train", train_path.string()},
                  {"train_sets", ds.train.size()},
                  {"test_sets", ds.test.size()},
                  {"train_bytes", file_size_or_zero(train_path)},
                  {"elapsed_ms", watch.ms()}};
  summary["test"] = ds.test.empty() ? json() : json(test_path.string());
  emit(summary);
  return 0;
}

// --- codebook ------------------------------------------------------------------

struct CodebookOptions {
  std::string in;
  std::string method = "kmeans";
  std::string kernel = "rbf";
  std::string sigma = "1.0";  // number or "cv"
  std::vector<double> sigma_grid;
  int cv_folds = 3;
  double lambda = 1e-3;
  int m = 0;  // 0 -> geometry default
  std::size_t max_train = 2000;
  std::uint64_t seed = 0;
  std::string out;
  std::string fit_map;  // "", "nystrom", "fourier"
  int r = 0;            // 0 -> 256
  std::string map_out;
  bool fit_subspace = false;
  int subspace_r = 0;  // 0 -> full rank
  std::string subspace_out;
};

std::vector<double> default_sigma_grid(const KernelSpec& kernel) {
  std::vector<double> grid;
  if (kernel.family == KernelFamily::Stein) {
    // restricted to the guaranteed-PD range sigma >= (n-1)/2
    const double base = std::max(0.5, 0.5 * (kernel.geometry.dim - 1));
    for (double f : {1.0, 2.0, 4.0, 8.0}) grid.push_back(base * f);
  } else if (kernel.family == KernelFamily::ProjectionRbf) {
    for (double s : {0.05, 0.1, 0.2, 0.5, 1.0}) grid.push_back(s);
  } else {
    for (double s : {0.5, 1.0, 2.0, 4.0, 8.0}) grid.push_back(s);
  }
  return grid;
}

double parse_sigma_value(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("--sigma expects a number or \"cv\", got \"" + s + "\"");
  }
}

int run_codebook(const CodebookOptions& opt) {
  Stopwatch watch;
  const LoadedDataset data = read_dataset(opt.in);
  json summary = {{"command", "codebook"}, {"in", opt.in}, {"method", opt.method}};

  if (opt.method == "kmeans") {
    // Explicit codebook. SPD inputs are flattened through the matrix log
    // (the le-vlad training path); Grassmann inputs have no flat form here.
    std::vector<DescriptorSet> sets = data.sets;
    if (data.geometry.kind == GeometryKind::Spd) {
      log::info("codebook: flattening SPD descriptors via the matrix log");
      sets = flatten_spd_sets(sets);
    } else if (data.geometry.kind == GeometryKind::Grassmann) {
      throw UsageError("codebook --method kmeans does not apply to Grassmann data");
    }

    std::uint64_t map_fingerprint = 0;
    std::vector<EuclideanPoint> points;

    if (!opt.fit_map.empty()) {
      if (opt.map_out.empty()) throw UsageError("--fit-map requires --map-out");
      const int r = opt.r > 0 ? opt.r : 256;
      if (opt.sigma == "cv")
        throw UsageError("--sigma cv is not available with --fit-map");
      if (opt.fit_map == "nystrom") {
        KernelSpec kernel{data.geometry, parse_kernel(opt.kernel),
                          parse_sigma_value(opt.sigma)};
        kernel.check();
        const auto pool = pool_descriptors(data.sets, 0, 0);  // all descriptors
        const std::size_t landmark_cap =
            std::min(pool.size(), static_cast<std::size_t>(std::max(4 * r, 256)));
        const auto landmarks = pool_descriptors(data.sets, landmark_cap, opt.seed);
        const NystromMap nmap = nystrom_fit(
            landmarks, kernel, std::min<int>(r, static_cast<int>(landmarks.size())));
        map_fingerprint = nmap.fingerprint;
        points.reserve(pool.size());
        for (const auto& d : pool) points.push_back(nystrom_map(d, nmap));
        write_nystrom(opt.map_out, nmap);
        summary["map"] = {{"kind", "nystrom"},
                          {"path", opt.map_out},
                          {"rank", nmap.rank()},
                          {"landmarks", nmap.landmarks.size()}};
      } else if (opt.fit_map == "fourier") {
        if (data.geometry.kind != GeometryKind::Euclidean)
          throw UsageError("--fit-map fourier requires Euclidean data");
        if (parse_kernel(opt.kernel) != KernelFamily::EuclideanRbf)
          throw UsageError("--fit-map fourier requires --kernel rbf");
        const FourierMap fmap = fourier_fit(data.geometry.dim, parse_sigma_value(opt.sigma),
                                            r, opt.seed);
        map_fingerprint = fmap.fingerprint;
        const auto pool = pool_descriptors(data.sets, 0, 0);
        points.reserve(pool.size());
        for (const auto& d : pool)
          points.push_back(fourier_map(std::get<EuclideanPoint>(d), fmap));
        write_fourier(opt.map_out, fmap);
        summary["map"] = {
            {"kind", "fourier"}, {"path", opt.map_out}, {"rank", fmap.rank()}};
      } else {
        throw UsageError("unknown --fit-map \"" + opt.fit_map + "\" (nystrom, fourier)");
      }
    } else {
      const auto pool = pool_descriptors(sets, opt.max_train, opt.seed);
      points.reserve(pool.size());
      for (const auto& d : pool) points.push_back(std::get<EuclideanPoint>(d));
    }

    const int m = opt.m > 0 ? opt.m : default_codebook_size(data.geometry.kind);
    ClusterOptions copts;
    copts.seed = opt.seed;
    ExplicitCodebook cb = kmeans_fit(points, m, copts);
    cb.map_fingerprint = map_fingerprint;
    write_codebook(opt.out, cb);
    summary["kind"] = "explicit";
    summary["m"] = cb.size();
    summary["dim"] = cb.dim();
  } else if (opt.method == "kernel-kmeans") {
    KernelSpec kernel{data.geometry, parse_kernel(opt.kernel), 1.0};
    double sigma;
    if (opt.sigma == "cv") {
      const auto grid =
          opt.sigma_grid.empty() ? default_sigma_grid(kernel) : opt.sigma_grid;
      KvladPipelineConfig config;
      config.family = kernel.family;
      config.codebook_size =
          opt.m > 0 ? opt.m : default_codebook_size(data.geometry.kind);
      config.lambda = opt.lambda;
      config.max_train_descriptors = opt.max_train;
      const auto labels = labels_from_sets(data.sets);
      sigma = cv_bandwidth(data.sets, labels, grid, opt.cv_folds, opt.seed,
                           make_kvlad_cv_pipeline(config));
      log::info("codebook: cross-validated sigma = " + std::to_string(sigma));
      summary["cv_grid"] = grid;
    } else {
      sigma = parse_sigma_value(opt.sigma);
    }
    kernel.bandwidth = sigma;
    kernel.check();
    if (kernel.family == KernelFamily::Stein &&
        !stein_sigma_is_pd_safe(sigma, data.geometry.dim))
      log::warn("codebook: stein sigma outside the guaranteed-PD range");

    const auto pool = pool_descriptors(data.sets, opt.max_train, opt.seed);
    const int m = opt.m > 0 ? opt.m : default_codebook_size(data.geometry.kind);
    ClusterOptions copts;
    copts.seed = opt.seed;
    const ImplicitCodebook cb = kernel_kmeans_fit(pool, kernel, m, copts);
    write_codebook(opt.out, cb);
    summary["kind"] = "implicit";
    summary["m"] = cb.size();
    summary["sigma"] = sigma;
    summary["retained"] = cb.training().size();

    if (opt.fit_subspace) {
      if (opt.subspace_out.empty())
        throw UsageError("--fit-subspace requires --subspace-out");
      auto shared = std::make_shared<const ImplicitCodebook>(cb);
      const SubspaceProjector proj = subspace_fit(shared, opt.subspace_r);
      write_subspace(opt.subspace_out, proj);
      std::uint32_t total_rank = 0;
      for (const auto& cl : proj.clusters())
        total_rank += static_cast<std::uint32_t>(cl.eigenvalues.size());
      summary["subspace"] = {{"path", opt.subspace_out}, {"total_rank", total_rank}};
    }
  } else {
    throw UsageError("unknown --method \"" + opt.method + "\" (kmeans, kernel-kmeans)");
  }

  summary["out"] = opt.out;
  summary["bytes"] = file_size_or_zero(opt.out);
  summary["elapsed_ms"] = watch.ms();
  emit(summary);
  return 0;
}

// --- encode --------------------------------------------------------------------

struct EncodeOptions {
  std::string in;
  std::string codebook;
  std::string encoder = "vlad";
  std::string map;
  std::string subspace;
  int r = 0;
  std::string norm;
  std::string out;
};

int run_encode(const EncodeOptions& opt) {
  Stopwatch watch;
  const LoadedDataset data = read_dataset(opt.in);
  const EncoderTag tag = parse_encoder(opt.encoder);
  const NormalizationSpec norm = parse_norm(opt.norm);

  if (tag == EncoderTag::Kvlad)
    throw UsageError("kvlad has no explicit codes; use the gram command instead");
  if (tag == EncoderTag::Fvlad && data.geometry.kind != GeometryKind::Euclidean)
    throw UsageError("encoder fvlad applies only to Euclidean data, but " + opt.in +
                     " holds " + std::string(to_string(data.geometry.kind)) +
                     " descriptors");
  if (tag == EncoderTag::LeVlad && data.geometry.kind != GeometryKind::Spd)
    throw UsageError("encoder le-vlad applies only to SPD data, but " + opt.in +
                     " holds " + std::string(to_string(data.geometry.kind)) +
                     " descriptors");
  if (tag == EncoderTag::Vlad && data.geometry.kind != GeometryKind::Euclidean)
    throw UsageError("encoder vlad requires Euclidean data (use le-vlad for SPD)");

  const AnyCodebook any_cb = read_codebook(opt.codebook);
  std::vector<VladCode> codes;
  codes.reserve(data.sets.size());

  switch (tag) {
    case EncoderTag::Vlad:
    case EncoderTag::LeVlad: {
      if (!std::holds_alternative<ExplicitCodebook>(any_cb))
        throw DataError(opt.codebook + ": expected an explicit codebook");
      const auto& cb = std::get<ExplicitCodebook>(any_cb);
      if (cb.map_fingerprint != 0)
        throw UsageError(opt.codebook +
                         " was trained on mapped vectors; encode with nvlad/fvlad");
      const std::vector<DescriptorSet> sets =
          tag == EncoderTag::LeVlad ? flatten_spd_sets(data.sets) : data.sets;
      for (const auto& s : sets) {
        VladCode c = vlad_encode(s, cb, norm);
        c.encoder = tag;
        codes.push_back(std::move(c));
      }
      break;
    }
    case EncoderTag::Nvlad:
    case EncoderTag::Fvlad: {
      if (opt.map.empty()) throw UsageError("--map is required for nvlad/fvlad");
      if (!std::holds_alternative<ExplicitCodebook>(any_cb))
        throw DataError(opt.codebook + ": expected an explicit codebook");
      const auto& cb = std::get<ExplicitCodebook>(any_cb);
      const std::string magic = read_magic(opt.map);
      if (tag == EncoderTag::Nvlad) {
        if (magic != "KVLN") throw DataError(opt.map + ": expected a Nystrom map (KVLN)");
        const NystromMap map = read_nystrom(opt.map);
        if (opt.r > 0 && opt.r != map.rank())
          throw UsageError("--r " + std::to_string(opt.r) +
                           " does not match the map rank " + std::to_string(map.rank()));
        for (const auto& s : data.sets) codes.push_back(pipeline_encode(s, map, cb, norm));
      } else {
        if (magic != "KVLF") throw DataError(opt.map + ": expected a Fourier map (KVLF)");
        const FourierMap map = read_fourier(opt.map);
        if (opt.r > 0 && opt.r != map.rank())
          throw UsageError("--r " + std::to_string(opt.r) +
                           " does not match the map rank " + std::to_string(map.rank()));
        for (const auto& s : data.sets) codes.push_back(pipeline_encode(s, map, cb, norm));
      }
      break;
    }
    case EncoderTag::Svlad: {
      if (opt.subspace.empty()) throw UsageError("--subspace is required for svlad");
      if (!std::holds_alternative<std::shared_ptr<const ImplicitCodebook>>(any_cb))
        throw DataError(opt.codebook + ": expected an implicit codebook for svlad");
      const auto cb = std::get<std::shared_ptr<const ImplicitCodebook>>(any_cb);
      const SubspaceProjector proj = read_subspace(opt.subspace, cb);
      for (const auto& s : data.sets) codes.push_back(svlad_encode(s, *cb, proj, norm));
      break;
    }
    case EncoderTag::Kvlad:
      break;  // unreachable
  }

  std::vector<std::uint32_t> ids, labels;
  for (const auto& s : data.sets) {
    ids.push_back(s.id);
    labels.push_back(s.label);
  }
  const CodeTable table = CodeTable::from_codes(codes, ids, labels);
  write_codes(opt.out, table);

  emit(json{{"command", "encode"},
            {"encoder", to_string(tag)},
            {"in", opt.in},
            {"out", opt.out},
            {"sets", codes.size()},
            {"code_length", table.values.cols()},
            {"bytes", file_size_or_zero(opt.out)},
            {"elapsed_ms", watch.ms()}});
  return 0;
}

// --- gram ----------------------------------------------------------------------

struct GramOptions {
  std::string in;
  std::string train;
  std::string codebook;
  bool normalized = true;
  std::string out;
};

int run_gram(const GramOptions& opt) {
  Stopwatch watch;
  const LoadedDataset data = read_dataset(opt.in);
  const AnyCodebook any_cb = read_codebook(opt.codebook);
  if (!std::holds_alternative<std::shared_ptr<const ImplicitCodebook>>(any_cb))
    throw DataError(opt.codebook + ": gram requires an implicit codebook");
  const auto cb = std::get<std::shared_ptr<const ImplicitCodebook>>(any_cb);

  json summary = {{"command", "gram"},
                  {"in", opt.in},
                  {"normalized", opt.normalized},
                  {"out", opt.out}};
  if (opt.train.empty()) {
    const GramMatrix g = kvlad_gram(data.sets, *cb, opt.normalized);
    write_gram(opt.out, g);
    summary["shape"] = {g.values.rows(), g.values.cols()};
  } else {
    const LoadedDataset train = read_dataset(opt.train);
    const CrossGram c = kvlad_cross_gram(data.sets, train.sets, *cb, opt.normalized);
    write_cross_gram(opt.out, c);
    summary["train"] = opt.train;
    summary["shape"] = {c.values.rows(), c.values.cols()};
  }
  summary["bytes"] = file_size_or_zero(opt.out);
  summary["elapsed_ms"] = watch.ms();
  emit(summary);
  return 0;
}

// --- classify / eval --------------------------------------------------------------

struct ClassifyOptions {
  std::string codes;
  std::string gram;
  std::string labels;
  double lambda = 1e-3;
  std::string model_out;
};

int run_classify(const ClassifyOptions& opt) {
  Stopwatch watch;
  if (opt.codes.empty() == opt.gram.empty())
    throw UsageError("classify needs exactly one of --codes or --gram");

  json summary = {{"command", "classify"}, {"lambda", opt.lambda}};
  if (!opt.codes.empty()) {
    const CodeTable table = read_codes(opt.codes);
    const std::vector<std::uint32_t> labels =
        opt.labels.empty() ? table.labels : labels_for_ids(opt.labels, table.ids);
    const RidgeModel model = ridge_train(table.values, labels, opt.lambda);
    write_model(opt.model_out, model);
    summary["kind"] = "ridge";
    summary["codes"] = opt.codes;
    summary["n"] = table.values.rows();
    summary["classes"] = model.classes.size();
    summary["train_accuracy"] = accuracy(ridge_predict(model, table.values), labels);
  } else {
    if (opt.labels.empty()) throw UsageError("classify --gram requires --labels");
    const GramMatrix g = read_gram(opt.gram);
    const std::vector<std::uint32_t> labels = labels_for_ids(opt.labels, g.item_ids);
    const KernelRidgeModel model = kridge_train(g, labels, opt.lambda);
    write_model(opt.model_out, model);
    summary["kind"] = "kernel-ridge";
    summary["gram"] = opt.gram;
    summary["n"] = g.values.rows();
    summary["classes"] = model.classes.size();
    CrossGram self;
    self.values = g.values;
    self.row_ids = g.item_ids;
    self.col_ids = g.item_ids;
    summary["train_accuracy"] = accuracy(kridge_predict(model, self), labels);
  }
  summary["model"] = opt.model_out;
  summary["bytes"] = file_size_or_zero(opt.model_out);
  summary["elapsed_ms"] = watch.ms();
  emit(summary);
  return 0;
}

struct EvalOptions {
  std::string model;
  std::string codes;
  std::string gram;
  std::string labels;
};

int run_eval(const EvalOptions& opt) {
  Stopwatch watch;
  if (opt.codes.empty() == opt.gram.empty())
    throw UsageError("eval needs exactly one of --codes or --gram");
  const AnyModel model = read_model(opt.model);

  std::vector<std::uint32_t> pred, truth;
  json summary = {{"command", "eval"}, {"model", opt.model}};
  if (!opt.codes.empty()) {
    if (!std::holds_alternative<RidgeModel>(model))
      throw DataError(opt.model + " is a kernel model; evaluate it with --gram");
    const CodeTable table = read_codes(opt.codes);
    truth = opt.labels.empty() ? table.labels : labels_for_ids(opt.labels, table.ids);
    pred = ridge_predict(std::get<RidgeModel>(model), table.values);
    summary["codes"] = opt.codes;
  } else {
    if (!std::holds_alternative<KernelRidgeModel>(model))
      throw DataError(opt.model + " is a primal model; evaluate it with --codes");
    if (opt.labels.empty()) throw UsageError("eval --gram requires --labels");
    const std::string magic = read_magic(opt.gram);
    CrossGram cross;
    if (magic == "KVLX") {
      cross = read_cross_gram(opt.gram);
    } else if (magic == "KVLG") {
      const GramMatrix g = read_gram(opt.gram);
      cross.values = g.values;
      cross.row_ids = g.item_ids;
      cross.col_ids = g.item_ids;
    } else {
      throw DataError(opt.gram + ": expected a gram file (KVLG or KVLX)");
    }
    truth = labels_for_ids(opt.labels, cross.row_ids);
    pred = kridge_predict(std::get<KernelRidgeModel>(model), cross);
    summary["gram"] = opt.gram;
  }

  summary["n"] = pred.size();
  summary["accuracy"] = accuracy(pred, truth);
  summary["elapsed_ms"] = watch.ms();
  emit(summary);
  return 0;
}

// --- bench ---------------------------------------------------------------------

struct BenchOptions {
  std::string dataset;
  std::vector<std::string> encoders;
  std::string codebook;           // explicit (vlad / le-vlad / nvlad / fvlad)
  std::string implicit_codebook;  // kvlad / svlad
  std::string nystrom;
  std::string fourier;
  std::string subspace;
  std::string norm;
  int warmup = 5;
  int repetitions = 20;
};

json timing_row(const std::string& encoder, GeometryKind geometry,
                const std::string& unit, std::vector<double> samples_ms, int warmup) {
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  double mean = 0.0;
  for (double v : samples_ms) mean += v;
  mean /= static_cast<double>(n);
  const double median = n % 2 == 1
                            ? samples_ms[n / 2]
                            : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const std::size_t p95_idx =
      std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1);
  return json{{"command", "bench"},
              {"encoder", encoder},
              {"geometry", to_string(geometry)},
              {"unit", unit},
              {"mean_ms", mean},
              {"median_ms", median},
              {"p95_ms", samples_ms[p95_idx]},
              {"repetitions", n},
              {"warmup", warmup}};
}

int run_bench(const BenchOptions& opt) {
  if (opt.dataset.empty()) throw UsageError("bench: config must set dataset");
  if (opt.encoders.empty()) throw UsageError("bench: config must set encoders");
  if (opt.repetitions < 20) throw UsageError("bench: repetitions must be >= 20");
  const LoadedDataset data = read_dataset(opt.dataset);
  const NormalizationSpec norm = parse_norm(opt.norm);
  const int total = opt.warmup + opt.repetitions;

  std::optional<ExplicitCodebook> explicit_cb;
  if (!opt.codebook.empty()) {
    const AnyCodebook cb = read_codebook(opt.codebook);
    if (!std::holds_alternative<ExplicitCodebook>(cb))
      throw DataError(opt.codebook + ": expected an explicit codebook");
    explicit_cb = std::get<ExplicitCodebook>(cb);
  }
  std::shared_ptr<const ImplicitCodebook> implicit_cb;
  if (!opt.implicit_codebook.empty()) {
    const AnyCodebook cb = read_codebook(opt.implicit_codebook);
    if (!std::holds_alternative<std::shared_ptr<const ImplicitCodebook>>(cb))
      throw DataError(opt.implicit_codebook + ": expected an implicit codebook");
    implicit_cb = std::get<std::shared_ptr<const ImplicitCodebook>>(cb);
  }

  for (const std::string& name : opt.encoders) {
    const EncoderTag tag = parse_encoder(name);
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(opt.repetitions));

    const auto measure_per_set = [&](auto&& encode_one) {
      for (int rep = 0; rep < total; ++rep) {
        const auto& set = data.sets[static_cast<std::size_t>(rep) % data.sets.size()];
        Stopwatch w;
        encode_one(set);
        if (rep >= opt.warmup) samples.push_back(w.ms());
      }
    };

    std::string unit = "ms_per_set";
    switch (tag) {
      case EncoderTag::Vlad: {
        if (!explicit_cb) throw DataError("bench: vlad requires codebook=");
        measure_per_set(
            [&](const DescriptorSet& s) { (void)vlad_encode(s, *explicit_cb, norm); });
        break;
      }
      case EncoderTag::LeVlad: {
        if (!explicit_cb) throw DataError("bench: le-vlad requires codebook=");
        measure_per_set([&](const DescriptorSet& s) {
          const auto flat = flatten_spd_sets({s});
          (void)vlad_encode(flat[0], *explicit_cb, norm);
        });
        break;
      }
      case EncoderTag::Nvlad: {
        if (!explicit_cb) throw DataError("bench: nvlad requires codebook=");
        if (opt.nystrom.empty()) throw DataError("bench: nvlad requires nystrom=");
        const NystromMap map = read_nystrom(opt.nystrom);
        measure_per_set([&](const DescriptorSet& s) {
          (void)pipeline_encode(s, map, *explicit_cb, norm);
        });
        break;
      }
      case EncoderTag::Fvlad: {
        if (!explicit_cb) throw DataError("bench: fvlad requires codebook=");
        if (opt.fourier.empty()) throw DataError("bench: fvlad requires fourier=");
        const FourierMap map = read_fourier(opt.fourier);
        measure_per_set([&](const DescriptorSet& s) {
          (void)pipeline_encode(s, map, *explicit_cb, norm);
        });
        break;
      }
      case EncoderTag::Svlad: {
        if (!implicit_cb) throw DataError("bench: svlad requires implicit-codebook=");
        if (opt.subspace.empty()) throw DataError("bench: svlad requires subspace=");
        const SubspaceProjector proj = read_subspace(opt.subspace, implicit_cb);
        measure_per_set([&](const DescriptorSet& s) {
          (void)svlad_encode(s, *implicit_cb, proj, norm);
        });
        break;
      }
      case EncoderTag::Kvlad: {
        // No explicit encoding is performed for kVLAD; the measured
        // quantity is one inner-product evaluation between two sets.
        if (!implicit_cb) throw DataError("bench: kvlad requires implicit-codebook=");
        unit = "ms_per_pair";
        const std::size_t n = data.sets.size();
        for (int rep = 0; rep < total; ++rep) {
          const auto& a = data.sets[static_cast<std::size_t>(rep) % n];
          const auto& b = data.sets[(static_cast<std::size_t>(rep) + 1) % n];
          Stopwatch w;
          (void)kvlad_inner(a, b, *implicit_cb, true);
          if (rep >= opt.warmup) samples.push_back(w.ms());
        }
        break;
      }
    }
    emit(timing_row(name, data.geometry.kind, unit, std::move(samples), opt.warmup));
  }
  return 0;
}

// --- export --------------------------------------------------------------------

struct ExportOptions {
  std::string in;
  std::string csv;
};

int run_export(const ExportOptions& opt) {
  Stopwatch watch;
  const std::string magic = read_magic(opt.in);
  if (magic == "KVLG") {
    write_gram_csv(opt.csv, read_gram(opt.in));
  } else if (magic == "KVLX") {
    write_cross_gram_csv(opt.csv, read_cross_gram(opt.in));
  } else if (magic == "KVLE") {
    write_codes_csv(opt.csv, read_codes(opt.in));
  } else {
    throw DataError(opt.in + ": export supports gram (KVLG/KVLX) and codes (KVLE) files");
  }
  emit(json{{"command", "export"},
            {"in", opt.in},
            {"csv", opt.csv},
            {"bytes", file_size_or_zero(opt.csv)},
            {"elapsed_ms", watch.ms()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernelized VLAD aggregation toolkit"};
  app.require_subcommand(1);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string cfg_sink;
  gen_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  gen_cmd->add_option("--geometry", gen.geometry, "euclidean, spd or grassmann");
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--sets-per-class", gen.sets_per_class);
  gen_cmd->add_option("--per-set", gen.per_set, "descriptors per set (default 1000/100)");
  gen_cmd->add_option("--d", gen.d, "descriptor dimension");
  gen_cmd->add_option("--p", gen.p, "Grassmann subspace dimension");
  gen_cmd->add_option("--separation", gen.separation, "Euclidean class separation");
  gen_cmd->add_option("--noise", gen.noise, "Grassmann basis perturbation");
  gen_cmd->add_option("--train-fraction", gen.train_fraction);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out)->required();

  CodebookOptions cbo;
  CLI::App* cb_cmd = app.add_subcommand("codebook", "fit a codebook (and optional maps)");
  cb_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  cb_cmd->add_option("--in", cbo.in)->required();
  cb_cmd->add_option("--method", cbo.method, "kmeans or kernel-kmeans");
  cb_cmd->add_option("--kernel", cbo.kernel, "rbf, linear, stein, projection");
  cb_cmd->add_option("--sigma", cbo.sigma, "bandwidth, or \"cv\" to cross-validate");
  cb_cmd->add_option("--sigma-grid", cbo.sigma_grid, "explicit CV grid")->delimiter(',');
  cb_cmd->add_option("--cv-folds", cbo.cv_folds);
  cb_cmd->add_option("--lambda", cbo.lambda, "ridge lambda used inside CV");
  cb_cmd->add_option("--m", cbo.m, "codebook size (default 256 Euclidean, 32 manifolds)");
  cb_cmd->add_option("--max-train", cbo.max_train, "cap on pooled training descriptors");
  cb_cmd->add_option("--seed", cbo.seed);
  cb_cmd->add_option("--out", cbo.out)->required();
  cb_cmd->add_option("--fit-map", cbo.fit_map,
                     "also fit an embedding map: nystrom or fourier");
  cb_cmd->add_option("--r", cbo.r, "map dimension (default 256)");
  cb_cmd->add_option("--map-out", cbo.map_out);
  cb_cmd->add_flag("--fit-subspace", cbo.fit_subspace, "also fit per-cluster subspaces");
  cb_cmd->add_option("--subspace-r", cbo.subspace_r, "per-cluster rank cap (default full)");
  cb_cmd->add_option("--subspace-out", cbo.subspace_out);

  EncodeOptions enc;
  CLI::App* enc_cmd = app.add_subcommand("encode", "encode sets into explicit codes");
  enc_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  enc_cmd->add_option("--in", enc.in)->required();
  enc_cmd->add_option("--codebook", enc.codebook)->required();
  enc_cmd->add_option("--encoder", enc.encoder, "vlad, le-vlad, nvlad, svlad, fvlad");
  enc_cmd->add_option("--map", enc.map, "Nystrom/Fourier map for nvlad/fvlad");
  enc_cmd->add_option("--subspace", enc.subspace, "subspace projector for svlad");
  enc_cmd->add_option("--r", enc.r, "expected map rank (checked)");
  enc_cmd->add_option("--norm", enc.norm, "comma list of intra,ssr,global");
  enc_cmd->add_option("--out", enc.out)->required();

  GramOptions gro;
  CLI::App* gram_cmd = app.add_subcommand("gram", "pairwise kVLAD inner products");
  gram_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  gram_cmd->add_option("--in", gro.in)->required();
  gram_cmd->add_option("--train", gro.train,
                       "column sets; produces a rectangular cross gram");
  gram_cmd->add_option("--codebook", gro.codebook)->required();
  gram_cmd->add_flag("--normalized,!--no-normalized", gro.normalized,
                     "per-block cosine normalization (default on)");
  gram_cmd->add_option("--out", gro.out)->required();

  ClassifyOptions clo;
  CLI::App* cls_cmd = app.add_subcommand("classify", "train a classifier");
  cls_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  cls_cmd->add_option("--codes", clo.codes);
  cls_cmd->add_option("--gram", clo.gram);
  cls_cmd->add_option("--labels", clo.labels, "dataset file supplying labels by id");
  cls_cmd->add_option("--lambda", clo.lambda);
  cls_cmd->add_option("--model-out", clo.model_out)->required();

  EvalOptions evo;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
  eval_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  eval_cmd->add_option("--model", evo.model)->required();
  eval_cmd->add_option("--codes", evo.codes);
  eval_cmd->add_option("--gram", evo.gram);
  eval_cmd->add_option("--labels", evo.labels);

  BenchOptions bno;
  CLI::App* bench_cmd = app.add_subcommand("bench", "timing harness");
  bench_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  bench_cmd->add_option("--dataset", bno.dataset);
  bench_cmd->add_option("--encoders", bno.encoders)->delimiter(',');
  bench_cmd->add_option("--codebook", bno.codebook);
  bench_cmd->add_option("--implicit-codebook", bno.implicit_codebook);
  bench_cmd->add_option("--nystrom", bno.nystrom);
  bench_cmd->add_option("--fourier", bno.fourier);
  bench_cmd->add_option("--subspace", bno.subspace);
  bench_cmd->add_option("--norm", bno.norm);
  bench_cmd->add_option("--warmup", bno.warmup);
  bench_cmd->add_option("--repetitions", bno.repetitions);

  ExportOptions exo;
  CLI::App* exp_cmd = app.add_subcommand("export", "export an artifact as CSV");
  exp_cmd->add_option("--config", cfg_sink, "flat key = value file; flags override it");
  exp_cmd->add_option("--in", exo.in)->required();
  exp_cmd->add_option("--csv", exo.csv)->required();

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 consumes reversed args
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    log::error(e.what());
    return 1;
  } catch (const DataError& e) {
    log::error(e.what());
    return 2;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (cb_cmd->parsed()) return run_codebook(cbo);
    if (enc_cmd->parsed()) return run_encode(enc);
    if (gram_cmd->parsed()) return run_gram(gro);
    if (cls_cmd->parsed()) return run_classify(clo);
    if (eval_cmd->parsed()) return run_eval(evo);
    if (bench_cmd->parsed()) return run_bench(bno);
    if (exp_cmd->parsed()) return run_export(exo);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    log::error(e.what());
    return 1;
  } catch (const NumericalError& e) {
    log::error(e.what());
    return 3;
  } catch (const DataError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 2;
  }
}
