#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/encoders.hpp"
#include "kvlad/eval.hpp"
#include "kvlad/geometry.hpp"

// Binary artifact formats. All little-endian with IEEE-754 double payloads
// and matrix values row-major; every file starts with a 4-byte magic and a
// u16 version. Round-trips are bitwise lossless. Writers go through a
// temp-file-then-rename step so a failed command never leaves a partial
// artifact behind.
//
//   KVLD  dataset          KVLC  codebook (explicit or implicit)
//   KVLE  encoded codes    KVLG  square Gram (upper triangle stored)
//   KVLX  cross Gram       KVLN  Nystrom map
//   KVLF  Fourier map      KVLS  subspace projector
//   KVLM  trained model

namespace kvlad {

// --- datasets ---------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, const Geometry& geometry,
                   std::span<const DescriptorSet> sets);

struct LoadedDataset {
  Geometry geometry;
  std::vector<DescriptorSet> sets;
};

LoadedDataset read_dataset(const std::filesystem::path& path);

// --- codebooks --------------------------------------------------------------

void write_codebook(const std::filesystem::path& path, const ExplicitCodebook& cb);
void write_codebook(const std::filesystem::path& path, const ImplicitCodebook& cb);

using AnyCodebook = std::variant<ExplicitCodebook, std::shared_ptr<const ImplicitCodebook>>;
AnyCodebook read_codebook(const std::filesystem::path& path);

// --- encoded codes ----------------------------------------------------------

// All codes in one file share the encoder tag, normalization flags and
// block structure; values is one row per set.
struct CodeTable {
  EncoderTag encoder = EncoderTag::Vlad;
  std::uint8_t norm_flags = 0;
  std::vector<std::uint32_t> block_lengths;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> labels;
  Eigen::MatrixXd values;

  static CodeTable from_codes(std::span<const VladCode> codes,
                              std::span<const std::uint32_t> ids,
                              std::span<const std::uint32_t> labels);
  std::vector<VladCode> to_codes() const;
};

void write_codes(const std::filesystem::path& path, const CodeTable& table);
CodeTable read_codes(const std::filesystem::path& path);

// --- Grams ------------------------------------------------------------------

void write_gram(const std::filesystem::path& path, const GramMatrix& gram);
GramMatrix read_gram(const std::filesystem::path& path);

void write_cross_gram(const std::filesystem::path& path, const CrossGram& cross);
CrossGram read_cross_gram(const std::filesystem::path& path);

// --- maps and projectors ------------------------------------------------------

void write_nystrom(const std::filesystem::path& path, const NystromMap& map);
NystromMap read_nystrom(const std::filesystem::path& path);

void write_fourier(const std::filesystem::path& path, const FourierMap& map);
FourierMap read_fourier(const std::filesystem::path& path);

void write_subspace(const std::filesystem::path& path, const SubspaceProjector& proj);

// The file stores the fingerprint of the codebook the projector was fitted
// on; reading requires that codebook and rejects any other.
SubspaceProjector read_subspace(const std::filesystem::path& path,
                                std::shared_ptr<const ImplicitCodebook> codebook);

// --- models -----------------------------------------------------------------

using AnyModel = std::variant<RidgeModel, KernelRidgeModel>;
void write_model(const std::filesystem::path& path, const AnyModel& model);
AnyModel read_model(const std::filesystem::path& path);

// --- CSV export ---------------------------------------------------------------

// Headerless, 17-significant-digit decimal. Grams export the full mirrored
// matrix; codes export one row per set: id, label, values.
void write_gram_csv(const std::filesystem::path& path, const GramMatrix& gram);
void write_cross_gram_csv(const std::filesystem::path& path, const CrossGram& cross);
void write_codes_csv(const std::filesystem::path& path, const CodeTable& table);

}  // namespace kvlad
