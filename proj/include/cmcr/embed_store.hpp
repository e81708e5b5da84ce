#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmcr/linalg.hpp"

namespace cmcr {

/// Row-major matrix of 32-bit embeddings with per-row string IDs.
///
/// A matrix is immutable once built; share it freely across readers. Rows
/// whose L2 norm is within `kUnitTolerance` of one are treated as already
/// unit-norm by `normalize`, which is what makes normalization idempotent
/// bitwise.
class EmbeddingMatrix {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  EmbeddingMatrix() = default;

  /// Takes ownership of `data` (rows*dim floats). Empty `ids` synthesizes
  /// decimal indices. Throws InvalidMatrix / NonFiniteValue on bad input.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                  std::vector<std::string> ids = {}, bool normalized = false);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }
  float at(std::size_t i, std::size_t j) const noexcept { return data_[i * dim_ + j]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  /// Rows selected by index, in the given order; keeps the normalized flag.
  EmbeddingMatrix gather(std::span<const std::size_t> indices) const;

  /// 64-bit copy of the payload for the compute path.
  Matrix to_matrix() const;

  /// Rounds a 64-bit matrix to storage precision. IDs default to indices.
  static EmbeddingMatrix from_matrix(const Matrix& m, bool normalized,
                                     std::vector<std::string> ids = {});

  /// Zero-row matrix of the given width (the vacuous inference input).
  static EmbeddingMatrix empty_of_dim(std::size_t dim);

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  bool normalized_ = false;
};

/// Row i of `left` and `right` encode the same underlying item.
struct PairedCorpus {
  EmbeddingMatrix left;
  EmbeddingMatrix right;

  PairedCorpus(EmbeddingMatrix l, EmbeddingMatrix r);
  std::size_t rows() const noexcept { return left.rows(); }
};

/// Divides each row by its L2 norm (64-bit accumulation).
/// Throws ZeroRow with the offending row index.
EmbeddingMatrix normalize(const EmbeddingMatrix& m);

/// Throws NotNormalized unless `m.normalized()`.
void require_normalized(const EmbeddingMatrix& m, const char* what);

// CMCR-EMB v1 on-disk format.
inline constexpr char kEmbMagic[8] = {'C', 'M', 'C', 'R', 'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbHeaderBytes = 20;

/// Writes `path` and the `<path>.ids` sidecar.
void save(const EmbeddingMatrix& m, const std::filesystem::path& path);

/// Reads `path`; IDs come from the sidecar when present.
EmbeddingMatrix load(const std::filesystem::path& path);

/// Serialized CMCR-EMB bytes (header + payload, no IDs).
std::vector<std::byte> encode(const EmbeddingMatrix& m);
EmbeddingMatrix decode(std::span<const std::byte> bytes);

std::filesystem::path ids_path(const std::filesystem::path& path);

/// Parses whitespace-separated decimal rows (one row per line, blank lines
/// skipped). Used by `cmcr convert`.
EmbeddingMatrix parse_text_matrix(std::istream& in);

}  // namespace cmcr
