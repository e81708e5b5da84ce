#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmcr/embed_store.hpp"
#include "cmcr/linalg.hpp"
#include "cmcr/rng.hpp"

namespace cmcr {

/// Frozen, normalized memory of unimodal embeddings (image or audio memory).
class MemoryBank {
 public:
  MemoryBank(EmbeddingMatrix matrix, std::string label);

  const EmbeddingMatrix& matrix() const noexcept { return matrix_; }
  const Matrix& values() const noexcept { return values_; }
  const std::string& label() const noexcept { return label_; }
  std::size_t rows() const noexcept { return matrix_.rows(); }
  std::size_t dim() const noexcept { return matrix_.dim(); }

 private:
  EmbeddingMatrix matrix_;
  Matrix values_;
  std::string label_;
};

/// How a query picks its cross-modal counterpart from a memory.
enum class ConsistencyMode {
  Softmax,  // temperature-weighted average over the whole memory
  Argmax,   // hard nearest memory row
  Random,   // uniformly drawn memory row
};

std::string_view to_string(ConsistencyMode mode) noexcept;
ConsistencyMode parse_consistency_mode(std::string_view name);

struct EnhancementConfig {
  double tau1 = 0.01;
  double sigma2 = 0.004;
  std::uint64_t seed = 0;
  ConsistencyMode mode = ConsistencyMode::Softmax;
  /// Memory rows scored at once; bounds peak memory of the precompute.
  std::size_t chunk_rows = 4096;
  /// 0 = full softmax. Otherwise only the top_k most similar rows take part;
  /// an approximation meant for very large memories.
  std::size_t top_k = 0;
  unsigned threads = 1;

  void validate() const;
};

struct AggregateResult {
  std::vector<double> row;
  std::vector<double> weights;
};

/// Softmax(sim(query, bank_k) / tau1)-weighted sum of memory rows.
/// The result is deliberately left unnormalized.
std::vector<double> aggregate(std::span<const float> query, const MemoryBank& bank, double tau1);

/// Same as `aggregate`, also returning the softmax weights.
AggregateResult aggregate_with_weights(std::span<const float> query, const MemoryBank& bank, double tau1);

/// Offline generation of semantically consistent embeddings: row i is the
/// counterpart of texts row i under `cfg.mode`. Output is flagged
/// normalized=false.
EmbeddingMatrix precompute_consistent(const EmbeddingMatrix& texts, const MemoryBank& bank,
                                      const EnhancementConfig& cfg);

/// x + noise, then (optionally) per-row L2 normalization.
Matrix perturb(const Matrix& batch, const Matrix& noise, bool renormalize = true);

/// Gaussian semantic completion: iid N(0, sigma2) per coordinate, then
/// re-normalization. Fresh noise on every call; advances `rng`.
Matrix add_noise(const Matrix& batch, double sigma2, Rng& rng, bool renormalize = true);

EmbeddingMatrix add_noise(const EmbeddingMatrix& batch, double sigma2, Rng& rng);

}  // namespace cmcr
