#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cmcr/embed_store.hpp"
#include "cmcr/linalg.hpp"

namespace cmcr {

/// Metrics for one retrieval direction, as percentages.
struct DirectionMetrics {
  double map = 0.0;
  double r1 = 0.0;
  double r5 = 0.0;
  std::size_t queries = 0;
  std::size_t gallery = 0;
};

/// Audio-to-image and image-to-audio retrieval.
struct RetrievalReport {
  DirectionMetrics a2i;
  DirectionMetrics i2a;

  double mean_map() const noexcept { return 0.5 * (a2i.map + i2a.map); }
};

/// 1-based rank of `relevant` among `scores` under descending order; a
/// lower gallery index wins ties.
std::size_t rank_of(std::span<const double> scores, std::size_t relevant);

/// One-directional retrieval. gt[i] is the single relevant gallery row of
/// query i. AP per query is 1/rank, so mAP is the mean reciprocal rank.
DirectionMetrics retrieval(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                           std::span<const std::size_t> gt);

/// Same on 64-bit matrices (rows assumed unit-norm).
DirectionMetrics retrieval(const Matrix& queries, const Matrix& gallery, std::span<const std::size_t> gt);

/// Both directions with identity ground truth (row i of audio pairs with
/// row i of images).
RetrievalReport bidirectional_retrieval(const Matrix& audio, const Matrix& image);

struct TopKReport {
  std::vector<std::size_t> ks;
  std::vector<double> accuracy;  // percent, aligned with ks

  double at(std::size_t k) const;
};

/// Classes ranked by cosine per sample, lower class index first on ties.
TopKReport zero_shot_classify(const EmbeddingMatrix& samples, const EmbeddingMatrix& class_protos,
                              std::span<const std::size_t> labels,
                              std::span<const std::size_t> ks = std::span<const std::size_t>());

struct DetectionRecord {
  bool has_gt = false;
  double iou = 0.0;
  double confidence = 0.0;
};

struct CounterfactualConfig {
  double gamma = 0.5;
};

struct CounterfactualResult {
  double ap = 0.0;
  double max_f1 = 0.0;
  /// The threshold attaining max_f1 (c > delta counts as predicted).
  double best_delta = 0.0;
};

/// F1 at one (gamma, delta) straight from the TP/FP/FN set definitions.
double f1_at(std::span<const DetectionRecord> records, double gamma, double delta);

/// Max-F1 over every distinct confidence (and below the minimum), plus
/// all-points interpolated AP with positives has_gt && iou > gamma.
CounterfactualResult counterfactual_metrics(std::span<const DetectionRecord> records,
                                            const CounterfactualConfig& cfg = {});

struct Candidate {
  std::size_t index = 0;
  double confidence = 0.0;
};

/// Highest-cosine candidate, lowest index on ties.
Candidate pick_best_candidate(std::span<const float> audio, const EmbeddingMatrix& candidates);

/// |mean(x rows) - mean(y rows)|_2.
double modality_gap(const Matrix& x, const Matrix& y);
double modality_gap(const EmbeddingMatrix& x, const EmbeddingMatrix& y);

}  // namespace cmcr
