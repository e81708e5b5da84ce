#include "cmcr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cmcr/error.hpp"

namespace cmcr {

namespace {

constexpr Eigen::Index kQueryChunk = 256;

void check_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::DimMismatch, "dims " + std::to_string(a) + " and " + std::to_string(b));
  }
}

}  // namespace

std::size_t rank_of(std::span<const double> scores, std::size_t relevant) {
  const double s = scores[relevant];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < relevant)) {
      ++rank;
    }
  }
  return rank;
}

DirectionMetrics retrieval(const Matrix& queries, const Matrix& gallery, std::span<const std::size_t> gt) {
  check_same_dim(static_cast<std::size_t>(queries.cols()), static_cast<std::size_t>(gallery.cols()));
  if (gt.size() != static_cast<std::size_t>(queries.rows())) {
    throw Error(ErrorCode::GtOutOfRange, "ground truth has " + std::to_string(gt.size()) + " entries for " +
                                             std::to_string(queries.rows()) + " queries");
  }
  const auto n_gallery = static_cast<std::size_t>(gallery.rows());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= n_gallery) {
      throw Error(ErrorCode::GtOutOfRange, "query " + std::to_string(i) + " -> gallery " + std::to_string(gt[i]));
    }
  }
  DirectionMetrics out;
  out.queries = gt.size();
  out.gallery = n_gallery;
  if (gt.empty()) {
    return out;
  }
  double rr_sum = 0.0;
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  for (Eigen::Index start = 0; start < queries.rows(); start += kQueryChunk) {
    const Eigen::Index len = std::min(kQueryChunk, queries.rows() - start);
    const Matrix sims = queries.middleRows(start, len) * gallery.transpose();
    for (Eigen::Index r = 0; r < len; ++r) {
      const auto i = static_cast<std::size_t>(start + r);
      const std::size_t rank =
          rank_of(std::span<const double>(sims.row(r).data(), n_gallery), gt[i]);
      rr_sum += 1.0 / static_cast<double>(rank);
      hit1 += rank <= 1 ? 1 : 0;
      hit5 += rank <= 5 ? 1 : 0;
    }
  }
  const auto n = static_cast<double>(gt.size());
  out.map = 100.0 * rr_sum / n;
  out.r1 = 100.0 * static_cast<double>(hit1) / n;
  out.r5 = 100.0 * static_cast<double>(hit5) / n;
  return out;
}

DirectionMetrics retrieval(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                           std::span<const std::size_t> gt) {
  require_normalized(queries, "retrieval queries");
  require_normalized(gallery, "retrieval gallery");
  return retrieval(queries.to_matrix(), gallery.to_matrix(), gt);
}

RetrievalReport bidirectional_retrieval(const Matrix& audio, const Matrix& image) {
  if (audio.rows() != image.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "audio and image sets differ in size");
  }
  std::vector<std::size_t> identity(static_cast<std::size_t>(audio.rows()));
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  return {retrieval(audio, image, identity), retrieval(image, audio, identity)};
}

double TopKReport::at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) {
      return accuracy[i];
    }
  }
  throw Error(ErrorCode::ConfigInvalid, "top-" + std::to_string(k) + " was not computed");
}

TopKReport zero_shot_classify(const EmbeddingMatrix& samples, const EmbeddingMatrix& class_protos,
                              std::span<const std::size_t> labels, std::span<const std::size_t> ks) {
  require_normalized(samples, "samples");
  require_normalized(class_protos, "class prototypes");
  check_same_dim(samples.dim(), class_protos.dim());
  if (labels.size() != samples.rows()) {
    throw Error(ErrorCode::LabelOutOfRange, "need one label per sample");
  }
  for (const std::size_t l : labels) {
    if (l >= class_protos.rows()) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(l) + " >= " +
                                                  std::to_string(class_protos.rows()) + " classes");
    }
  }
  static constexpr std::size_t kDefaultKs[] = {1, 3, 5};
  TopKReport report;
  if (ks.empty()) {
    report.ks.assign(std::begin(kDefaultKs), std::end(kDefaultKs));
  } else {
    report.ks.assign(ks.begin(), ks.end());
  }
  std::vector<std::size_t> hits(report.ks.size(), 0);
  if (samples.rows() > 0) {
    const Matrix sims = samples.to_matrix() * class_protos.to_matrix().transpose();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t rank = rank_of(
          std::span<const double>(sims.row(static_cast<Eigen::Index>(i)).data(), class_protos.rows()), labels[i]);
      for (std::size_t k = 0; k < report.ks.size(); ++k) {
        hits[k] += rank <= report.ks[k] ? 1 : 0;
      }
    }
  }
  for (const std::size_t h : hits) {
    report.accuracy.push_back(samples.rows() == 0 ? 0.0
                                                  : 100.0 * static_cast<double>(h) / static_cast<double>(samples.rows()));
  }
  return report;
}

double f1_at(std::span<const DetectionRecord> records, double gamma, double delta) {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (const auto& r : records) {
    if (r.has_gt) {
      if (r.confidence > delta) {
        (r.iou > gamma ? tp : fp) += 1;
      } else {
        fn += 1;
      }
    } else if (r.confidence > delta) {
      fp += 1;
    }
  }
  if (tp == 0) {
    return 0.0;
  }
  // harmonic mean of precision and recall, one rounding
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

CounterfactualResult counterfactual_metrics(std::span<const DetectionRecord> records,
                                            const CounterfactualConfig& cfg) {
  if (records.empty()) {
    throw Error(ErrorCode::EmptyInput, "counterfactual metrics need at least one record");
  }
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0)) {
    throw Error(ErrorCode::ConfigInvalid, "gamma must lie in (0, 1)");
  }
  for (const auto& r : records) {
    if (!std::isfinite(r.confidence)) {
      throw Error(ErrorCode::NonFiniteValue, "record confidence is not finite");
    }
  }

  std::vector<double> conf;
  conf.reserve(records.size());
  for (const auto& r : records) {
    conf.push_back(r.confidence);
  }
  std::sort(conf.begin(), conf.end());
  conf.erase(std::unique(conf.begin(), conf.end()), conf.end());

  CounterfactualResult out;
  // F1 is constant between consecutive confidences, so these thresholds
  // cover every attainable value.
  const double below_min = std::nextafter(conf.front(), -std::numeric_limits<double>::infinity());
  out.best_delta = below_min;
  out.max_f1 = f1_at(records, cfg.gamma, below_min);
  for (const double delta : conf) {
    const double f1 = f1_at(records, cfg.gamma, delta);
    if (f1 > out.max_f1) {
      out.max_f1 = f1;
      out.best_delta = delta;
    }
  }

  // All-points AP over the confidence-ranked list; equal confidences enter together.
  std::size_t positives = 0;
  for (const auto& r : records) {
    positives += (r.has_gt && r.iou > cfg.gamma) ? 1 : 0;
  }
  if (positives == 0) {
    out.ap = 0.0;
    return out;
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].confidence > records[b].confidence; });
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double c = records[order[k]].confidence;
    while (k < order.size() && records[order[k]].confidence == c) {
      const auto& r = records[order[k]];
      tp += (r.has_gt && r.iou > cfg.gamma) ? 1 : 0;
      ++seen;
      ++k;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }
  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    out.ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return out;
}

Candidate pick_best_candidate(std::span<const float> audio, const EmbeddingMatrix& candidates) {
  if (candidates.rows() == 0) {
    throw Error(ErrorCode::EmptyCandidates, "no candidates to pick from");
  }
  require_normalized(candidates, "candidates");
  check_same_dim(audio.size(), candidates.dim());
  Candidate best{0, -std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < candidates.rows(); ++k) {
    const auto row = candidates.row(k);
    double s = 0.0;
    for (std::size_t j = 0; j < audio.size(); ++j) {
      s += static_cast<double>(audio[j]) * static_cast<double>(row[j]);
    }
    if (s > best.confidence) {
      best = {k, s};
    }
  }
  return best;
}

double modality_gap(const Matrix& x, const Matrix& y) {
  check_same_dim(static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(y.cols()));
  if (x.rows() == 0 || y.rows() == 0) {
    throw Error(ErrorCode::EmptyInput, "modality gap needs non-empty sets");
  }
  return (x.colwise().mean() - y.colwise().mean()).norm();
}

double modality_gap(const EmbeddingMatrix& x, const EmbeddingMatrix& y) {
  return modality_gap(x.to_matrix(), y.to_matrix());
}

}  // namespace cmcr
