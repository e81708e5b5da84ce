#include "cmcr/semantic_enhancement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "cmcr/error.hpp"

namespace cmcr {

namespace {

void check_dim(std::size_t query_dim, const MemoryBank& bank) {
  if (query_dim != bank.dim()) {
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query_dim) + " vs memory dim " +
                                            std::to_string(bank.dim()));
  }
}

void check_tau(double tau1) {
  if (!(tau1 > 0.0) || !std::isfinite(tau1)) {
    throw Error(ErrorCode::ConfigInvalid, "tau1 must be positive");
  }
}

// Streaming softmax state for one query row.
struct OnlineSoftmax {
  double max = -std::numeric_limits<double>::infinity();
  double scale = 0.0;
  RowVector acc;
};

void softmax_row(std::span<const float> query, const MemoryBank& bank, const EnhancementConfig& cfg,
                 std::size_t text_index, std::span<float> out) {
  const Matrix& mem = bank.values();
  const auto dim = static_cast<Eigen::Index>(bank.dim());
  RowVector q(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    q[j] = query[static_cast<std::size_t>(j)];
  }

  RowVector result;
  if (cfg.mode == ConsistencyMode::Random) {
    Rng rng = Rng(cfg.seed).fork(text_index);
    result = mem.row(static_cast<Eigen::Index>(rng.below(bank.rows())));
  } else if (cfg.mode == ConsistencyMode::Argmax) {
    const Vector sims = mem * q.transpose();
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < sims.size(); ++k) {
      if (sims[k] > sims[best]) {
        best = k;
      }
    }
    result = mem.row(best);
  } else if (cfg.top_k > 0 && cfg.top_k < bank.rows()) {
    const Vector sims = mem * q.transpose();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(sims.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.top_k), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < cfg.top_k; ++r) {
      mx = std::max(mx, sims[order[r]] / cfg.tau1);
    }
    double total = 0.0;
    result = RowVector::Zero(dim);
    for (std::size_t r = 0; r < cfg.top_k; ++r) {
      const double w = std::exp(sims[order[r]] / cfg.tau1 - mx);
      total += w;
      result += w * mem.row(order[r]);
    }
    result /= total;
  } else {
    OnlineSoftmax state;
    state.acc = RowVector::Zero(dim);
    const auto n = static_cast<Eigen::Index>(bank.rows());
    const auto chunk = static_cast<Eigen::Index>(std::max<std::size_t>(cfg.chunk_rows, 1));
    for (Eigen::Index start = 0; start < n; start += chunk) {
      const Eigen::Index len = std::min(chunk, n - start);
      const auto block = mem.middleRows(start, len);
      const Vector logits = (block * q.transpose()) / cfg.tau1;
      const double new_max = std::max(state.max, logits.maxCoeff());
      const double rescale = std::exp(state.max - new_max);
      state.acc *= rescale;
      state.scale *= rescale;
      for (Eigen::Index k = 0; k < len; ++k) {
        const double w = std::exp(logits[k] - new_max);
        state.scale += w;
        state.acc += w * block.row(k);
      }
      state.max = new_max;
    }
    result = state.acc / state.scale;
  }
  for (Eigen::Index j = 0; j < dim; ++j) {
    out[static_cast<std::size_t>(j)] = static_cast<float>(result[j]);
  }
}

}  // namespace

MemoryBank::MemoryBank(EmbeddingMatrix matrix, std::string label)
    : matrix_(std::move(matrix)), label_(std::move(label)) {
  if (matrix_.rows() == 0) {
    throw Error(ErrorCode::EmptyInput, "memory bank '" + label_ + "' has no rows");
  }
  require_normalized(matrix_, "memory bank");
  values_ = matrix_.to_matrix();
}

std::string_view to_string(ConsistencyMode mode) noexcept {
  switch (mode) {
    case ConsistencyMode::Softmax: return "softmax";
    case ConsistencyMode::Argmax: return "argmax";
    case ConsistencyMode::Random: return "random";
  }
  return "softmax";
}

ConsistencyMode parse_consistency_mode(std::string_view name) {
  if (name == "softmax") return ConsistencyMode::Softmax;
  if (name == "argmax") return ConsistencyMode::Argmax;
  if (name == "random") return ConsistencyMode::Random;
  throw Error(ErrorCode::ConfigInvalid, "unknown consistency mode '" + std::string(name) + "'");
}

void EnhancementConfig::validate() const {
  check_tau(tau1);
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
    throw Error(ErrorCode::ConfigInvalid, "sigma2 must be non-negative");
  }
}

AggregateResult aggregate_with_weights(std::span<const float> query, const MemoryBank& bank, double tau1) {
  check_dim(query.size(), bank);
  check_tau(tau1);
  const Matrix& mem = bank.values();
  RowVector q(static_cast<Eigen::Index>(query.size()));
  for (std::size_t j = 0; j < query.size(); ++j) {
    q[static_cast<Eigen::Index>(j)] = query[j];
  }
  const Vector logits = (mem * q.transpose()) / tau1;
  const double mx = logits.maxCoeff();
  const Vector w = (logits.array() - mx).exp();
  const Vector weights = w / w.sum();
  const RowVector out = weights.transpose() * mem;
  return {std::vector<double>(out.data(), out.data() + out.size()),
          std::vector<double>(weights.data(), weights.data() + weights.size())};
}

std::vector<double> aggregate(std::span<const float> query, const MemoryBank& bank, double tau1) {
  return aggregate_with_weights(query, bank, tau1).row;
}

EmbeddingMatrix precompute_consistent(const EmbeddingMatrix& texts, const MemoryBank& bank,
                                      const EnhancementConfig& cfg) {
  cfg.validate();
  require_normalized(texts, "texts");
  check_dim(texts.dim(), bank);
  std::vector<float> out(texts.rows() * texts.dim());
  const std::size_t dim = texts.dim();

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      softmax_row(texts.row(i), bank, cfg, i, std::span<float>(out).subspan(i * dim, dim));
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, std::max<std::size_t>(texts.rows(), 1));
  if (threads == 1) {
    work(0, texts.rows());
  } else {
    // Each output row depends only on its own text row, so the split is deterministic.
    std::vector<std::jthread> pool;
    const std::size_t per = (texts.rows() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * per;
      const std::size_t end = std::min(texts.rows(), begin + per);
      if (begin < end) {
        pool.emplace_back(work, begin, end);
      }
    }
  }
  return EmbeddingMatrix(texts.rows(), dim, std::move(out), texts.ids(), false);
}

Matrix perturb(const Matrix& batch, const Matrix& noise, bool renormalize) {
  if (batch.rows() != noise.rows() || batch.cols() != noise.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "noise shape does not match batch");
  }
  Matrix out = batch + noise;
  if (!renormalize) {
    return out;
  }
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm == 0.0) {
      throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i) + " is zero after noise");
    }
    out.row(i) /= norm;
  }
  return out;
}

Matrix add_noise(const Matrix& batch, double sigma2, Rng& rng, bool renormalize) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
    throw Error(ErrorCode::ConfigInvalid, "sigma2 must be non-negative");
  }
  Matrix noise = Matrix::Zero(batch.rows(), batch.cols());
  if (sigma2 > 0.0) {
    const double sd = std::sqrt(sigma2);
    for (Eigen::Index k = 0; k < noise.size(); ++k) {
      noise.data()[k] = sd * rng.normal();
    }
  }
  return perturb(batch, noise, renormalize);
}

EmbeddingMatrix add_noise(const EmbeddingMatrix& batch, double sigma2, Rng& rng) {
  if (batch.empty()) {
    return EmbeddingMatrix::empty_of_dim(batch.dim());
  }
  return EmbeddingMatrix::from_matrix(add_noise(batch.to_matrix(), sigma2, rng, true), true, batch.ids());
}

}  // namespace cmcr
