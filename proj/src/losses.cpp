#include "cmcr/losses.hpp"

#include <cmath>
#include <string>

#include "cmcr/error.hpp"

namespace cmcr {

namespace {

void check_pair(const Matrix& x, const Matrix& z) {
  if (x.rows() != z.rows() || x.cols() != z.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "pair shapes " + std::to_string(x.rows()) + "x" +
                                              std::to_string(x.cols()) + " vs " + std::to_string(z.rows()) +
                                              "x" + std::to_string(z.cols()));
  }
  if (x.rows() == 0) {
    throw Error(ErrorCode::EmptyInput, "contrastive loss needs at least one pair");
  }
}

void check_batch(const BatchEmbeddings& b) {
  check_pair(b.t_hat_I, b.v_hat_I);
  check_pair(b.t_hat_I, b.t_hat_A);
  check_pair(b.t_hat_I, b.a_hat_A);
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::ConfigInvalid, "temperature must be positive");
  }
}

// Cross-entropy of logits row `s` against target index `i`, and the softmax
// of that row written into `prob`.
double row_cross_entropy(const RowVector& s, Eigen::Index i, Eigen::Ref<RowVector> prob) {
  const RowVector d = s.array() - s[i];
  const double m = d.maxCoeff();
  if (m <= 0.0) {
    // Positive is the largest logit: log(1 + sum_{j != i} e^{d_j}) keeps
    // precision when the loss is tiny.
    double rest = 0.0;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      if (j != i) {
        rest += std::exp(d[j]);
      }
    }
    prob = d.array().exp() / (1.0 + rest);
    return std::log1p(rest);
  }
  const RowVector e = (d.array() - m).exp();
  const double sum = e.sum();
  prob = e / sum;
  return m + std::log(sum);
}

LossValue from_pair(const PairLoss& pl, const BatchEmbeddings& like, bool text_pair) {
  LossValue out{pl.value, BatchEmbeddings::zeros_like(like)};
  if (text_pair) {
    out.grads.t_hat_I = pl.grad_x;
    out.grads.t_hat_A = pl.grad_z;
  } else {
    out.grads.v_hat_I = pl.grad_x;
    out.grads.a_hat_A = pl.grad_z;
  }
  return out;
}

// Contribution of one intra pair (a, b) with weight `scale`.
double intra_pair(const Matrix& a, const Matrix& b, double scale, bool squared, Matrix& ga, Matrix& gb) {
  double value = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const RowVector diff = a.row(i) - b.row(i);
    const double dist = diff.norm();
    if (squared) {
      value += dist * dist;
      ga.row(i) += 2.0 * scale * diff;
      gb.row(i) -= 2.0 * scale * diff;
    } else {
      value += dist;
      if (dist > 0.0) {
        ga.row(i) += scale * diff / dist;
        gb.row(i) -= scale * diff / dist;
      }
    }
  }
  return value * scale;
}

}  // namespace

void LossConfig::validate() const {
  check_tau(tau2);
  check_tau(tau3);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::ConfigInvalid, "lambda must be non-negative");
  }
}

BatchEmbeddings BatchEmbeddings::zeros_like(const BatchEmbeddings& b) {
  return {Matrix::Zero(b.t_hat_I.rows(), b.t_hat_I.cols()), Matrix::Zero(b.v_hat_I.rows(), b.v_hat_I.cols()),
          Matrix::Zero(b.t_hat_A.rows(), b.t_hat_A.cols()), Matrix::Zero(b.a_hat_A.rows(), b.a_hat_A.cols())};
}

BatchEmbeddings& BatchEmbeddings::operator+=(const BatchEmbeddings& other) {
  t_hat_I += other.t_hat_I;
  v_hat_I += other.v_hat_I;
  t_hat_A += other.t_hat_A;
  a_hat_A += other.a_hat_A;
  return *this;
}

BatchEmbeddings& BatchEmbeddings::operator*=(double s) {
  t_hat_I *= s;
  v_hat_I *= s;
  t_hat_A *= s;
  a_hat_A *= s;
  return *this;
}

PairLoss info_nce(const Matrix& x, const Matrix& z, double tau) {
  check_pair(x, z);
  check_tau(tau);
  const Eigen::Index n = x.rows();
  const Matrix logits = (x * z.transpose()) / tau;
  const Matrix logits_t = logits.transpose();
  Matrix p_row(n, n);
  Matrix p_col(n, n);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sum += row_cross_entropy(logits.row(i), i, p_row.row(i));
    sum += row_cross_entropy(logits_t.row(i), i, p_col.row(i));
  }
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  Matrix d_logits = p_row + p_col.transpose();
  d_logits.diagonal().array() -= 2.0;
  d_logits *= inv / tau;
  return {sum * inv, d_logits * z, d_logits.transpose() * x};
}

PairLoss info_nce_pull(const Matrix& x, const Matrix& z, double tau) {
  check_pair(x, z);
  check_tau(tau);
  const double scale = 1.0 / (static_cast<double>(x.rows()) * tau);
  const double value = -(x.array() * z.array()).sum() * scale;
  return {value, -scale * z, -scale * x};
}

LossValue l_ttc(const BatchEmbeddings& b, double tau2) {
  check_batch(b);
  return from_pair(info_nce(b.t_hat_I, b.t_hat_A, tau2), b, true);
}

LossValue l_avc(const BatchEmbeddings& b, double tau3) {
  check_batch(b);
  return from_pair(info_nce(b.v_hat_I, b.a_hat_A, tau3), b, false);
}

LossValue l_inter(const BatchEmbeddings& b, const LossConfig& cfg) {
  check_batch(b);
  LossValue out{0.0, BatchEmbeddings::zeros_like(b)};
  if (cfg.use_ttc) {
    const LossValue ttc = l_ttc(b, cfg.tau2);
    out.value += ttc.value;
    out.grads += ttc.grads;
  }
  if (cfg.use_avc) {
    const LossValue avc = l_avc(b, cfg.tau3);
    out.value += avc.value;
    out.grads += avc.grads;
  }
  return out;
}

LossValue l_intra(const BatchEmbeddings& b, const LossConfig& cfg) {
  check_batch(b);
  LossValue out{0.0, BatchEmbeddings::zeros_like(b)};
  const double scale = 0.5 / static_cast<double>(b.t_hat_I.rows());
  if (cfg.intra_space1) {
    out.value += intra_pair(b.t_hat_I, b.v_hat_I, scale, cfg.intra_squared, out.grads.t_hat_I, out.grads.v_hat_I);
  }
  if (cfg.intra_space2) {
    out.value += intra_pair(b.t_hat_A, b.a_hat_A, scale, cfg.intra_squared, out.grads.t_hat_A, out.grads.a_hat_A);
  }
  return out;
}

TotalLoss total_loss(const BatchEmbeddings& b, const LossConfig& cfg) {
  cfg.validate();
  check_batch(b);
  TotalLoss out;
  out.grads = BatchEmbeddings::zeros_like(b);
  if (cfg.use_ttc) {
    const LossValue ttc = l_ttc(b, cfg.tau2);
    out.ttc = ttc.value;
    out.grads += ttc.grads;
  }
  if (cfg.use_avc) {
    const LossValue avc = l_avc(b, cfg.tau3);
    out.avc = avc.value;
    out.grads += avc.grads;
  }
  LossValue intra = l_intra(b, cfg);
  out.intra = intra.value;
  if (cfg.lambda != 0.0) {
    intra.grads *= cfg.lambda;
    out.grads += intra.grads;
  }
  out.total = out.ttc + out.avc + cfg.lambda * out.intra;
  return out;
}

}  // namespace cmcr
