#pragma once

#include "cmcr/linalg.hpp"

namespace cmcr {

/// Loss scalars plus the per-term switches used by the ablation presets.
struct LossConfig {
  double tau2 = 0.01;
  double tau3 = 0.01;
  double lambda = 0.1;
  /// Squared-norm variant of the intra term; default is the plain L2 norm.
  bool intra_squared = false;
  bool use_ttc = true;
  bool use_avc = true;
  bool intra_space1 = true;
  bool intra_space2 = true;

  void validate() const;
};

/// Projected embeddings of one batch. Row i of every matrix derives from text i.
/// Also used to carry the gradients with respect to those matrices.
struct BatchEmbeddings {
  Matrix t_hat_I;  // f1(text, space 1)
  Matrix v_hat_I;  // f1(image, space 1)
  Matrix t_hat_A;  // f2(text, space 2)
  Matrix a_hat_A;  // f2(audio, space 2)

  static BatchEmbeddings zeros_like(const BatchEmbeddings& b);
  BatchEmbeddings& operator+=(const BatchEmbeddings& other);
  BatchEmbeddings& operator*=(double s);
};

struct PairLoss {
  double value = 0.0;
  Matrix grad_x;
  Matrix grad_z;
};

struct LossValue {
  double value = 0.0;
  BatchEmbeddings grads;
};

struct TotalLoss {
  double total = 0.0;
  double ttc = 0.0;
  double avc = 0.0;
  double intra = 0.0;
  double inter() const noexcept { return ttc + avc; }
  BatchEmbeddings grads;
};

/// Symmetric InfoNCE over cosine logits sim/tau, averaged over both
/// directions and the batch. Log-sum-exp uses max subtraction.
PairLoss info_nce(const Matrix& x, const Matrix& z, double tau);

/// Attraction-only part of `info_nce`: -(1/B) sum_i sim(x_i, z_i) / tau.
PairLoss info_nce_pull(const Matrix& x, const Matrix& z, double tau);

LossValue l_ttc(const BatchEmbeddings& b, double tau2);
LossValue l_avc(const BatchEmbeddings& b, double tau3);
LossValue l_inter(const BatchEmbeddings& b, const LossConfig& cfg);

/// (1/2)(1/B) sum_i (|t_I - v_I| + |t_A - a_A|). The gradient of the
/// unsquared norm at a coincident pair is taken as 0.
LossValue l_intra(const BatchEmbeddings& b, const LossConfig& cfg);

/// L = L_inter + lambda * L_intra.
TotalLoss total_loss(const BatchEmbeddings& b, const LossConfig& cfg);

}  // namespace cmcr
