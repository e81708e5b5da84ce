#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmcr/linalg.hpp"

namespace cmcr {

struct ProjectorDims {
  std::size_t in = 512;
  std::size_t hidden = 1024;
  std::size_t out = 512;

  friend bool operator==(const ProjectorDims&, const ProjectorDims&) = default;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

/// Linear -> BatchNorm1d -> ReLU.
struct LinearBlock {
  Matrix weight;  // out x in
  Vector bias;
  BatchNorm bn;
};

/// Two Linear/BatchNorm/ReLU blocks followed by row-wise L2 normalization.
/// `final_relu = false` drops the ReLU of the second block (study variant).
struct ProjectorParams {
  ProjectorDims dims;
  std::array<LinearBlock, 2> blocks;
  bool final_relu = true;

  /// Weights, biases, gamma and beta.
  std::size_t trainable_count() const noexcept;
  /// Running mean and variance.
  std::size_t buffer_count() const noexcept;

  /// Rounds every tensor to 32-bit precision, the precision checkpoints use.
  void round_to_storage();

  friend bool operator==(const ProjectorParams& a, const ProjectorParams& b);
};

enum class Mode { Train, Eval };

struct BlockCache {
  Matrix input;
  Matrix xhat;
  RowVector inv_std;
  Matrix activation;  // after BN affine (+ ReLU when applied)
  bool relu = true;
};

struct ForwardCache {
  Mode mode = Mode::Eval;
  std::array<BlockCache, 2> blocks;
  Matrix output;  // unit rows
  Vector norms;   // pre-normalization row norms
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

struct BlockGrads {
  Matrix weight;
  Vector bias;
  Vector gamma;
  Vector beta;
};

struct ProjectorGrads {
  std::array<BlockGrads, 2> blocks;

  ProjectorGrads& operator+=(const ProjectorGrads& other);
  ProjectorGrads& operator*=(double s);
};

/// Uniform(+-1/sqrt(fan_in)) weights from the portable generator; zero
/// biases; identity batch-norm.
ProjectorParams init_projector(const ProjectorDims& dims, std::uint64_t seed, bool final_relu = true);

/// Train mode needs >= 2 rows, uses batch statistics and updates the running
/// statistics. Eval mode uses running statistics and never mutates `p`.
ForwardResult forward(ProjectorParams& p, const Matrix& batch, Mode mode);

/// Pure eval-mode forward.
Matrix forward_eval(const ProjectorParams& p, const Matrix& batch);

/// Exact parameter gradients for a train-mode forward, including the paths
/// through batch statistics and the output normalization.
ProjectorGrads backward(const ProjectorParams& p, const ForwardCache& cache, const Matrix& grad_out);

ProjectorGrads zero_grads(const ProjectorParams& p);

/// A named view of one parameter tensor and its gradient, for the optimizer.
struct ParamSlot {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
  bool decay = true;
};

/// Slots in declaration order; batch-norm gamma/beta are excluded from decay.
std::vector<ParamSlot> param_slots(ProjectorParams& p, const ProjectorGrads& g);

/// Every tensor (trainable and buffers) in checkpoint order.
std::vector<std::pair<std::string, std::span<double>>> checkpoint_tensors(ProjectorParams& p);

}  // namespace cmcr
