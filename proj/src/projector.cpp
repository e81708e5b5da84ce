#include "cmcr/projector.hpp"

#include <cmath>

#include "cmcr/error.hpp"
#include "cmcr/rng.hpp"

namespace cmcr {

namespace {

constexpr double kNormFloor = 1e-12;

template <typename T>
std::span<double> span_of(T& t) {
  return std::span<double>(t.data(), static_cast<std::size_t>(t.size()));
}

template <typename T>
std::span<const double> span_of(const T& t) {
  return std::span<const double>(t.data(), static_cast<std::size_t>(t.size()));
}

void round_tensor(auto& t) {
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    t.data()[k] = static_cast<double>(static_cast<float>(t.data()[k]));
  }
}

LinearBlock init_block(std::size_t in, std::size_t out, Rng& rng) {
  LinearBlock b;
  const auto rows = static_cast<Eigen::Index>(out);
  const auto cols = static_cast<Eigen::Index>(in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  b.weight.resize(rows, cols);
  for (Eigen::Index k = 0; k < b.weight.size(); ++k) {
    b.weight.data()[k] = rng.uniform(-bound, bound);
  }
  b.bias = Vector::Zero(rows);
  b.bn.gamma = Vector::Ones(rows);
  b.bn.beta = Vector::Zero(rows);
  b.bn.running_mean = Vector::Zero(rows);
  b.bn.running_var = Vector::Ones(rows);
  return b;
}

BlockCache block_forward(LinearBlock& block, const Matrix& x, Mode mode, bool relu) {
  BlockCache c;
  c.relu = relu;
  Matrix h = x * block.weight.transpose();
  h.rowwise() += block.bias.transpose();
  const auto n = static_cast<double>(h.rows());

  RowVector mean;
  RowVector var;
  if (mode == Mode::Train) {
    mean = h.colwise().mean();
    var = (h.rowwise() - mean).array().square().colwise().sum() / n;
    block.bn.running_mean = (1.0 - kBatchNormMomentum) * block.bn.running_mean + kBatchNormMomentum * mean.transpose();
    // Running variance tracks the unbiased estimate.
    block.bn.running_var = (1.0 - kBatchNormMomentum) * block.bn.running_var +
                           kBatchNormMomentum * (n / (n - 1.0)) * var.transpose();
  } else {
    mean = block.bn.running_mean.transpose();
    var = block.bn.running_var.transpose();
  }
  c.inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
  c.xhat = ((h.rowwise() - mean).array().rowwise() * c.inv_std.array()).matrix();
  c.activation = (c.xhat.array().rowwise() * block.bn.gamma.transpose().array()).matrix();
  c.activation.rowwise() += block.bn.beta.transpose();
  if (relu) {
    c.activation = c.activation.cwiseMax(0.0);
  }
  if (mode == Mode::Train) {
    c.input = x;
  }
  return c;
}

void check_input(const ProjectorParams& p, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != p.dims.in) {
    throw Error(ErrorCode::DimMismatch, "projector expects dim " + std::to_string(p.dims.in) + ", got " +
                                            std::to_string(batch.cols()));
  }
}

Matrix normalize_rows(const Matrix& u, Vector& norms) {
  norms = u.rowwise().norm();
  Matrix y = u;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    y.row(i) /= std::max(norms[i], kNormFloor);
  }
  return y;
}

}  // namespace

std::size_t ProjectorParams::trainable_count() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks) {
    n += static_cast<std::size_t>(b.weight.size() + b.bias.size() + b.bn.gamma.size() + b.bn.beta.size());
  }
  return n;
}

std::size_t ProjectorParams::buffer_count() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks) {
    n += static_cast<std::size_t>(b.bn.running_mean.size() + b.bn.running_var.size());
  }
  return n;
}

void ProjectorParams::round_to_storage() {
  for (auto& b : blocks) {
    round_tensor(b.weight);
    round_tensor(b.bias);
    round_tensor(b.bn.gamma);
    round_tensor(b.bn.beta);
    round_tensor(b.bn.running_mean);
    round_tensor(b.bn.running_var);
  }
}

bool operator==(const ProjectorParams& a, const ProjectorParams& b) {
  if (!(a.dims == b.dims) || a.final_relu != b.final_relu) {
    return false;
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& x = a.blocks[k];
    const auto& y = b.blocks[k];
    if (x.weight != y.weight || x.bias != y.bias || x.bn.gamma != y.bn.gamma || x.bn.beta != y.bn.beta ||
        x.bn.running_mean != y.bn.running_mean || x.bn.running_var != y.bn.running_var) {
      return false;
    }
  }
  return true;
}

ProjectorGrads& ProjectorGrads::operator+=(const ProjectorGrads& other) {
  for (std::size_t k = 0; k < 2; ++k) {
    blocks[k].weight += other.blocks[k].weight;
    blocks[k].bias += other.blocks[k].bias;
    blocks[k].gamma += other.blocks[k].gamma;
    blocks[k].beta += other.blocks[k].beta;
  }
  return *this;
}

ProjectorGrads& ProjectorGrads::operator*=(double s) {
  for (auto& b : blocks) {
    b.weight *= s;
    b.bias *= s;
    b.gamma *= s;
    b.beta *= s;
  }
  return *this;
}

ProjectorParams init_projector(const ProjectorDims& dims, std::uint64_t seed, bool final_relu) {
  if (dims.in == 0 || dims.hidden == 0 || dims.out == 0) {
    throw Error(ErrorCode::ConfigInvalid, "projector dims must be positive");
  }
  Rng rng(seed);
  ProjectorParams p;
  p.dims = dims;
  p.final_relu = final_relu;
  p.blocks[0] = init_block(dims.in, dims.hidden, rng);
  p.blocks[1] = init_block(dims.hidden, dims.out, rng);
  return p;
}

ForwardResult forward(ProjectorParams& p, const Matrix& batch, Mode mode) {
  check_input(p, batch);
  if (mode == Mode::Train && batch.rows() < 2) {
    throw Error(ErrorCode::BatchTooSmall, "train-mode batch norm needs >= 2 rows, got " +
                                              std::to_string(batch.rows()));
  }
  if (batch.rows() == 0) {
    ForwardResult r;
    r.output = Matrix(0, static_cast<Eigen::Index>(p.dims.out));
    r.cache.mode = mode;
    return r;
  }
  ForwardResult r;
  r.cache.mode = mode;
  r.cache.blocks[0] = block_forward(p.blocks[0], batch, mode, true);
  r.cache.blocks[1] = block_forward(p.blocks[1], r.cache.blocks[0].activation, mode, p.final_relu);
  r.output = normalize_rows(r.cache.blocks[1].activation, r.cache.norms);
  r.cache.output = r.output;
  return r;
}

Matrix forward_eval(const ProjectorParams& p, const Matrix& batch) {
  ProjectorParams scratch = p;
  return forward(scratch, batch, Mode::Eval).output;
}

ProjectorGrads zero_grads(const ProjectorParams& p) {
  ProjectorGrads g;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& b = p.blocks[k];
    g.blocks[k].weight = Matrix::Zero(b.weight.rows(), b.weight.cols());
    g.blocks[k].bias = Vector::Zero(b.bias.size());
    g.blocks[k].gamma = Vector::Zero(b.bn.gamma.size());
    g.blocks[k].beta = Vector::Zero(b.bn.beta.size());
  }
  return g;
}

ProjectorGrads backward(const ProjectorParams& p, const ForwardCache& cache, const Matrix& grad_out) {
  if (cache.mode != Mode::Train) {
    throw Error(ErrorCode::CacheMismatch, "backward needs a train-mode forward cache");
  }
  if (grad_out.rows() != cache.output.rows() || grad_out.cols() != cache.output.cols() ||
      static_cast<std::size_t>(grad_out.cols()) != p.dims.out) {
    throw Error(ErrorCode::CacheMismatch, "grad_out shape does not match the cached forward");
  }
  ProjectorGrads g;
  const Matrix& y = cache.output;

  // y = u / max(|u|, floor)
  Matrix grad = grad_out;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double norm = cache.norms[i];
    if (norm > kNormFloor) {
      grad.row(i) = (grad_out.row(i) - y.row(i) * y.row(i).dot(grad_out.row(i))) / norm;
    } else {
      grad.row(i) = grad_out.row(i) / kNormFloor;
    }
  }

  for (int k = 1; k >= 0; --k) {
    const auto& block = p.blocks[static_cast<std::size_t>(k)];
    const auto& c = cache.blocks[static_cast<std::size_t>(k)];
    auto& gb = g.blocks[static_cast<std::size_t>(k)];
    const auto n = static_cast<double>(c.xhat.rows());

    Matrix dz = grad;
    if (c.relu) {
      dz = (c.activation.array() > 0.0).select(grad, 0.0);
    }
    gb.gamma = (dz.array() * c.xhat.array()).colwise().sum().transpose();
    gb.beta = dz.colwise().sum().transpose();

    const Matrix dxhat = (dz.array().rowwise() * block.bn.gamma.transpose().array()).matrix();
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
    Matrix dh = n * dxhat;
    dh.rowwise() -= sum_dxhat;
    dh -= (c.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    dh = (dh.array().rowwise() * (c.inv_std.array() / n)).matrix();

    gb.weight = dh.transpose() * c.input;
    gb.bias = dh.colwise().sum().transpose();
    if (k > 0) {
      grad = dh * block.weight;
    }
  }
  return g;
}

std::vector<ParamSlot> param_slots(ProjectorParams& p, const ProjectorGrads& g) {
  std::vector<ParamSlot> slots;
  for (std::size_t k = 0; k < 2; ++k) {
    auto& b = p.blocks[k];
    const auto& gb = g.blocks[k];
    const std::string prefix = "block" + std::to_string(k + 1) + ".";
    slots.push_back({prefix + "weight", span_of(b.weight), span_of(gb.weight), true});
    slots.push_back({prefix + "bias", span_of(b.bias), span_of(gb.bias), true});
    slots.push_back({prefix + "bn.gamma", span_of(b.bn.gamma), span_of(gb.gamma), false});
    slots.push_back({prefix + "bn.beta", span_of(b.bn.beta), span_of(gb.beta), false});
  }
  return slots;
}

std::vector<std::pair<std::string, std::span<double>>> checkpoint_tensors(ProjectorParams& p) {
  std::vector<std::pair<std::string, std::span<double>>> out;
  for (std::size_t k = 0; k < 2; ++k) {
    auto& b = p.blocks[k];
    const std::string prefix = "block" + std::to_string(k + 1) + ".";
    out.emplace_back(prefix + "weight", span_of(b.weight));
    out.emplace_back(prefix + "bias", span_of(b.bias));
    out.emplace_back(prefix + "bn.gamma", span_of(b.bn.gamma));
    out.emplace_back(prefix + "bn.beta", span_of(b.bn.beta));
    out.emplace_back(prefix + "bn.running_mean", span_of(b.bn.running_mean));
    out.emplace_back(prefix + "bn.running_var", span_of(b.bn.running_var));
  }
  return out;
}

}  // namespace cmcr
