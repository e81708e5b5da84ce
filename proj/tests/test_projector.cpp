#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "cmcr/checkpoint.hpp"
#include "cmcr/error.hpp"
#include "cmcr/hash.hpp"
#include "cmcr/projector.hpp"
#include "test_util.hpp"

using namespace cmcr;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_rows(const Matrix& m) {
  Mat r(m.rows(), Vec(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      r[i][j] = m(i, j);
    }
  }
  return r;
}

// Straight-line scalar re-implementation of one Linear/BN/ReLU block.
Mat scalar_block(const Mat& x, const LinearBlock& b, bool train, bool relu) {
  const std::size_t n = x.size();
  const std::size_t out = b.weight.rows();
  const std::size_t in = b.weight.cols();
  Mat h(n, Vec(out));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.bias[o];
      for (std::size_t k = 0; k < in; ++k) {
        s += b.weight(o, k) * x[i][k];
      }
      h[i][o] = s;
    }
  }
  for (std::size_t o = 0; o < out; ++o) {
    double mean = b.bn.running_mean[o];
    double var = b.bn.running_var[o];
    if (train) {
      mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mean += h[i][o];
      }
      mean /= n;
      var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        var += (h[i][o] - mean) * (h[i][o] - mean);
      }
      var /= n;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double y = (h[i][o] - mean) / std::sqrt(var + 1e-5) * b.bn.gamma[o] + b.bn.beta[o];
      if (relu && y < 0.0) {
        y = 0.0;
      }
      h[i][o] = y;
    }
  }
  return h;
}

Mat scalar_forward(const ProjectorParams& p, const Mat& x, bool train) {
  Mat y = scalar_block(scalar_block(x, p.blocks[0], train, true), p.blocks[1], train, p.final_relu);
  for (auto& row : y) {
    double s = 0.0;
    for (double v : row) {
      s += v * v;
    }
    s = std::sqrt(s);
    for (double& v : row) {
      v /= s;
    }
  }
  return y;
}

// Objective sum(G .* forward(x)) used by the gradient checks.
double objective(ProjectorParams p, const Matrix& x, const Matrix& g, Matrix* mask0 = nullptr,
                 Matrix* mask1 = nullptr) {
  const ForwardResult r = forward(p, x, Mode::Train);
  if (mask0 != nullptr) {
    *mask0 = (r.cache.blocks[0].activation.array() > 0.0).cast<double>();
    *mask1 = (r.cache.blocks[1].activation.array() > 0.0).cast<double>();
  }
  return (r.output.array() * g.array()).sum();
}

struct GradCheck {
  double worst = 0.0;
  int checked = 0;
  int skipped = 0;
};

GradCheck grad_check(const ProjectorDims& dims, std::uint64_t seed, bool final_relu) {
  ProjectorParams p = init_projector(dims, seed, final_relu);
  // Move batch norm off its identity so gamma and beta paths are exercised.
  Rng rng(seed + 1000);
  for (auto& b : p.blocks) {
    for (Eigen::Index k = 0; k < b.bn.gamma.size(); ++k) {
      b.bn.gamma[k] = rng.uniform(0.5, 1.5);
      b.bn.beta[k] = rng.uniform(-0.3, 0.3);
    }
    for (Eigen::Index k = 0; k < b.bias.size(); ++k) {
      b.bias[k] = rng.uniform(-0.1, 0.1);
    }
  }
  const Matrix x = testutil::random_unit(8, dims.in, seed + 1);
  const Matrix g = testutil::random_matrix(8, dims.out, seed + 2);

  ProjectorParams work = p;
  const ForwardResult r = forward(work, x, Mode::Train);
  const ProjectorGrads grads = backward(p, r.cache, g);

  GradCheck gc;
  const double h = 1e-4;
  auto check_tensor = [&](auto select_param, auto select_grad) {
    ProjectorParams probe = p;
    auto& tensor = select_param(probe);
    const auto& grad = select_grad(grads);
    for (Eigen::Index k = 0; k < tensor.size(); ++k) {
      const double orig = tensor.data()[k];
      Matrix m0p, m1p, m0m, m1m;
      tensor.data()[k] = orig + h;
      const double fp = objective(probe, x, g, &m0p, &m1p);
      tensor.data()[k] = orig - h;
      const double fm = objective(probe, x, g, &m0m, &m1m);
      tensor.data()[k] = orig;
      if (m0p != m0m || m1p != m1m) {
        ++gc.skipped;  // a ReLU kink lies inside the stencil
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = grad.data()[k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      gc.worst = std::max(gc.worst, std::abs(numeric - analytic) / denom);
      ++gc.checked;
    }
  };
  for (int b = 0; b < 2; ++b) {
    check_tensor([b](ProjectorParams& q) -> Matrix& { return q.blocks[b].weight; },
                 [b](const ProjectorGrads& q) -> const Matrix& { return q.blocks[b].weight; });
    check_tensor([b](ProjectorParams& q) -> Vector& { return q.blocks[b].bias; },
                 [b](const ProjectorGrads& q) -> const Vector& { return q.blocks[b].bias; });
    check_tensor([b](ProjectorParams& q) -> Vector& { return q.blocks[b].bn.gamma; },
                 [b](const ProjectorGrads& q) -> const Vector& { return q.blocks[b].gamma; });
    check_tensor([b](ProjectorParams& q) -> Vector& { return q.blocks[b].bn.beta; },
                 [b](const ProjectorGrads& q) -> const Vector& { return q.blocks[b].beta; });
  }
  return gc;
}

double max_abs(const ProjectorGrads& g) {
  double m = 0.0;
  for (const auto& b : g.blocks) {
    m = std::max({m, b.weight.cwiseAbs().maxCoeff(), b.bias.cwiseAbs().maxCoeff(), b.gamma.cwiseAbs().maxCoeff(),
                  b.beta.cwiseAbs().maxCoeff()});
  }
  return m;
}

}  // namespace

TEST_CASE("init is deterministic and respects the fan-in bound") {
  const ProjectorDims dims;
  const ProjectorParams a = init_projector(dims, 3);
  const ProjectorParams b = init_projector(dims, 3);
  CHECK(a == b);
  CHECK_FALSE(a == init_projector(dims, 4));
  CHECK(a.blocks[0].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(512.0));
  CHECK(a.blocks[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(1024.0));
  CHECK(a.blocks[0].weight.rows() == 1024);
  CHECK(a.blocks[0].weight.cols() == 512);
  CHECK(a.blocks[1].bias.isZero());
  CHECK(a.blocks[1].bn.running_var.isOnes());
}

TEST_CASE("parameter count of the default projector") {
  ProjectorParams p = init_projector({}, 1);
  // Counting oracle: walk every tensor the optimizer and checkpoint see.
  std::size_t trainable = 0;
  std::size_t weights_biases = 0;
  ProjectorGrads g = zero_grads(p);
  for (const auto& s : param_slots(p, g)) {
    trainable += s.value.size();
    if (s.name.find("weight") != std::string::npos || s.name.find("bias") != std::string::npos) {
      weights_biases += s.value.size();
    }
  }
  std::size_t all = 0;
  for (const auto& [name, t] : checkpoint_tensors(p)) {
    all += t.size();
  }
  CHECK(weights_biases == 512 * 1024 + 1024 + 1024 * 512 + 512);
  CHECK(weights_biases == 1050112);
  CHECK(trainable == weights_biases + 2 * (1024 + 512));
  CHECK(trainable == p.trainable_count());
  CHECK(p.trainable_count() == 1053184);
  CHECK(p.buffer_count() == 3072);
  CHECK(all == trainable + p.buffer_count());
}

TEST_CASE("param slots exclude batch-norm affine from decay") {
  ProjectorParams p = init_projector({6, 5, 4}, 1);
  ProjectorGrads g = zero_grads(p);
  for (const auto& s : param_slots(p, g)) {
    const bool bn = s.name.find("gamma") != std::string::npos || s.name.find("beta") != std::string::npos;
    CHECK(s.decay == !bn);
    CHECK(s.value.size() == s.grad.size());
  }
}

TEST_CASE("identity configuration passes non-negative rows through") {
  ProjectorParams p = init_projector({4, 4, 4}, 1);
  for (auto& b : p.blocks) {
    b.weight = Matrix::Identity(4, 4);
  }
  Matrix x(2, 4);
  x << 0.1, 0.2, 0.0, 0.7, 1.0, 0.0, 0.0, 0.0;
  const Matrix y = forward_eval(p, x);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const auto want = x.row(i) / x.row(i).norm();
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(y(i, j) == doctest::Approx(want(j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward agrees with a scalar-loop oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ProjectorParams p = init_projector({}, seed);
    const Matrix x = testutil::random_unit(4, 512, seed + 10);
    const Mat want_train = scalar_forward(p, to_rows(x), true);
    ProjectorParams work = p;
    const ForwardResult r = forward(work, x, Mode::Train);
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 512; ++j) {
        worst = std::max(worst, std::abs(r.output(i, j) - want_train[i][j]));
      }
    }
    CHECK(worst < 1e-5);

    // Running statistics after one step: momentum 0.1, unbiased variance.
    Matrix h = x * p.blocks[0].weight.transpose();
    const RowVector mean = h.colwise().mean();
    const RowVector var = (h.rowwise() - mean).array().square().colwise().sum() / 3.0;
    CHECK((work.blocks[0].bn.running_mean - 0.1 * mean.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((work.blocks[0].bn.running_var - (Vector::Constant(1024, 0.9) + 0.1 * var.transpose())).cwiseAbs().maxCoeff() <
          1e-12);

    const Mat want_eval = scalar_forward(work, to_rows(x), false);
    const Matrix e = forward_eval(work, x);
    worst = 0.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 512; ++j) {
        worst = std::max(worst, std::abs(e(i, j) - want_eval[i][j]));
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("eval forward is pure and outputs are unit norm") {
  ProjectorParams p = init_projector({16, 24, 8}, 5);
  ProjectorParams work = p;
  forward(work, testutil::random_unit(10, 16, 1), Mode::Train);
  const ProjectorParams before = work;
  const Matrix x = testutil::random_unit(7, 16, 2);
  const Matrix a = forward(work, x, Mode::Eval).output;
  const Matrix b = forward(work, x, Mode::Eval).output;
  CHECK(a == b);
  CHECK(work == before);
  CHECK(forward_eval(work, x) == a);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    CHECK(std::abs(a.row(i).norm() - 1.0) < 1e-6);
  }
  const Matrix t = forward(work, x, Mode::Train).output;
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    CHECK(std::abs(t.row(i).norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("degenerate and invalid batches") {
  ProjectorParams p = init_projector({8, 8, 8}, 1);
  Matrix same(4, 8);
  for (Eigen::Index i = 0; i < 4; ++i) {
    same.row(i) = testutil::random_unit(1, 8, 3).row(0);
  }
  const ForwardResult r = forward(p, same, Mode::Train);
  CHECK(r.output.allFinite());
  CHECK_THROWS_AS(forward(p, testutil::random_unit(1, 8, 1), Mode::Train), Error);
  try {
    forward(p, testutil::random_unit(3, 7, 1), Mode::Eval);
    FAIL("expected DimMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimMismatch);
  }
  CHECK(forward_eval(p, Matrix(0, 8)).rows() == 0);
}

TEST_CASE("backward linearity and cache checks") {
  ProjectorParams p = init_projector({16, 12, 10}, 2);
  const Matrix x = testutil::random_unit(8, 16, 4);
  ProjectorParams work = p;
  const ForwardResult r = forward(work, x, Mode::Train);
  const ProjectorGrads zero = backward(p, r.cache, Matrix::Zero(8, 10));
  CHECK(max_abs(zero) == 0.0);
  const Matrix g = testutil::random_matrix(8, 10, 5);
  ProjectorGrads one = backward(p, r.cache, g);
  const ProjectorGrads two = backward(p, r.cache, 2.0 * g);
  ProjectorGrads diff = two;
  one *= -2.0;
  diff += one;
  CHECK(max_abs(diff) < 1e-12);

  const ForwardResult ev = forward(work, x, Mode::Eval);
  try {
    backward(p, ev.cache, g);
    FAIL("expected CacheMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CacheMismatch);
  }
  CHECK_THROWS_AS(backward(p, r.cache, Matrix::Zero(7, 10)), Error);
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (bool final_relu : {true, false}) {
      const GradCheck gc = grad_check({16, 12, 10}, seed, final_relu);
      INFO("seed " << seed << " final_relu " << final_relu << " skipped " << gc.skipped);
      CHECK(gc.worst < 1e-4);
      CHECK(gc.checked > 9 * gc.skipped);
    }
  }
}

TEST_CASE("checkpoint round trip is bitwise after storage rounding") {
  testutil::TempDir dir;
  ProjectorParams p = init_projector({16, 12, 10}, 8);
  forward(p, testutil::random_unit(6, 16, 1), Mode::Train);
  p.round_to_storage();
  save_checkpoint(dir / "a.ckpt", p, 42, "abc123");
  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  CHECK(c.params == p);
  CHECK(c.step == 42);
  CHECK(c.config_hash == "abc123");
  save_checkpoint(dir / "b.ckpt", c.params, 42, "abc123");
  CHECK(file_fingerprint(dir / "a.ckpt") == file_fingerprint(dir / "b.ckpt"));

  ProjectorParams nf = init_projector({6, 5, 4}, 1, false);
  nf.round_to_storage();
  save_checkpoint(dir / "nf.ckpt", nf, 0, "");
  CHECK(load_checkpoint(dir / "nf.ckpt").params == nf);
}

TEST_CASE("corrupt checkpoints are rejected") {
  testutil::TempDir dir;
  ProjectorParams p = init_projector({6, 5, 4}, 1);
  save_checkpoint(dir / "a.ckpt", p, 1, "h");
  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::ofstream out(dir / "cut.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 3);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), Error);
  bytes[0] = 'X';
  {
    std::ofstream out(dir / "magic.ckpt", std::ios::binary);
    out << bytes;
  }
  try {
    load_checkpoint(dir / "magic.ckpt");
    FAIL("expected MagicMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MagicMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), Error);
}
