#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cmcr/error.hpp"
#include "cmcr/semantic_enhancement.hpp"
#include "test_util.hpp"

using namespace cmcr;

namespace {

MemoryBank bank_of(const Matrix& m) { return MemoryBank(normalize(EmbeddingMatrix::from_matrix(m, false)), "mem"); }

Matrix rows2(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& row : r) {
    std::size_t j = 0;
    for (double v : row) {
      m(i, j++) = v;
    }
    ++i;
  }
  return m;
}

// Independent dense oracle: plain loops, no chunking, no shared helpers.
std::vector<double> dense_aggregate(const Matrix& bank, const std::vector<double>& q, double tau) {
  std::vector<double> logits(bank.rows());
  for (Eigen::Index k = 0; k < bank.rows(); ++k) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < bank.cols(); ++j) {
      s += bank(k, j) * q[j];
    }
    logits[k] = s / tau;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  std::vector<double> out(bank.cols(), 0.0);
  for (Eigen::Index k = 0; k < bank.rows(); ++k) {
    for (Eigen::Index j = 0; j < bank.cols(); ++j) {
      out[j] += logits[k] / z * bank(k, j);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("aggregate over a singleton bank returns the row") {
  const MemoryBank bank = bank_of(rows2({{0.6, 0.8}}));
  const std::vector<float> q = {1.0f, 0.0f};
  const auto out = aggregate(q, bank, 0.01);
  CHECK(out[0] == static_cast<double>(bank.matrix().at(0, 0)));
  CHECK(out[1] == static_cast<double>(bank.matrix().at(0, 1)));
}

TEST_CASE("aggregate two-row examples") {
  const MemoryBank bank = bank_of(rows2({{1, 0}, {0, 1}}));
  const std::vector<float> q = {1.0f, 0.0f};
  const auto r = aggregate_with_weights(q, bank, 1.0);
  CHECK(r.weights[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(r.weights[1] == doctest::Approx(0.26894).epsilon(1e-5));
  CHECK(r.row[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(r.row[1] == doctest::Approx(0.26894).epsilon(1e-5));
  const auto sat = aggregate(q, bank, 0.01);
  CHECK(std::abs(sat[0] - 1.0) < 1e-6);
  CHECK(std::abs(sat[1]) < 1e-6);
}

TEST_CASE("aggregate rejects mismatched dims") {
  const MemoryBank bank = bank_of(rows2({{1, 0}, {0, 1}}));
  const std::vector<float> q = {1.0f, 0.0f, 0.0f};
  CHECK_THROWS_AS(aggregate(q, bank, 0.1), Error);
  EnhancementConfig cfg;
  CHECK_THROWS_AS(precompute_consistent(testutil::random_embeddings(2, 3, 1), bank, cfg), Error);
}

TEST_CASE("aggregate weights sum to one, output inside the unit ball, permutation invariant") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Matrix b = testutil::random_unit(40, 8, seed);
    const MemoryBank bank = bank_of(b);
    Matrix rev = b.colwise().reverse();
    const MemoryBank reversed = bank_of(rev);
    const auto q = testutil::random_embeddings(1, 8, seed + 100);
    for (double tau : {0.01, 0.1, 1.0}) {
      const auto r = aggregate_with_weights(q.row(0), bank, tau);
      const double s = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
      CHECK(std::abs(s - 1.0) < 1e-6);
      double n2 = 0.0;
      for (double v : r.row) {
        n2 += v * v;
      }
      CHECK(std::sqrt(n2) <= 1.0 + 1e-9);
      const auto p = aggregate(q.row(0), reversed, tau);
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(std::abs(p[j] - r.row[j]) < 1e-12);
      }
    }
  }
}

TEST_CASE("precompute matches a dense oracle and is chunk invariant") {
  const Matrix b = testutil::random_unit(3, 5, 7);
  const MemoryBank bank = bank_of(b);
  const EmbeddingMatrix texts = testutil::random_embeddings(2, 5, 8);
  EnhancementConfig cfg;
  cfg.tau1 = 0.1;
  const EmbeddingMatrix out = precompute_consistent(texts, bank, cfg);
  CHECK_FALSE(out.normalized());
  const Matrix bank_m = bank.values();
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> q(texts.row(i).begin(), texts.row(i).end());
    const auto want = dense_aggregate(bank_m, q, 0.1);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(std::abs(out.at(i, j) - want[j]) < 1e-6);
    }
  }

  const MemoryBank big = bank_of(testutil::random_unit(257, 16, 9));
  const EmbeddingMatrix qs = testutil::random_embeddings(31, 16, 10);
  for (double tau : {0.01, 0.05}) {
    cfg.tau1 = tau;
    cfg.chunk_rows = 1;
    const EmbeddingMatrix a = precompute_consistent(qs, big, cfg);
    cfg.chunk_rows = big.rows();
    const EmbeddingMatrix c = precompute_consistent(qs, big, cfg);
    cfg.chunk_rows = 50;
    cfg.threads = 3;
    const EmbeddingMatrix d = precompute_consistent(qs, big, cfg);
    cfg.threads = 1;
    for (std::size_t k = 0; k < a.data().size(); ++k) {
      REQUIRE(std::abs(a.data()[k] - c.data()[k]) < 1e-6);
      REQUIRE(std::abs(d.data()[k] - c.data()[k]) < 1e-6);
    }
  }
}

TEST_CASE("self retrieval limit") {
  const EmbeddingMatrix texts = testutil::random_embeddings(20, 32, 12);
  const MemoryBank bank(texts, "self");
  EnhancementConfig cfg;
  cfg.tau1 = 1e-4;
  const EmbeddingMatrix out = precompute_consistent(texts, bank, cfg);
  for (std::size_t k = 0; k < out.data().size(); ++k) {
    REQUIRE(std::abs(out.data()[k] - texts.data()[k]) < 1e-5);
  }
}

TEST_CASE("argmax and random consistency") {
  const Matrix b = testutil::random_unit(30, 6, 13);
  const MemoryBank bank = bank_of(b);
  const EmbeddingMatrix texts = testutil::random_embeddings(10, 6, 14);
  EnhancementConfig cfg;
  cfg.mode = ConsistencyMode::Argmax;
  const EmbeddingMatrix hard = precompute_consistent(texts, bank, cfg);
  const Matrix t = texts.to_matrix();
  const Matrix bm = bank.values();
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    Eigen::Index best = 0;
    (bm * t.row(i).transpose()).maxCoeff(&best);
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(hard.at(i, j) == bank.matrix().at(best, j));
    }
  }
  cfg.mode = ConsistencyMode::Random;
  cfg.seed = 5;
  const EmbeddingMatrix r1 = precompute_consistent(texts, bank, cfg);
  const EmbeddingMatrix r2 = precompute_consistent(texts, bank, cfg);
  CHECK(r1 == r2);
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    bool found = false;
    for (std::size_t k = 0; k < bank.rows() && !found; ++k) {
      found = std::equal(r1.row(i).begin(), r1.row(i).end(), bank.matrix().row(k).begin());
    }
    CHECK(found);
  }
  CHECK(parse_consistency_mode("argmax") == ConsistencyMode::Argmax);
  CHECK_THROWS_AS(parse_consistency_mode("nearest"), Error);
}

TEST_CASE("top-k approximation approaches the full softmax") {
  const MemoryBank bank = bank_of(testutil::random_unit(200, 8, 15));
  const EmbeddingMatrix texts = testutil::random_embeddings(5, 8, 16);
  EnhancementConfig cfg;
  const EmbeddingMatrix full = precompute_consistent(texts, bank, cfg);
  cfg.top_k = 200;
  const EmbeddingMatrix all = precompute_consistent(texts, bank, cfg);
  for (std::size_t k = 0; k < full.data().size(); ++k) {
    CHECK(std::abs(full.data()[k] - all.data()[k]) < 1e-6);
  }
}

TEST_CASE("config validation") {
  EnhancementConfig cfg;
  cfg.tau1 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.tau1 = 0.01;
  cfg.sigma2 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(MemoryBank(EmbeddingMatrix(1, 2, {3, 4}), "raw"), Error);
}

TEST_CASE("perturb scalar example") {
  Matrix x(1, 2);
  x << 1.0, 0.0;
  Matrix n(1, 2);
  n << 0.0, 0.06;
  const Matrix y = perturb(x, n);
  CHECK(y(0, 0) == doctest::Approx(0.99820).epsilon(1e-5));
  CHECK(y(0, 1) == doctest::Approx(0.05989).epsilon(1e-4));
  Matrix z(1, 2);
  z << -1.0, -0.0;
  CHECK_THROWS_AS(perturb(x, z), Error);
  const Matrix raw = perturb(x, n, false);
  CHECK(raw(0, 1) == 0.06);
}

TEST_CASE("zero noise is the identity on unit rows") {
  const EmbeddingMatrix x = testutil::random_embeddings(16, 12, 17);
  Rng rng(1);
  const EmbeddingMatrix y = add_noise(x, 0.0, rng);
  CHECK(y == x);
  CHECK(rng.counter() == 0);
}

TEST_CASE("noisy rows are unit norm, fresh each call, deterministic per seed") {
  const Matrix x = testutil::random_unit(50, 20, 18);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (double s2 : {0.001, 0.004, 0.5, 4.0}) {
      Rng rng(seed);
      const Matrix a = add_noise(x, s2, rng);
      const Matrix b = add_noise(x, s2, rng);
      CHECK((a - b).norm() > 0.0);
      Rng again(seed);
      CHECK(add_noise(x, s2, again) == a);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        REQUIRE(std::abs(a.row(i).norm() - 1.0) < 1e-6);
      }
    }
  }
  // Unnormalized aggregates are accepted too.
  Rng rng(4);
  const Matrix half = 0.5 * x;
  const Matrix c = add_noise(half, 0.004, rng);
  CHECK(std::abs(c.row(0).norm() - 1.0) < 1e-6);
}

TEST_CASE("noise cosine statistics match an independent sampler") {
  // Reference mean cosine from std::mt19937_64, which shares no code with Rng.
  auto reference = [](std::size_t dim, double s2) {
    std::mt19937_64 gen(12345);
    std::normal_distribution<double> nd(0.0, std::sqrt(s2));
    const int n = 20000;
    double acc = 0.0;
    for (int t = 0; t < n; ++t) {
      double first = 1.0 + nd(gen);
      double sq = first * first;
      for (std::size_t j = 1; j < dim; ++j) {
        const double v = nd(gen);
        sq += v * v;
      }
      acc += first / std::sqrt(sq);
    }
    return acc / n;
  };
  for (const auto& [dim, s2] : {std::pair<std::size_t, double>{512, 0.004}, {64, 0.004}, {2, 0.004}}) {
    Matrix x = Matrix::Zero(1000, static_cast<Eigen::Index>(dim));
    x.col(0).setOnes();
    Rng rng(99);
    const Matrix y = add_noise(x, s2, rng);
    const double mean_cos = y.col(0).mean();
    CHECK(std::abs(mean_cos - reference(dim, s2)) < 0.005);
  }
  // Small per-coordinate variance keeps rows close to their origin.
  Matrix x = Matrix::Zero(1000, 512);
  x.col(0).setOnes();
  Rng rng(7);
  CHECK(add_noise(x, 0.004 / 512.0, rng).col(0).mean() >= 0.99);
}
