#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmcr/error.hpp"
#include "cmcr/optim.hpp"
#include "test_util.hpp"

using namespace cmcr;

namespace {

struct Tensor {
  std::vector<double> value;
  std::vector<double> grad;
};

std::vector<ParamSlot> slots_of(std::vector<Tensor>& ts, bool decay = true) {
  std::vector<ParamSlot> s;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    s.push_back({"t" + std::to_string(k), ts[k].value, ts[k].grad, decay});
  }
  return s;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  AdamWConfig cfg;
  cfg.lr_init = 1e-3;
  cfg.total_steps = 100;
  CHECK(lr_at(0, cfg) == 1e-3);
  CHECK(lr_at(100, cfg) == doctest::Approx(0.0));
  CHECK(lr_at(100, cfg) >= 0.0);
  CHECK(lr_at(50, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
  try {
    lr_at(101, cfg);
    FAIL("expected StepOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StepOutOfRange);
  }
  double prev = lr_at(0, cfg);
  for (std::uint64_t s = 1; s <= 100; ++s) {
    CHECK(lr_at(s, cfg) <= prev);
    prev = lr_at(s, cfg);
  }
}

TEST_CASE("first adam step on a scalar") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.total_steps = 10;
  std::vector<Tensor> ts = {{{1.0}, {1.0}}};
  AdamW opt(cfg);
  opt.step(slots_of(ts), 1e-3);
  CHECK(ts[0].value[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(std::abs(ts[0].value[0] - 0.9990000000) < 1e-10);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("zero gradients") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<Tensor> ts = {{{0.5, -2.0}, {0.0, 0.0}}};
  AdamW opt(cfg);
  opt.step(slots_of(ts), 1e-2);
  CHECK(ts[0].value == std::vector<double>{0.5, -2.0});

  cfg.weight_decay = 0.01;
  AdamW decay(cfg);
  decay.step(slots_of(ts), 1e-2);
  CHECK(ts[0].value[0] == 0.5 - 1e-2 * 0.01 * 0.5);
  CHECK(ts[0].value[1] == -2.0 - 1e-2 * 0.01 * -2.0);

  std::vector<Tensor> bn = {{{0.5}, {0.0}}};
  AdamW skip(cfg);
  skip.step(slots_of(bn, false), 1e-2);
  CHECK(bn[0].value[0] == 0.5);
}

TEST_CASE("non-finite gradients abort before any update") {
  std::vector<Tensor> ts = {{{1.0, 2.0}, {0.1, 0.2}}, {{3.0}, {NAN}}};
  AdamW opt(AdamWConfig{});
  try {
    opt.step(slots_of(ts), 1e-3);
    FAIL("expected NonFiniteGradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
  CHECK(ts[0].value == std::vector<double>{1.0, 2.0});
  CHECK(opt.steps_taken() == 0);
}

TEST_CASE("deterministic trajectories, non-negative second moments, bounded updates") {
  AdamWConfig cfg;
  cfg.total_steps = 200;
  cfg.weight_decay = 0.0;
  auto run = [&](std::uint64_t seed, double* max_update) {
    std::vector<Tensor> ts = {{std::vector<double>(10, 0.3), std::vector<double>(10, 0.0)},
                              {std::vector<double>(3, -1.0), std::vector<double>(3, 0.0)}};
    AdamW opt(cfg);
    Rng rng(seed);
    for (int s = 0; s < 200; ++s) {
      for (auto& t : ts) {
        for (double& g : t.grad) {
          g = rng.normal() * (s % 7 == 0 ? 100.0 : 0.01);
        }
      }
      const std::vector<Tensor> before = ts;
      const double lr = lr_at(opt.steps_taken(), cfg);
      opt.step(slots_of(ts));
      for (const auto& v : opt.second_moments()) {
        for (double x : v) {
          REQUIRE(x >= 0.0);
        }
      }
      for (std::size_t k = 0; k < ts.size(); ++k) {
        for (std::size_t i = 0; i < ts[k].value.size(); ++i) {
          const double u = std::abs(ts[k].value[i] - before[k].value[i]);
          // |m_hat| / sqrt(v_hat) <= (1 - b1) / sqrt(1 - b2) for Adam.
          REQUIRE(u <= lr * (1.0 - cfg.beta1) / std::sqrt(1.0 - cfg.beta2) * 1.0001 + 1e-15);
          *max_update = std::max(*max_update, u);
        }
      }
    }
    return ts;
  };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    double mu = 0.0;
    const auto a = run(seed, &mu);
    const auto b = run(seed, &mu);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].value == b[k].value);
    }
    CHECK(mu > 0.0);
  }
}

TEST_CASE("optimizer rejects invalid settings and shape changes") {
  AdamWConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(AdamW{bad}, Error);
  bad = AdamWConfig{};
  bad.total_steps = 0;
  CHECK_THROWS_AS(AdamW{bad}, Error);
  std::vector<Tensor> ts = {{{1.0}, {0.1}}};
  AdamW opt(AdamWConfig{});
  opt.step(slots_of(ts), 1e-3);
  std::vector<Tensor> more = {{{1.0}, {0.1}}, {{1.0}, {0.1}}};
  CHECK_THROWS_AS(opt.step(slots_of(more), 1e-3), Error);
}
