#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmcr/projector.hpp"

namespace cmcr {

struct AdamWConfig {
  double lr_init = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t total_steps = 1;

  void validate() const;
};

/// lr_init * (1 + cos(pi * step / total_steps)) / 2, clamped at 0.
double lr_at(std::uint64_t step, const AdamWConfig& cfg);

/// AdamW with decoupled weight decay; one instance per projector.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg);

  /// One update at the scheduled rate lr_at(steps_taken()).
  /// Throws NonFiniteGradient before touching any parameter.
  void step(std::span<const ParamSlot> slots);

  /// One update at an explicit learning rate.
  void step(std::span<const ParamSlot> slots, double lr);

  std::uint64_t steps_taken() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return cfg_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

 private:
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace cmcr
