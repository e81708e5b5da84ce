#include "cmcr/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cmcr/error.hpp"

namespace cmcr {

void AdamWConfig::validate() const {
  if (!(lr_init >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0) ||
      !(weight_decay >= 0.0) || total_steps == 0) {
    throw Error(ErrorCode::ConfigInvalid, "invalid AdamW hyperparameters");
  }
}

double lr_at(std::uint64_t step, const AdamWConfig& cfg) {
  if (step > cfg.total_steps) {
    throw Error(ErrorCode::StepOutOfRange, "step " + std::to_string(step) + " > total_steps " +
                                               std::to_string(cfg.total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return std::max(0.0, cfg.lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(std::span<const ParamSlot> slots) { step(slots, lr_at(step_, cfg_)); }

void AdamW::step(std::span<const ParamSlot> slots, double lr) {
  if (m_.empty()) {
    for (const auto& s : slots) {
      m_.emplace_back(s.value.size(), 0.0);
      v_.emplace_back(s.value.size(), 0.0);
    }
  }
  if (slots.size() != m_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer tracks " + std::to_string(m_.size()) + " tensors, got " +
                                              std::to_string(slots.size()));
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (slots[k].value.size() != m_[k].size() || slots[k].grad.size() != slots[k].value.size()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + slots[k].name + " changed shape");
    }
    for (std::size_t i = 0; i < slots[k].grad.size(); ++i) {
      if (!std::isfinite(slots[k].grad[i])) {
        throw Error(ErrorCode::NonFiniteGradient, slots[k].name + "[" + std::to_string(i) + "]");
      }
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& s = slots[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const double wd = s.decay ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < s.value.size(); ++i) {
      const double g = s.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      s.value[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + wd * s.value[i]);
    }
  }
}

}  // namespace cmcr
