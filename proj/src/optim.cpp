#include "imamoe/optim.hpp"

#include <cmath>
#include <numbers>

namespace imamoe {

void adamw_step(std::span<Parameter* const> params, OptimState& state, Scalar lr) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar bias1 = 1.0 - std::pow(state.beta1, t);
  const Scalar bias2 = 1.0 - std::pow(state.beta2, t);
  const Scalar decay = 1.0 - lr * state.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw DimensionError("adamw_step: moment shape " + shape_string(m) + " does not match " +
                           p.name + " " + shape_string(p.value));
    }
    if (p.grad.size() == 0) p.zero_grad();
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw DimensionError("adamw_step: gradient shape " + shape_string(p.grad) +
                           " does not match " + p.name + " " + shape_string(p.value));
    }
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m.array() / bias1;
    const auto v_hat = v.array() / bias2;
    p.value = (p.value.array() * decay - lr * m_hat / (v_hat.sqrt() + state.epsilon)).matrix();
  }
}

Scalar lr_at(std::int64_t step, const Schedule& schedule) {
  const std::int64_t warmup = schedule.warmup_steps();
  const std::int64_t total = schedule.total_steps();
  if (step <= 0) return 0.0;
  if (step < warmup) {
    return schedule.base_lr * static_cast<Scalar>(step) / static_cast<Scalar>(warmup);
  }
  if (total <= warmup) return schedule.base_lr;
  const Scalar progress = std::min<Scalar>(
      1.0, static_cast<Scalar>(step - warmup) / static_cast<Scalar>(total - warmup));
  return schedule.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace imamoe
