#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "imamoe/tensor.hpp"

namespace imamoe {

/// AdamW moments and hyperparameters. Moments are allocated on the first
/// step and shape-match their parameters.
struct OptimState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
  Scalar weight_decay = 1e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
};

/// One decoupled-decay update:
///   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
/// A parameter with no gradient is treated as having a zero gradient.
void adamw_step(std::span<Parameter* const> params, OptimState& state, Scalar lr);

/// Linear warmup to base_lr, then cosine decay to zero at the final step.
struct Schedule {
  int warmup_epochs = 5;
  int total_epochs = 50;
  std::int64_t steps_per_epoch = 1;
  Scalar base_lr = 1e-4;

  std::int64_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
  std::int64_t total_steps() const { return total_epochs * steps_per_epoch; }
};

/// Learning rate for optimizer step `step` (1-based: the first update is
/// step 1). lr_at(warmup_steps) == base_lr and lr_at(total_steps) == 0.
Scalar lr_at(std::int64_t step, const Schedule& schedule);

}  // namespace imamoe
