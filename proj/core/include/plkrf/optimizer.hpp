#pragma once

#include <cstdint>
#include <vector>

#include "plkrf/tensor.hpp"

namespace plkrf {

// AdamW with decoupled weight decay and a warm-up + cosine learning rate
// schedule. Moment buffers are created on first use and keyed by parameter
// order, which must stay stable across steps and checkpoints.
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double base_lr = 4e-4;
  double eps = 1e-8;
  std::int64_t warmup_steps = 2500;
  std::int64_t total_steps = 0;  // 0 disables the cosine phase (constant lr)
  std::int64_t step = 0;

  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  // Linear 0 -> base over warmup (lr(warmup) == base exactly), then cosine
  // decay to 0 at total_steps.
  double lr_at(std::int64_t s) const;
};

// One update over params using each tensor's accumulated gradient. Parameters
// without an allocated gradient are treated as zero-gradient (weight decay
// still applies). Increments state.step.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state);

}  // namespace plkrf
