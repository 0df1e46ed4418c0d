#include "plkrf/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "plkrf/error.hpp"

namespace plkrf {

double OptimizerState::lr_at(std::int64_t s) const {
  if (warmup_steps > 0 && s < warmup_steps) {
    return base_lr * static_cast<double>(s) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= 0) return base_lr;
  if (s >= total_steps) return 0.0;
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double progress = span <= 0.0 ? 1.0 : static_cast<double>(s - warmup_steps) / span;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adamw_step: parameter count changed under the optimizer");
  }
  const double lr = state.lr_at(state.step);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != p.numel()) {
      throw DimensionError("adamw_step: moment buffer does not match parameter shape");
    }
    double* pv = p.data();
    const double* g = p.has_grad() ? p.grad() : nullptr;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const std::size_t n = p.numel();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g ? g[k] : 0.0;
      // Decoupled decay acts on the parameter, not the gradient.
      pv[k] -= lr * state.weight_decay * pv[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      pv[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p.quantize_storage();
  }
}

}  // namespace plkrf
