#include "plkrf/grad_check.hpp"

#include <cmath>
#include <vector>

#include "plkrf/error.hpp"
#include "plkrf/tape.hpp"

namespace plkrf {

double grad_check(const ScalarFn& f, Tensor& x, double h_scale) {
  const bool was_requiring = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();

  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = f(x);
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("grad_check: f must return a scalar tensor");
  }
  if (!std::isfinite(loss.item())) {
    throw NumericError("grad_check: f(x) is not finite");
  }
  backward(loss, tape);

  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) {
    const double* g = x.grad();
    analytic.assign(g, g + x.numel());
  }

  double max_err = 0.0;
  double* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = px[i];
    const double h = h_scale * (1.0 + std::abs(saved));
    px[i] = saved + h;
    const double fp = f(x).item();
    px[i] = saved - h;
    const double fm = f(x).item();
    px[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: perturbed f(x) is not finite");
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }

  x.set_requires_grad(was_requiring);
  x.zero_grad();
  return max_err;
}

}  // namespace plkrf
