#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "sepipe/graph.hpp"

namespace sepipe {

// Max relative error between an analytic gradient and central finite
// differences of f around x. Meant to run in 64-bit.
template <typename T>
double grad_check(const std::function<double(const TensorT<T>&)>& f, const TensorT<T>& x,
                  const TensorT<T>& analytic, double h) {
  if (!analytic.same_shape(x))
    throw DimensionError("grad_check: gradient shape " + analytic.shape_str() +
                         " does not match input " + x.shape_str());
  TensorT<T> probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const T orig = probe.data[i];
    probe.data[i] = orig + static_cast<T>(h);
    const double fp = f(probe);
    probe.data[i] = orig - static_cast<T>(h);
    const double fm = f(probe);
    probe.data[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double an = static_cast<double>(analytic.data[i]);
    // both sides vanishing means agreement; central differences cannot
    // resolve a true zero against cancellation noise
    if (std::abs(an) < 1e-7 && std::abs(numeric) < 1e-7) continue;
    const double err = std::abs(an - numeric) / std::max(1e-8, std::abs(an) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

// Autodiff convenience: `build` records a scalar loss over the given leaf.
// Runs backward once for the analytic gradient, then finite differences.
inline double grad_check(const std::function<int(GraphD&, int)>& build, const TensorD& x,
                         double h) {
  TensorD x0 = x;
  x0.requires_grad = true;
  GraphD g;
  const int in = g.leaf(x0);
  const int loss = build(g, in);
  g.backward(loss);
  const TensorD analytic = g.grad(in);

  auto f = [&](const TensorD& probe) {
    GraphD fresh;
    TensorD p = probe;
    p.requires_grad = false;
    return fresh.value(build(fresh, fresh.leaf(std::move(p)))).data[0];
  };
  return grad_check<double>(f, x, analytic, h);
}

}  // namespace sepipe
