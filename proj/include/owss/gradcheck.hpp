#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "owss/tensor.hpp"

namespace owss {

// Builds a fresh tape, evaluates fn on a leaf made from x, and returns the
// scalar loss tensor. fn must be deterministic in x.
using ScalarFn =
    std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

// Max relative error between the analytic gradient of fn at x and central
// finite differences with step eps. Error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12), maximized over
// the elements of x.
inline double grad_check(const ScalarFn& fn, const Tensor<double>& x,
                         double eps) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
  for (double v : x.data())
    if (!std::isfinite(v))
      throw std::invalid_argument("grad_check: x has non-finite entries");

  std::vector<double> analytic;
  {
    Tape<double> tape;
    Tensor<double> leaf = tape.adopt(x, true);
    Tensor<double> loss = fn(tape, leaf);
    if (loss.size() != 1)
      throw std::logic_error("grad_check: fn did not produce a scalar");
    tape.backward(loss);
    analytic = leaf.grad();
  }

  auto eval = [&](const std::vector<double>& data, long coord) {
    Tape<double> tape;
    Tensor<double> leaf = tape.leaf(x.shape(), data, false);
    const double v = fn(tape, leaf).item();
    if (!std::isfinite(v))
      throw std::runtime_error(
          "grad_check: non-finite intermediate at coordinate " +
          std::to_string(coord));
    return v;
  };

  double max_rel = 0.0;
  std::vector<double> probe = x.data();
  for (long i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe, i);
    probe[i] = orig - eps;
    const double fm = eval(probe, i);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-12});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace owss
