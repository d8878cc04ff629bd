#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "sceneadapt/diffcore/ops.hpp"

namespace sceneadapt {

// Scalar-valued function recorded on a fresh tape for each evaluation.
template <class T>
using TapeFunction = std::function<Var<T>(Tape<T>&, const Var<T>&)>;

// Compares reverse-mode gradients of `f` at `x` against central differences.
// Returns max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|).
template <class T>
T finite_diff_check(const TapeFunction<T>& f, const Tensor<T>& x, T eps = T(1e-4)) {
  if (!(eps > T{0})) throw UsageError("finite_diff_check: eps must be positive");

  std::vector<T> analytic;
  {
    Tape<T> tape;
    const Var<T> xv = tape.input(x, true);
    const Var<T> y = f(tape, xv);
    tape.backward(y);
    analytic = xv.grad();
    if (analytic.empty()) analytic.assign(x.size(), T{0});
  }

  auto eval = [&f](const Tensor<T>& at) {
    Tape<T> tape;
    return f(tape, tape.input(at, false)).value().item();
  };

  T worst{0};
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = eval(probe);
    probe[i] = orig - eps;
    const T down = eval(probe);
    probe[i] = orig;
    const T numeric = (up - down) / (T{2} * eps);
    const T err = std::abs(analytic[i] - numeric) /
                  std::max(T(1e-8), std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sceneadapt
