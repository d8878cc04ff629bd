#pragma once

// Test-only reference implementations. Nothing here may call into the code
// paths it is used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sceneadapt/diffcore/tensor.hpp"

namespace sceneadapt::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

// Values bounded away from zero so kinked ops (relu, abs) are differentiable
// within a finite-difference step.
template <class T>
Tensor<T> random_tensor_off_zero(Shape shape, std::uint64_t seed, T min_abs = T(0.05)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(min_abs, 1.0);
  std::bernoulli_distribution neg(0.5);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(neg(rng) ? -mag(rng) : mag(rng));
  return t;
}

// Direct sextuple loop over (n, co, oy, ox, ci, ki, kj).
template <class T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, std::size_t stride,
                       std::size_t pad) {
  const std::size_t n = x.extent(0), cin = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t cout = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> out(Shape{n, cout, ho, wo});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += double(x.at(bi, ci, iy, ix)) * double(k.at(co, ci, ki, kj));
              }
          out.at(bi, co, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

// Receptive field by brute force: mark which input pixels influence output
// cell (0,0) of a stack of convolutions by propagating a dependency mask.
inline std::size_t brute_receptive_field(const std::vector<std::pair<std::size_t, std::size_t>>& kernel_stride,
                                         std::size_t input_extent = 256) {
  // Track which input indices (1-D) feed each position; start from input.
  std::vector<std::vector<bool>> deps(input_extent, std::vector<bool>(input_extent, false));
  for (std::size_t i = 0; i < input_extent; ++i) deps[i][i] = true;
  for (const auto& [k, s] : kernel_stride) {
    const std::size_t out = (deps.size() - k) / s + 1;
    std::vector<std::vector<bool>> next(out, std::vector<bool>(input_extent, false));
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < input_extent; ++i)
          if (deps[o * s + j][i]) next[o][i] = true;
    deps = std::move(next);
  }
  std::size_t lo = input_extent, hi = 0;
  for (std::size_t i = 0; i < input_extent; ++i)
    if (deps[0][i]) {
      lo = std::min(lo, i);
      hi = std::max(hi, i);
    }
  return hi - lo + 1;
}

}  // namespace sceneadapt::testing
