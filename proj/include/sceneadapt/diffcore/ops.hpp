#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sceneadapt/diffcore/tape.hpp"

namespace sceneadapt {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t batch, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& k, std::size_t stride, std::size_t pad) {
  if (in.size() != 4 || k.size() != 4)
    throw UsageError("conv2d expects rank-4 input and kernel, got " + to_string(in) + " and " +
                     to_string(k));
  if (k[1] != in[1])
    throw ConfigError("conv2d kernel expects " + std::to_string(k[1]) + " input channels, input has " +
                      std::to_string(in[1]));
  if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
  if (k[2] > in[2] + 2 * pad || k[3] > in[3] + 2 * pad)
    throw ConfigError("conv2d kernel " + to_string(k) + " larger than padded input " + to_string(in));
  ConvGeometry g{in[0], in[1], in[2], in[3], k[0], k[2], k[3], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

// Unfolds one image (cin, h, w) into a (cin*kh*kw, ho*wo) row-major matrix.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.wo, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into an image gradient.
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* in = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw UsageError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) throw UsageError("operands recorded on different tapes");
}

// Elementwise map; `deriv` is evaluated at the input value.
template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return tape.record(std::move(out), {x}, [x, deriv](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>* dx = t.grad_sink(x);
    if (!dx) return;
    const Tensor<T>& xin = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * deriv(xin[i]);
  });
}

}  // namespace detail

// Detached copy: same value, no gradient path back to `x`.
template <class T>
Var<T> detach(const Var<T>& x) {
  return x.tape()->constant(x.value());
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  detail::require_same_tape(x, kernel);
  detail::require_same_tape(x, bias);
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), kernel.shape(), stride, padding);
  if (bias.value().size() != g.cout)
    throw ConfigError("conv2d bias has " + std::to_string(bias.value().size()) + " entries, expected " +
                      std::to_string(g.cout));

  const Tensor<T>& in = x.value();
  const Tensor<T>& w = kernel.value();
  const Tensor<T>& b = bias.value();
  Tensor<T> out(Shape{g.batch, g.cout, g.ho, g.wo});

  const std::size_t k = g.patch();
  const std::size_t p = g.pixels();
  std::vector<T> cols(g.pointwise() ? 0 : k * p);
  detail::ConstMapMat<T> wm(w.data().data(), g.cout, k);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = in.data().data() + n * g.cin * g.h * g.w;
    const T* colp = img;
    if (!g.pointwise()) {
      detail::im2col(img, g, cols.data());
      colp = cols.data();
    }
    detail::ConstMapMat<T> cm(colp, k, p);
    detail::MapMat<T> om(out.data().data() + n * g.cout * p, g.cout, p);
    om.noalias() = wm * cm;
    for (std::size_t c = 0; c < g.cout; ++c) om.row(c).array() += b[c];
  }

  return x.tape()->record(std::move(out), {x, kernel, bias},
                          [x, kernel, bias, g](Tape<T>& t, const std::vector<T>& grad) {
    std::vector<T>* dx = t.grad_sink(x);
    std::vector<T>* dw = t.grad_sink(kernel);
    std::vector<T>* db = t.grad_sink(bias);
    const std::size_t k = g.patch();
    const std::size_t p = g.pixels();
    const T* in = x.value().data().data();
    detail::ConstMapMat<T> wm(kernel.value().data().data(), g.cout, k);
    std::vector<T> cols(g.pointwise() ? 0 : k * p);
    std::vector<T> dcols(dx && !g.pointwise() ? k * p : 0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      detail::ConstMapMat<T> gm(grad.data() + n * g.cout * p, g.cout, p);
      if (db) {
        // Plain loop: Eigen's vectorised sum peels by runtime alignment, which
        // makes the result depend on where the buffer happens to live.
        const T* gp = grad.data() + n * g.cout * p;
        for (std::size_t c = 0; c < g.cout; ++c) {
          T acc{0};
          for (std::size_t i = 0; i < p; ++i) acc += gp[c * p + i];
          (*db)[c] += acc;
        }
      }
      if (dw) {
        const T* img = in + n * g.cin * g.h * g.w;
        const T* colp = img;
        if (!g.pointwise()) {
          detail::im2col(img, g, cols.data());
          colp = cols.data();
        }
        detail::ConstMapMat<T> cm(colp, k, p);
        detail::MapMat<T> dwm(dw->data(), g.cout, k);
        dwm.noalias() += gm * cm.transpose();
      }
      if (dx) {
        T* dimg = dx->data() + n * g.cin * g.h * g.w;
        if (g.pointwise()) {
          detail::MapMat<T> dim(dimg, k, p);
          dim.noalias() += wm.transpose() * gm;
        } else {
          detail::MapMat<T> dcm(dcols.data(), k, p);
          dcm.noalias() = wm.transpose() * gm;
          detail::col2im_add(dcols.data(), g, dimg);
        }
      }
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T{0} ? v : T{0}; },
                       [](T v) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary(x, [slope](T v) { return v > T{0} ? v : slope * v; },
                       [slope](T v) { return v > T{0} ? T{1} : slope; });
}

template <class T>
T stable_sigmoid(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(x, [](T v) { return stable_sigmoid(v); },
                       [](T v) {
                         const T s = stable_sigmoid(v);
                         return s * (T{1} - s);
                       });
}

template <class T>
Var<T> log(const Var<T>& x) {
  if (x.tape()->options().check_numerics) {
    const auto data = x.value().data();
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!(data[i] > T{0}))
        throw NumericError("log of non-positive value at element " + std::to_string(i));
  }
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v) { return T{1} / v; });
}

template <class T>
Var<T> abs(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::abs(v); },
                       [](T v) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

// Gradient passes where lo <= x <= hi.
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

template <class T>
Var<T> scale(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T) { return c; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T) { return T{1}; });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const std::vector<T>& g) {
    if (auto* da = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i];
    if (auto* db = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const std::vector<T>& g) {
    if (auto* da = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i];
    if (auto* db = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] -= g[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const std::vector<T>& g) {
    if (auto* da = t.grad_sink(a)) {
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * bv[i];
    }
    if (auto* db = t.grad_sink(b)) {
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (const T v : x.value().data()) acc += v;
  return x.tape()->record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, const std::vector<T>& g) {
    if (auto* dx = t.grad_sink(x))
      for (T& d : *dx) d += g[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw UsageError("mean of empty tensor");
  T acc{0};
  for (const T v : x.value().data()) acc += v;
  const T inv = T{1} / static_cast<T>(n);
  return x.tape()->record(Tensor<T>::scalar(acc * inv), {x}, [x, inv](Tape<T>& t, const std::vector<T>& g) {
    if (auto* dx = t.grad_sink(x))
      for (T& d : *dx) d += g[0] * inv;
  });
}

// Softmax over the channel axis, independently at every (batch, pixel).
template <class T>
Var<T> softmax_channels(const Var<T>& scores) {
  const Tensor<T>& in = scores.value();
  if (in.rank() != 4) throw UsageError("softmax_channels expects a rank-4 tensor");
  const std::size_t b = in.extent(0), c = in.extent(1), hw = in.extent(2) * in.extent(3);
  if (c < 2) throw UsageError("softmax_channels needs at least 2 channels");
  Tensor<T> out(in.shape());
  for (std::size_t n = 0; n < b; ++n) {
    const T* src = in.data().data() + n * c * hw;
    T* dst = out.data().data() + n * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      T mx = src[p];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, src[k * hw + p]);
      T total{0};
      for (std::size_t k = 0; k < c; ++k) {
        const T e = std::exp(src[k * hw + p] - mx);
        dst[k * hw + p] = e;
        total += e;
      }
      for (std::size_t k = 0; k < c; ++k) dst[k * hw + p] /= total;
    }
  }
  const std::size_t out_id = scores.tape()->size();
  Tape<T>* tape = scores.tape();
  return tape->record(std::move(out), {scores}, [scores, out_id, b, c, hw](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>* dx = t.grad_sink(scores);
    if (!dx) return;
    const T* y = t.value(t.handle(out_id)).data().data();
    for (std::size_t n = 0; n < b; ++n) {
      const std::size_t base = n * c * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        T dot{0};
        for (std::size_t k = 0; k < c; ++k) dot += g[base + k * hw + p] * y[base + k * hw + p];
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = base + k * hw + p;
          (*dx)[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// Picks channel labels[b, h, w] at every pixel: (B,C,H,W) -> (B,1,H,W).
template <class T>
Var<T> gather_channels(const Var<T>& x, std::span<const std::uint8_t> labels) {
  const Tensor<T>& in = x.value();
  if (in.rank() != 4) throw UsageError("gather_channels expects a rank-4 tensor");
  const std::size_t b = in.extent(0), c = in.extent(1), hw = in.extent(2) * in.extent(3);
  if (labels.size() != b * hw)
    throw UsageError("gather_channels: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b * hw) + " pixels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= c)
      throw DataError("label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                      " outside [0, " + std::to_string(c) + ")");
  Tensor<T> out(Shape{b, 1, in.extent(2), in.extent(3)});
  std::vector<std::size_t> index(b * hw);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t i = (n * c + labels[n * hw + p]) * hw + p;
      index[n * hw + p] = i;
      out[n * hw + p] = in[i];
    }
  return x.tape()->record(std::move(out), {x}, [x, index = std::move(index)](Tape<T>& t, const std::vector<T>& g) {
    if (auto* dx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[index[i]] += g[i];
  });
}

template <class T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  if (in.rank() != 4) throw UsageError("upsample_nearest2x expects a rank-4 tensor");
  const std::size_t planes = in.extent(0) * in.extent(1), h = in.extent(2), w = in.extent(3);
  Tensor<T> out(Shape{in.extent(0), in.extent(1), 2 * h, 2 * w});
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = in.data().data() + pl * h * w;
    T* dst = out.data().data() + pl * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  return x.tape()->record(std::move(out), {x}, [x, planes, h, w](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T>* dx = t.grad_sink(x);
    if (!dx) return;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T* src = g.data() + pl * 4 * h * w;
      T* dst = dx->data() + pl * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
    }
  });
}

// Non-differentiable 2x2 average pooling; the left inverse of upsample_nearest2x.
template <class T>
Tensor<T> avg_pool2x(const Tensor<T>& in) {
  if (in.rank() != 4 || in.extent(2) % 2 || in.extent(3) % 2)
    throw UsageError("avg_pool2x expects rank-4 input with even spatial extents");
  const std::size_t planes = in.extent(0) * in.extent(1), h = in.extent(2) / 2, w = in.extent(3) / 2;
  Tensor<T> out(Shape{in.extent(0), in.extent(1), h, w});
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const T* s = in.data().data() + pl * 4 * h * w;
        const std::size_t r0 = 2 * y * 2 * w, r1 = (2 * y + 1) * 2 * w;
        out[(pl * h + y) * w + x] =
            (s[r0 + 2 * x] + s[r0 + 2 * x + 1] + s[r1 + 2 * x] + s[r1 + 2 * x + 1]) / T{4};
      }
  return out;
}

}  // namespace sceneadapt
