#pragma once

#include <array>
#include <cmath>
#include <string>

#include "sceneadapt/errors.hpp"
#include "sceneadapt/image.hpp"

namespace sceneadapt {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Row-major 2x3 matrix mapping (x, y, 1) to (x', y').
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  static AffineTransform identity() { return {}; }
  static AffineTransform translate(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }
  static AffineTransform scale(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0}}; }
  static AffineTransform rotate(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {{c, -s, 0, s, c, 0}};
  }
  static AffineTransform shear(double kx, double ky) { return {{1, kx, 0, ky, 1, 0}}; }

  Point apply(Point p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }
  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  bool operator==(const AffineTransform&) const = default;
};

// (a ∘ b)(p) = a(b(p)).
inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  const auto& A = a.m;
  const auto& B = b.m;
  return {{A[0] * B[0] + A[1] * B[3], A[0] * B[1] + A[1] * B[4], A[0] * B[2] + A[1] * B[5] + A[2],
           A[3] * B[0] + A[4] * B[3], A[3] * B[1] + A[4] * B[4], A[3] * B[2] + A[4] * B[5] + A[5]}};
}

inline AffineTransform invert(const AffineTransform& a) {
  const double d = a.det();
  if (!(std::abs(d) > 1e-12)) throw NumericError("affine transform has a singular linear part");
  const auto& M = a.m;
  const double i00 = M[4] / d, i01 = -M[1] / d, i10 = -M[3] / d, i11 = M[0] / d;
  return {{i00, i01, -(i00 * M[2] + i01 * M[5]), i10, i11, -(i10 * M[2] + i11 * M[5])}};
}

inline double max_abs_diff(const AffineTransform& a, const AffineTransform& b) {
  double e = 0;
  for (std::size_t i = 0; i < 6; ++i) e = std::max(e, std::abs(a.m[i] - b.m[i]));
  return e;
}

// Largest singular value of the 2x2 linear part.
inline double max_singular_value(const AffineTransform& a) {
  const double p = a.m[0], q = a.m[1], r = a.m[3], s = a.m[4];
  const double t = p * p + q * q + r * r + s * s;
  const double d = p * s - q * r;
  return std::sqrt((t + std::sqrt(std::max(0.0, t * t - 4 * d * d))) / 2);
}

// Pixel centres sit at integer coordinates: column x, row y.

// Inverse-mapped bilinear warp; samples falling outside the source are black.
inline Image warp_image(const Image& src, const AffineTransform& h, std::size_t out_w, std::size_t out_h) {
  const AffineTransform inv = invert(h);
  Image out(out_w, out_h, 0.0f);
  if (src.width == 0 || src.height == 0) return out;
  constexpr double tol = 1e-9;
  const double xmax = static_cast<double>(src.width - 1), ymax = static_cast<double>(src.height - 1);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      if (s.x < -tol || s.y < -tol || s.x > xmax + tol || s.y > ymax + tol) continue;
      const double sx = std::clamp(s.x, 0.0, xmax), sy = std::clamp(s.y, 0.0, ymax);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const auto fx = static_cast<float>(sx - static_cast<double>(x0));
      const auto fy = static_cast<float>(sy - static_cast<double>(y0));
      for (std::size_t c = 0; c < 3; ++c) {
        const float top = fx == 0.0f ? src.at(c, y0, x0) : (1 - fx) * src.at(c, y0, x0) + fx * src.at(c, y0, x1);
        const float bot = fx == 0.0f ? src.at(c, y1, x0) : (1 - fx) * src.at(c, y1, x0) + fx * src.at(c, y1, x1);
        out.at(c, y, x) = fy == 0.0f ? top : (1 - fy) * top + fy * bot;
      }
    }
  return out;
}

// Inverse-mapped nearest-neighbour warp; samples outside the source are class 0.
inline LabelMask warp_labels(const LabelMask& src, const AffineTransform& h, std::size_t out_w, std::size_t out_h) {
  const AffineTransform inv = invert(h);
  LabelMask out(out_w, out_h, 0);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      const double rx = std::floor(s.x + 0.5), ry = std::floor(s.y + 0.5);
      if (rx < 0 || ry < 0 || rx >= static_cast<double>(src.width) || ry >= static_cast<double>(src.height)) continue;
      out.at(y, x) = src.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx));
    }
  return out;
}

struct WarpedPair {
  Image image;
  LabelMask mask;
};

// Warp of a source frame into the target view for geometric pre-alignment.
// The frame is rendered onto a canvas enlarged by the transform's largest
// singular value and centred on the target field of view, then centre-cropped
// back to the target resolution.
inline WarpedPair warp_to_target(const Image& image, const LabelMask& mask, const AffineTransform& h,
                                 std::size_t out_w, std::size_t out_h) {
  const double s = std::max(1.0, max_singular_value(h));
  const auto pad_x = static_cast<std::size_t>(std::ceil((s - 1.0) * static_cast<double>(out_w) / 2.0));
  const auto pad_y = static_cast<std::size_t>(std::ceil((s - 1.0) * static_cast<double>(out_h) / 2.0));
  const AffineTransform canvas_h =
      pad_x == 0 && pad_y == 0
          ? h
          : compose(AffineTransform::translate(static_cast<double>(pad_x), static_cast<double>(pad_y)), h);
  const std::size_t cw = out_w + 2 * pad_x, ch = out_h + 2 * pad_y;
  const Image big = warp_image(image, canvas_h, cw, ch);
  const LabelMask big_mask = warp_labels(mask, canvas_h, cw, ch);

  WarpedPair out{Image(out_w, out_h), LabelMask(out_w, out_h)};
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.image.at(c, y, x) = big.at(c, y + pad_y, x + pad_x);
      out.mask.at(y, x) = big_mask.at(y + pad_y, x + pad_x);
    }
  return out;
}

}  // namespace sceneadapt
