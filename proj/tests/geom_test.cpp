#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "sceneadapt/geom.hpp"
#include "sceneadapt/random.hpp"

namespace sceneadapt {
namespace {

AffineTransform random_transform(std::uint64_t seed) {
  Rng rng(seed);
  AffineTransform a;
  do {
    for (auto& v : a.m) v = uniform(rng, -3.0, 3.0);
  } while (std::abs(a.det()) < 0.2);
  return a;
}

Image smooth_image(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        img.at(c, y, x) = 0.5f + 0.4f * static_cast<float>(std::sin(0.15 * x + 0.4 * c) * std::cos(0.1 * y));
  return img;
}

LabelMask random_mask(std::size_t w, std::size_t h, std::uint8_t classes, std::uint64_t seed) {
  Rng rng(seed);
  LabelMask m(w, h);
  for (auto& v : m.data) v = static_cast<std::uint8_t>(uniform_int(rng, 0, classes - 1));
  return m;
}

TEST(Affine, InverseBasics) {
  EXPECT_EQ(max_abs_diff(invert(AffineTransform::identity()), AffineTransform::identity()), 0.0);
  EXPECT_LT(max_abs_diff(invert(AffineTransform::translate(3, 4)), AffineTransform::translate(-3, -4)), 1e-15);
  EXPECT_THROW(invert(AffineTransform{{1, 2, 0, 2, 4, 0}}), NumericError);
}

TEST(Affine, RandomInverseComposesToIdentity) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_transform(s);
    EXPECT_LT(max_abs_diff(compose(invert(a), a), AffineTransform::identity()), 1e-10);
    EXPECT_LT(max_abs_diff(compose(a, invert(a)), AffineTransform::identity()), 1e-10);
  }
}

TEST(Affine, CompositionAssociative) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_transform(3 * s), b = random_transform(3 * s + 1), c = random_transform(3 * s + 2);
    EXPECT_LT(max_abs_diff(compose(compose(a, b), c), compose(a, compose(b, c))), 1e-12);
  }
}

TEST(Affine, ComposeAppliesRightFirst) {
  const auto a = AffineTransform::scale(2, 3), b = AffineTransform::translate(1, -1);
  const Point p = compose(a, b).apply({1, 1});
  EXPECT_DOUBLE_EQ(p.x, 4);
  EXPECT_DOUBLE_EQ(p.y, 0);
}

TEST(Affine, MaxSingularValue) {
  EXPECT_NEAR(max_singular_value(AffineTransform::scale(2, 0.5)), 2.0, 1e-12);
  EXPECT_NEAR(max_singular_value(AffineTransform::rotate(0.7)), 1.0, 1e-12);
  // [[1,1],[0,1]] has singular values golden ratio and its inverse.
  EXPECT_NEAR(max_singular_value(AffineTransform::shear(1, 0)), (1 + std::sqrt(5.0)) / 2, 1e-12);
}

TEST(Warp, IdentityIsExactNoOp) {
  const auto img = smooth_image(17, 11);
  EXPECT_EQ(warp_image(img, AffineTransform::identity(), 17, 11), img);
  const auto mask = random_mask(17, 11, 8, 1);
  EXPECT_EQ(warp_labels(mask, AffineTransform::identity(), 17, 11), mask);
}

TEST(Warp, IntegerShiftIsExact) {
  const auto img = smooth_image(12, 9);
  const auto out = warp_image(img, AffineTransform::translate(2, 0), 12, 9);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        if (x < 2)
          EXPECT_EQ(out.at(c, y, x), 0.0f);
        else
          EXPECT_EQ(out.at(c, y, x), img.at(c, y, x - 2));
      }
}

TEST(Warp, RoundTripOnSmoothImage) {
  const std::size_t w = 48, h = 40;
  const auto img = smooth_image(w, h);
  const AffineTransform a = compose(AffineTransform::translate(3.3, -2.1),
                                    compose(AffineTransform::rotate(0.12), AffineTransform::scale(1.1, 0.95)));
  const auto back = warp_image(warp_image(img, a, w, h), invert(a), w, h);
  // Doubly in-bounds: the pixel's forward image and its footprint are inside the frame.
  std::size_t checked = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Point p = a.apply({static_cast<double>(x), static_cast<double>(y)});
      if (p.x < 1 || p.y < 1 || p.x > w - 2.0 || p.y > h - 2.0) continue;
      if (x < 2 || y < 2 || x + 2 >= w || y + 2 >= h) continue;
      ++checked;
      for (std::size_t c = 0; c < 3; ++c) EXPECT_LT(std::abs(back.at(c, y, x) - img.at(c, y, x)), 0.05f);
    }
  EXPECT_GT(checked, w * h / 2);
}

TEST(WarpLabels, NeverInventsClasses) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto mask = random_mask(20, 20, 5, s);
    for (auto& v : mask.data) v = static_cast<std::uint8_t>(v * 2 + 1);  // odd ids only
    const auto out = warp_labels(mask, random_transform(s + 100), 20, 20);
    const std::set<std::uint8_t> in(mask.data.begin(), mask.data.end());
    for (const auto v : out.data) EXPECT_TRUE(v == 0 || in.count(v)) << int(v);
  }
}

TEST(WarpLabels, IntegerShiftMatchesOneHotImageWarp) {
  const std::uint8_t classes = 6;
  const auto mask = random_mask(15, 13, classes, 4);
  for (const auto& shift : {AffineTransform::translate(2, 0), AffineTransform::translate(-3, 1),
                            AffineTransform::translate(0, -4)}) {
    const auto warped = warp_labels(mask, shift, 15, 13);
    // One channel per class, three classes per image.
    std::vector<Image> planes;
    for (std::uint8_t k0 = 0; k0 < classes; k0 += 3) {
      Image onehot(15, 13);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 15 * 13; ++i) onehot.data[c * 15 * 13 + i] = mask.data[i] == k0 + c ? 1.0f : 0.0f;
      planes.push_back(warp_image(onehot, shift, 15, 13));
    }
    for (std::size_t i = 0; i < 15 * 13; ++i) {
      std::uint8_t best = 0;
      float best_v = 0.0f;
      for (std::uint8_t k = 0; k < classes; ++k) {
        const float v = planes[k / 3].data[(k % 3) * 15 * 13 + i];
        if (v > best_v) best_v = v, best = k;
      }
      EXPECT_EQ(warped.data[i], best) << i;
    }
  }
}

TEST(WarpToTarget, CanvasCropMatchesDirectWarp) {
  const std::size_t w = 32, h = 24;
  const auto img = smooth_image(w, h);
  const auto mask = random_mask(w, h, 8, 9);
  const AffineTransform a{{1.15, 0.1, -3.0, 0.02, 1.2, 2.0}};
  const auto pair = warp_to_target(img, mask, a, w, h);
  const auto direct_img = warp_image(img, a, w, h);
  const auto direct_mask = warp_labels(mask, a, w, h);
  std::size_t mask_diff = 0;
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(pair.image.data[i], direct_img.data[i], 1e-5f);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask_diff += pair.mask.data[i] != direct_mask.data[i];
  EXPECT_LE(mask_diff, 1u);
  const auto id = warp_to_target(img, mask, AffineTransform::identity(), w, h);
  EXPECT_EQ(id.image, img);
  EXPECT_EQ(id.mask, mask);
}

}  // namespace
}  // namespace sceneadapt
