#include <set>

#include <unistd.h>

#include <gtest/gtest.h>

#include "sceneadapt/scenegen.hpp"

namespace sceneadapt {
namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sa_gen_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(BuildScene, Deterministic) {
  for (const std::size_t classes : {8u, 13u}) EXPECT_EQ(build_scene(2, 5, classes), build_scene(2, 5, classes));
}

TEST(BuildScene, DistinctScenesAndSeeds) {
  const auto s1 = build_scene(1, 5), s2 = build_scene(2, 5), s3 = build_scene(3, 5);
  EXPECT_NE(s1.primitives, s2.primitives);
  EXPECT_NE(s1.primitives, s3.primitives);
  EXPECT_NE(s2.primitives, s3.primitives);
  EXPECT_NE(build_scene(1, 5).primitives, build_scene(1, 6).primitives);
}

TEST(BuildScene, TaxonomyCoverageAcrossDefaultScenes) {
  for (const std::size_t classes : {8u, 13u}) {
    std::set<std::uint8_t> seen{0};  // the open sky is unlabeled
    for (const int s : {1, 2, 3}) {
      const auto spec = build_scene(s, 1, classes);
      for (const auto& p : spec.primitives) {
        ASSERT_LT(p.class_id, classes);
        seen.insert(p.class_id);
      }
      for (const auto& a : spec.agents) seen.insert(a.class_id);
    }
    EXPECT_EQ(seen.size(), classes) << classes;
  }
  EXPECT_THROW(build_scene(1, 1, 9), ConfigError);
}

TEST(RenderFrame, DeterministicAndValid) {
  const auto scene = build_scene(3, 11);
  const auto view = make_view("B", 48, 40);
  const Frame a = render_frame(scene, view, 17, 48, 40);
  const Frame b = render_frame(scene, view, 17, 48, 40);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  for (const float v : a.image.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (const auto c : a.mask.data) EXPECT_LT(c, 8);
  EXPECT_THROW(render_frame(scene, view, -1, 48, 40), UsageError);
}

TEST(RenderFrame, ClassFrequenciesAreImbalanced) {
  std::vector<double> freq(8, 0.0);
  for (const int s : {1, 2, 3})
    for (const std::int64_t t : {0, 50, 100}) {
      const auto f = render_frame(build_scene(s, 1), make_view("A", 64, 64), t, 64, 64);
      for (const auto c : f.mask.data) freq[c] += 1.0;
    }
  const Taxonomy tax = make_taxonomy(8);
  EXPECT_GT(freq[tax.id(Kind::Road)], 10 * freq[tax.id(Kind::Pedestrian)]);
  EXPECT_GT(freq[tax.id(Kind::Building)], 5 * freq[tax.id(Kind::Pole)]);
  for (const double f : freq) EXPECT_GT(f, 0.0);
}

TEST(RenderFrame, ConsecutiveFramesDifferOnlyAtAgents) {
  const Taxonomy tax = make_taxonomy(8);
  std::size_t changed = 0;
  for (const int s : {1, 2, 3})
    for (const char* v : {"A", "B"}) {
      const auto scene = build_scene(s, 4);
      const auto view = make_view(v, 64, 64);
      for (const std::int64_t t : {0, 7, 123}) {
        const Frame f0 = render_frame(scene, view, t, 64, 64), f1 = render_frame(scene, view, t + 1, 64, 64);
        std::vector<Box> regions;
        for (const auto& a : scene.agents) {
          regions.push_back(agent_pixel_bounds(a, view, t));
          regions.push_back(agent_pixel_bounds(a, view, t + 1));
        }
        for (std::size_t y = 0; y < 64; ++y)
          for (std::size_t x = 0; x < 64; ++x) {
            if (f0.mask.at(y, x) == f1.mask.at(y, x)) continue;
            ++changed;
            const bool inside = std::any_of(regions.begin(), regions.end(), [&](const Box& b) {
              return x + 1.0 >= b.x0 && x - 1.0 <= b.x1 && y + 1.0 >= b.y0 && y - 1.0 <= b.y1;
            });
            EXPECT_TRUE(inside) << "scene " << s << " view " << v << " t " << t << " pixel " << x << "," << y;
            EXPECT_TRUE(tax.is_dynamic(f0.mask.at(y, x)) || tax.is_dynamic(f1.mask.at(y, x)));
          }
      }
    }
  EXPECT_GT(changed, 100u);
}

TEST(RenderFrame, InterViewConsistency) {
  const Taxonomy tax = make_taxonomy(8);
  for (const int s : {1, 2, 3}) {
    const auto scene = build_scene(s, 1);
    const auto va = make_view("A", 64, 64), vb = make_view("B", 64, 64);
    const AffineTransform ab = compose(vb.to_pixels, invert(va.to_pixels));
    for (const std::int64_t t : {3, 77}) {
      const Frame fa = render_frame(scene, va, t, 64, 64), fb = render_frame(scene, vb, t, 64, 64);
      const LabelMask warped = warp_labels(fa.mask, ab, 64, 64);
      const AffineTransform ba = invert(ab);
      std::size_t total = 0, agree = 0;
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
          const Point p = ba.apply({static_cast<double>(x), static_cast<double>(y)});
          const double rx = std::floor(p.x + 0.5), ry = std::floor(p.y + 0.5);
          if (rx < 0 || ry < 0 || rx > 63 || ry > 63) continue;
          if (tax.is_dynamic(fb.mask.at(y, x)) || tax.is_dynamic(warped.at(y, x))) continue;
          ++total;
          agree += fb.mask.at(y, x) == warped.at(y, x);
        }
      EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.90) << "scene " << s;
    }
  }
}

TEST(Views, OverlapAndInvertibility) {
  const auto va = make_view("A", 64, 64), vb = make_view("B", 64, 64);
  EXPECT_GT(std::abs(vb.to_pixels.det()), 1e-6);
  const AffineTransform ab = compose(vb.to_pixels, invert(va.to_pixels));
  std::size_t inside = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const Point p = ab.apply({static_cast<double>(x), static_cast<double>(y)});
      inside += p.x >= -0.5 && p.y >= -0.5 && p.x < 63.5 && p.y < 63.5;
    }
  EXPECT_GE(static_cast<double>(inside) / 4096.0, 0.70);
  EXPECT_LT(static_cast<double>(inside) / 4096.0, 0.95);
  EXPECT_THROW(make_view("C", 64, 64), ConfigError);
}

TEST(Splits, Proportions) {
  for (const std::size_t n : {10u, 11u, 300u, 7u}) {
    const auto s = assign_splits(n, 42);
    const auto count = [&](const char* k) { return static_cast<double>(std::count(s.begin(), s.end(), k)); };
    EXPECT_NEAR(count("train"), 0.6 * n, 1.0);
    EXPECT_NEAR(count("val"), 0.2 * n, 1.0);
    EXPECT_NEAR(count("test"), 0.2 * n, 1.0);
  }
  const auto ten = assign_splits(10, 3);
  EXPECT_EQ(std::count(ten.begin(), ten.end(), "train"), 6);
  EXPECT_EQ(std::count(ten.begin(), ten.end(), "val"), 2);
  EXPECT_EQ(std::count(ten.begin(), ten.end(), "test"), 2);
  EXPECT_NE(assign_splits(300, 1), assign_splits(300, 2));
}

TEST(SubsetIds, Parse) {
  EXPECT_EQ(parse_subset("B2"), (std::pair<std::string, int>{"B", 2}));
  EXPECT_THROW(parse_subset("2B"), ConfigError);
  EXPECT_THROW(parse_subset("B"), ConfigError);
  EXPECT_THROW(parse_subset("Bx"), ConfigError);
}

TEST_F(TempDir, SmallDatasetRoundTrip) {
  GenConfig cfg;
  cfg.frames = 10;
  cfg.width = 24;
  cfg.height = 16;
  const auto m = generate_dataset(cfg, dir_, 3);
  EXPECT_EQ(m.frames.size(), 60u);
  const auto back = load_manifest(dir_ / "manifest.json");
  EXPECT_EQ(back.frames.size(), 60u);
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.width, 24u);
  EXPECT_EQ(back.seed, 1u);
  for (const char* subset : {"A1", "B1", "A2", "B2", "A3", "B3"}) {
    EXPECT_EQ(back.select(subset, "train").size(), 6u) << subset;
    EXPECT_EQ(back.select(subset, "val").size(), 2u) << subset;
    EXPECT_EQ(back.select(subset, "test").size(), 2u) << subset;
  }
  EXPECT_LT(max_abs_diff(inter_view_transform(back, "A", "A"), AffineTransform::identity()), 1e-15);
  EXPECT_LT(max_abs_diff(compose(inter_view_transform(back, "A", "B"), inter_view_transform(back, "B", "A")),
                         AffineTransform::identity()),
            1e-10);
  EXPECT_THROW(inter_view_transform(back, "A", "Q"), ConfigError);

  // Stored frames match a fresh render after quantisation.
  const auto& rec = *back.select("B3", "test").front();
  const LoadedFrame lf = load_frame(back, rec);
  const Frame fresh = render_frame(build_scene(3, 1), make_view("B", 24, 16), rec.t, 24, 16);
  EXPECT_EQ(lf.mask, fresh.mask);
  for (std::size_t i = 0; i < fresh.image.data.size(); ++i)
    EXPECT_NEAR(lf.image.data[i], fresh.image.data[i], 0.5f / 255.0f + 1e-6f);
}

TEST_F(TempDir, RegenerationIsByteIdenticalAcrossJobCounts) {
  GenConfig cfg;
  cfg.frames = 6;
  cfg.width = 16;
  cfg.height = 16;
  cfg.classes = 13;
  generate_dataset(cfg, dir_ / "a", 1);
  generate_dataset(cfg, dir_ / "b", 4);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), dir_ / "a");
    EXPECT_EQ(read_file(e.path()), read_file(dir_ / "b" / rel)) << rel;
  }
  EXPECT_EQ(files, 6u * 6u * 2u + 1u);
}

TEST_F(TempDir, DefaultConfigCount) {
  GenConfig cfg;
  EXPECT_EQ(cfg.frames * cfg.scenes.size() * cfg.views.size(), 1800u);
  EXPECT_EQ(cfg.width, 64u);
  EXPECT_EQ(cfg.height, 64u);
}

TEST_F(TempDir, UnwritableOutputLeavesNoManifest) {
  // A regular file where a directory is needed fails even for privileged users.
  atomic_write(dir_ / "blocker", "x");
  GenConfig cfg;
  cfg.frames = 2;
  EXPECT_THROW(generate_dataset(cfg, dir_ / "blocker" / "out"), IoError);
  EXPECT_FALSE(fs::exists(dir_ / "blocker" / "out" / "manifest.json"));
}

TEST(Manifest, MalformedIsDataError) {
  const auto path = fs::temp_directory_path() / ("sa_bad_manifest_" + std::to_string(::getpid()) + ".json");
  atomic_write(path, "{\"classes\": [\"a\"]}");
  EXPECT_THROW(load_manifest(path), DataError);
  fs::remove(path);
}

}  // namespace
}  // namespace sceneadapt
