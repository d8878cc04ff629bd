#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sceneadapt/errors.hpp"
#include "sceneadapt/geom.hpp"
#include "sceneadapt/image.hpp"
#include "sceneadapt/io.hpp"
#include "sceneadapt/random.hpp"

namespace sceneadapt {

// Semantic kinds a scene may contain; the taxonomy maps them to class ids.
enum class Kind : std::uint8_t {
  Unlabeled,
  Building,
  Road,
  Sidewalk,
  LaneLine,
  Vehicle,
  Pedestrian,
  Pole,
  Fence,
  Vegetation,
  Wall,
  TrafficSign,
  Other,
};

struct Taxonomy {
  std::vector<std::string> names;
  std::vector<std::optional<std::uint8_t>> ids;  // indexed by Kind

  std::size_t size() const { return names.size(); }
  bool has(Kind k) const { return ids[static_cast<std::size_t>(k)].has_value(); }
  std::uint8_t id(Kind k) const {
    const auto& v = ids[static_cast<std::size_t>(k)];
    if (!v) throw UsageError("kind not in taxonomy");
    return *v;
  }
  bool is_dynamic(std::uint8_t class_id) const {
    return (has(Kind::Vehicle) && class_id == id(Kind::Vehicle)) ||
           (has(Kind::Pedestrian) && class_id == id(Kind::Pedestrian));
  }
};

inline Taxonomy make_taxonomy(std::size_t classes) {
  Taxonomy t;
  t.ids.assign(13, std::nullopt);
  auto add = [&](Kind k, const char* name) {
    t.ids[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(t.names.size());
    t.names.emplace_back(name);
  };
  if (classes == 8) {
    add(Kind::Unlabeled, "unlabeled");
    add(Kind::Building, "building");
    add(Kind::Road, "road");
    add(Kind::Sidewalk, "sidewalk");
    add(Kind::LaneLine, "lane-line");
    add(Kind::Vehicle, "vehicle");
    add(Kind::Pedestrian, "pedestrian");
    add(Kind::Pole, "pole");
  } else if (classes == 13) {
    add(Kind::Unlabeled, "unlabeled");
    add(Kind::Building, "building");
    add(Kind::Fence, "fence");
    add(Kind::Other, "other");
    add(Kind::Pedestrian, "pedestrian");
    add(Kind::Pole, "pole");
    add(Kind::LaneLine, "road-line");
    add(Kind::Road, "road");
    add(Kind::Sidewalk, "sidewalk");
    add(Kind::Vegetation, "vegetation");
    add(Kind::Vehicle, "vehicle");
    add(Kind::Wall, "wall");
    add(Kind::TrafficSign, "traffic-sign");
  } else {
    throw ConfigError("classes must be 8 or 13, got " + std::to_string(classes));
  }
  return t;
}

using Rgb = std::array<float, 3>;

enum class Shape2 : std::uint8_t { Rect, Polygon, Ellipse };
enum class Texture : std::uint8_t { Flat, Windows, Stripes, Speckle, Banded };

// Geometry is expressed in canonical scene coordinates; the unit square is the
// field of view of the reference camera.
struct Primitive {
  Shape2 shape = Shape2::Rect;
  std::uint8_t class_id = 0;
  std::vector<Point> pts;  // Rect: {min, max}; Ellipse: {centre, radii}; Polygon: convex vertices
  Rgb color{0, 0, 0};
  Rgb accent{0, 0, 0};
  Texture texture = Texture::Flat;
  double period = 0.05;

  bool operator==(const Primitive& o) const {
    if (shape != o.shape || class_id != o.class_id || color != o.color || accent != o.accent ||
        texture != o.texture || period != o.period || pts.size() != o.pts.size())
      return false;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].x != o.pts[i].x || pts[i].y != o.pts[i].y) return false;
    return true;
  }
};

struct Box {
  double x0, y0, x1, y1;
};

// Moving object: a box of the given size whose top-left corner travels along a
// segment, wrapping around at the end.
struct Agent {
  std::uint8_t class_id = 0;
  double w = 0.1, h = 0.05;
  Point start, dir;  // dir is a unit vector
  double length = 1.0;
  double speed = 0.01;  // canonical units per frame
  double phase = 0.0;
  Rgb color{0, 0, 0};
  Rgb accent{0, 0, 0};
  bool pedestrian = false;

  Box box_at(std::int64_t t) const {
    const double s = std::fmod(phase + speed * static_cast<double>(t), length);
    const double x = start.x + dir.x * s, y = start.y + dir.y * s;
    return {x, y, x + w, y + h};
  }

  bool operator==(const Agent& o) const {
    return class_id == o.class_id && w == o.w && h == o.h && start.x == o.start.x && start.y == o.start.y &&
           dir.x == o.dir.x && dir.y == o.dir.y && length == o.length && speed == o.speed && phase == o.phase &&
           color == o.color && accent == o.accent && pedestrian == o.pedestrian;
  }
};

struct LightingRanges {
  double brightness_lo = 0.75, brightness_hi = 1.15;
  double tint = 0.06;
  double haze_hi = 0.25;
  double noise = 0.04;

  bool operator==(const LightingRanges&) const = default;
};

struct SceneSpec {
  int scene_id = 1;
  std::uint64_t master_seed = 0;
  std::uint64_t layout_seed = 0;
  std::size_t classes = 8;
  Rgb sky_top{0, 0, 0}, sky_bottom{0, 0, 0};
  std::vector<Primitive> primitives;  // painter's order: later occludes earlier
  std::vector<Agent> agents;          // drawn after all primitives, in order
  LightingRanges lighting;

  bool operator==(const SceneSpec&) const = default;
};

struct ViewSpec {
  std::string id;
  AffineTransform to_pixels;  // canonical -> pixel coordinates
};

struct Frame {
  Image image;
  LabelMask mask;
  int scene_id = 0;
  std::string view_id;
  std::int64_t t = 0;
  std::string split;
};

namespace detail {

inline Rgb jitter(Rng& rng, Rgb c, double amount) {
  for (auto& v : c) v = static_cast<float>(std::clamp(v + uniform(rng, -amount, amount), 0.0, 1.0));
  return c;
}

inline Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {static_cast<float>(a[0] + (b[0] - a[0]) * t), static_cast<float>(a[1] + (b[1] - a[1]) * t),
          static_cast<float>(a[2] + (b[2] - a[2]) * t)};
}

inline Primitive rect(std::uint8_t cls, double x0, double y0, double x1, double y1, Rgb color,
                      Texture tex = Texture::Flat, Rgb accent = {0, 0, 0}, double period = 0.05) {
  return {Shape2::Rect, cls, {{x0, y0}, {x1, y1}}, color, accent, tex, period};
}

inline Primitive poly(std::uint8_t cls, std::vector<Point> pts, Rgb color, Texture tex = Texture::Flat,
                      Rgb accent = {0, 0, 0}, double period = 0.05) {
  return {Shape2::Polygon, cls, std::move(pts), color, accent, tex, period};
}

inline Primitive ellipse(std::uint8_t cls, double cx, double cy, double rx, double ry, Rgb color,
                         Texture tex = Texture::Flat, Rgb accent = {0, 0, 0}, double period = 0.05) {
  return {Shape2::Ellipse, cls, {{cx, cy}, {rx, ry}}, color, accent, tex, period};
}

inline double hash_noise(std::int64_t i, std::int64_t j, std::uint64_t salt) {
  const auto h = splitmix64(static_cast<std::uint64_t>(i) * 0x9E3779B1ull ^ static_cast<std::uint64_t>(j) * 0x85EBCA77ull ^ salt);
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

inline bool contains(const Primitive& p, Point q) {
  switch (p.shape) {
    case Shape2::Rect:
      return q.x >= p.pts[0].x && q.x < p.pts[1].x && q.y >= p.pts[0].y && q.y < p.pts[1].y;
    case Shape2::Ellipse: {
      const double dx = (q.x - p.pts[0].x) / p.pts[1].x, dy = (q.y - p.pts[0].y) / p.pts[1].y;
      return dx * dx + dy * dy <= 1.0;
    }
    case Shape2::Polygon: {
      int sign = 0;
      const std::size_t n = p.pts.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Point a = p.pts[i], b = p.pts[(i + 1) % n];
        const double cross = (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x);
        const int s = cross > 0 ? 1 : (cross < 0 ? -1 : 0);
        if (s == 0) continue;
        if (sign == 0) sign = s;
        else if (s != sign) return false;
      }
      return true;
    }
  }
  return false;
}

inline Box bounds(const Primitive& p) {
  switch (p.shape) {
    case Shape2::Rect:
      return {p.pts[0].x, p.pts[0].y, p.pts[1].x, p.pts[1].y};
    case Shape2::Ellipse:
      return {p.pts[0].x - p.pts[1].x, p.pts[0].y - p.pts[1].y, p.pts[0].x + p.pts[1].x, p.pts[0].y + p.pts[1].y};
    case Shape2::Polygon: {
      Box b{1e300, 1e300, -1e300, -1e300};
      for (const auto& q : p.pts) b = {std::min(b.x0, q.x), std::min(b.y0, q.y), std::max(b.x1, q.x), std::max(b.y1, q.y)};
      return b;
    }
  }
  return {};
}

inline Rgb shade(const Primitive& p, Point q) {
  const Box b = bounds(p);
  switch (p.texture) {
    case Texture::Flat:
      return p.color;
    case Texture::Windows: {
      const double u = (q.x - b.x0) / p.period, v = (q.y - b.y0) / (p.period * 1.3);
      const double fu = u - std::floor(u), fv = v - std::floor(v);
      return (fu > 0.3 && fu < 0.75 && fv > 0.35 && fv < 0.8 && v > 0.6) ? p.accent : p.color;
    }
    case Texture::Stripes: {
      const double u = (q.x - b.x0) / p.period;
      return u - std::floor(u) < 0.45 ? p.accent : p.color;
    }
    case Texture::Banded: {
      const double v = (q.y - b.y0) / (b.y1 - b.y0);
      return v > 0.2 && v < 0.5 ? p.accent : p.color;
    }
    case Texture::Speckle: {
      const double n = hash_noise(static_cast<std::int64_t>(std::floor(q.x / p.period)),
                                  static_cast<std::int64_t>(std::floor(q.y / p.period)), p.class_id);
      return mix(p.color, p.accent, 0.5 + 0.5 * n);
    }
  }
  return p.color;
}

struct SceneBuilder {
  const Taxonomy& tax;
  Rng& rng;
  SceneSpec& spec;

  bool has(Kind k) const { return tax.has(k); }
  std::uint8_t id(Kind k) const { return tax.id(k); }
  void add(Primitive p) { spec.primitives.push_back(std::move(p)); }

  void buildings(double horizon, const std::vector<Rgb>& palette, Rgb window) {
    double x = -0.7;
    while (x < 1.7) {
      const double w = uniform(rng, 0.14, 0.32);
      const double top = uniform(rng, 0.0, horizon - 0.17);
      const Rgb c = jitter(rng, palette[static_cast<std::size_t>(uniform_int(rng, 0, palette.size() - 1))], 0.05);
      add(rect(id(Kind::Building), x, top, x + w, horizon + 0.01, c, Texture::Windows, jitter(rng, window, 0.04),
               uniform(rng, 0.045, 0.07)));
      x += w + (coin(rng, 0.35) ? uniform(rng, 0.02, 0.07) : 0.0);
    }
  }

  void vegetation(double base_y, double x_lo, double x_hi, int count, Rgb green) {
    if (!has(Kind::Vegetation)) return;
    for (int i = 0; i < count; ++i) {
      const double cx = uniform(rng, x_lo, x_hi), r = uniform(rng, 0.05, 0.09);
      add(ellipse(id(Kind::Vegetation), cx, base_y - r * 0.9, r, r * 1.1, jitter(rng, green, 0.05), Texture::Speckle,
                  jitter(rng, green, 0.12), 0.025));
    }
  }

  void walls(double base_y, double x_lo, double x_hi, int count, Rgb grey) {
    if (!has(Kind::Wall)) return;
    for (int i = 0; i < count; ++i) {
      const double x0 = uniform(rng, x_lo, x_hi), w = uniform(rng, 0.12, 0.25), h = uniform(rng, 0.05, 0.08);
      add(rect(id(Kind::Wall), x0, base_y - h, x0 + w, base_y, jitter(rng, grey, 0.04)));
    }
  }

  void fence(double base_y, double x_lo, double x_hi) {
    if (!has(Kind::Fence)) return;
    add(rect(id(Kind::Fence), x_lo, base_y - 0.045, x_hi, base_y, {0.45f, 0.33f, 0.22f}, Texture::Stripes,
             {0.25f, 0.18f, 0.12f}, 0.03));
  }

  // Pole standing on `foot_y`, optionally with a sign at the top.
  void pole(double x, double foot_y, double height, Rgb color) {
    const double w = 0.022;
    add(rect(id(Kind::Pole), x, foot_y - height, x + w, foot_y, color));
    if (has(Kind::TrafficSign) && coin(rng, 0.6)) {
      const Rgb sc = coin(rng, 0.5) ? Rgb{0.8f, 0.1f, 0.1f} : Rgb{0.1f, 0.25f, 0.75f};
      add(ellipse(id(Kind::TrafficSign), x + w / 2, foot_y - height, 0.035, 0.035, sc));
    }
  }

  void clutter(double y, double x_lo, double x_hi, int count) {
    if (!has(Kind::Other)) return;
    for (int i = 0; i < count; ++i) {
      const double x0 = uniform(rng, x_lo, x_hi);
      add(rect(id(Kind::Other), x0, y - 0.05, x0 + 0.04, y, jitter(rng, {0.85f, 0.5f, 0.1f}, 0.1)));
    }
  }

  // Dashed line between two points, as a sequence of thin quads.
  void dashes(Point a, Point b, double dash, double gap, double half_width, Rgb color) {
    const double dx = b.x - a.x, dy = b.y - a.y, len = std::hypot(dx, dy);
    const double ux = dx / len, uy = dy / len, nx = -uy * half_width, ny = ux * half_width;
    for (double s = uniform(rng, 0.0, gap); s < len; s += dash + gap) {
      const double e = std::min(len, s + dash);
      const Point p0{a.x + ux * s, a.y + uy * s}, p1{a.x + ux * e, a.y + uy * e};
      add(poly(id(Kind::LaneLine), {{p0.x + nx, p0.y + ny}, {p1.x + nx, p1.y + ny}, {p1.x - nx, p1.y - ny}, {p0.x - nx, p0.y - ny}},
               color));
    }
  }

  void vehicles(Point start, Point end, int count, double w, double h, double speed_lo, double speed_hi) {
    const double len = std::hypot(end.x - start.x, end.y - start.y);
    for (int i = 0; i < count; ++i) {
      Agent a;
      a.class_id = id(Kind::Vehicle);
      a.w = w * uniform(rng, 0.85, 1.2);
      a.h = h * uniform(rng, 0.9, 1.15);
      a.start = start;
      a.dir = {(end.x - start.x) / len, (end.y - start.y) / len};
      a.length = len;
      a.speed = uniform(rng, speed_lo, speed_hi);
      a.phase = uniform(rng, 0.0, len);
      const Rgb body_colors[] = {{0.8f, 0.1f, 0.1f}, {0.1f, 0.2f, 0.7f}, {0.9f, 0.9f, 0.9f},
                                 {0.1f, 0.1f, 0.1f}, {0.9f, 0.7f, 0.1f}, {0.2f, 0.55f, 0.3f}};
      a.color = jitter(rng, body_colors[uniform_int(rng, 0, 5)], 0.06);
      a.accent = {0.12f, 0.15f, 0.2f};
      spec.agents.push_back(a);
    }
  }

  void pedestrians(Point start, Point end, int count) {
    const double len = std::hypot(end.x - start.x, end.y - start.y);
    for (int i = 0; i < count; ++i) {
      Agent a;
      a.class_id = id(Kind::Pedestrian);
      a.w = uniform(rng, 0.022, 0.03);
      a.h = uniform(rng, 0.07, 0.09);
      a.start = {start.x, start.y - a.h};
      a.dir = {(end.x - start.x) / len, (end.y - start.y) / len};
      a.length = len;
      a.speed = uniform(rng, 0.002, 0.006);
      a.phase = uniform(rng, 0.0, len);
      a.color = jitter(rng, {0.5f, 0.3f, 0.6f}, 0.35);
      a.accent = jitter(rng, {0.2f, 0.2f, 0.35f}, 0.15);
      a.pedestrian = true;
      spec.agents.push_back(a);
    }
  }
};

}  // namespace detail

// Canonical layout of a scene. Scene ids cycle through three street archetypes
// (straight street, converging avenue, crossroads), each with its own palette.
inline SceneSpec build_scene(int scene_id, std::uint64_t master_seed, std::size_t classes = 8) {
  using namespace detail;
  const Taxonomy tax = make_taxonomy(classes);
  SceneSpec spec;
  spec.scene_id = scene_id;
  spec.master_seed = master_seed;
  spec.layout_seed = derive_seed({master_seed, static_cast<std::uint64_t>(scene_id), 0x5CE7E});
  spec.classes = classes;
  Rng rng(spec.layout_seed);
  SceneBuilder b{tax, rng, spec};
  const int archetype = ((scene_id - 1) % 3 + 3) % 3;
  const double horizon = uniform(rng, 0.36, 0.44);

  if (archetype == 0) {
    // Straight street running across the frame, near sidewalk at the bottom.
    spec.sky_top = {0.45f, 0.62f, 0.88f};
    spec.sky_bottom = {0.75f, 0.85f, 0.95f};
    b.buildings(horizon, {{0.62f, 0.28f, 0.22f}, {0.55f, 0.35f, 0.25f}, {0.7f, 0.45f, 0.35f}}, {0.9f, 0.85f, 0.55f});
    b.walls(horizon + 0.01, -0.5, 1.4, 3, {0.6f, 0.6f, 0.58f});
    b.vegetation(horizon + 0.01, -0.5, 1.5, 3, {0.2f, 0.5f, 0.2f});
    const double walk = horizon + 0.1, road_end = walk + 0.42;
    b.add(rect(b.id(Kind::Sidewalk), -1.0, horizon + 0.01, 2.0, walk, {0.62f, 0.62f, 0.6f}, Texture::Speckle,
               {0.55f, 0.55f, 0.53f}, 0.03));
    b.add(rect(b.id(Kind::Road), -1.0, walk, 2.0, road_end, {0.3f, 0.3f, 0.32f}, Texture::Speckle, {0.24f, 0.24f, 0.26f},
               0.02));
    b.add(rect(b.id(Kind::Sidewalk), -1.0, road_end, 2.0, 2.0, {0.6f, 0.58f, 0.55f}, Texture::Speckle,
               {0.52f, 0.5f, 0.48f}, 0.03));
    b.dashes({-1.0, (walk + road_end) / 2}, {2.0, (walk + road_end) / 2}, 0.09, 0.07, 0.012, {0.95f, 0.95f, 0.92f});
    b.fence(road_end + 0.12, -0.2, 0.5);
    b.clutter(walk - 0.005, -0.3, 1.3, 3);
    for (double x = uniform(rng, -0.6, -0.3); x < 1.6; x += uniform(rng, 0.25, 0.4))
      b.pole(x, walk - 0.01, uniform(rng, 0.2, 0.28), {0.22f, 0.24f, 0.22f});
    for (double x = uniform(rng, -0.5, -0.2); x < 1.6; x += uniform(rng, 0.35, 0.55))
      b.pole(x, 1.02, uniform(rng, 0.25, 0.35), {0.22f, 0.24f, 0.22f});
    const double lane = (road_end - walk) / 2;
    b.vehicles({-1.0, walk + 0.03}, {2.0, walk + 0.03}, 3, 0.2, lane - 0.06, 0.01, 0.025);
    b.vehicles({2.0, walk + lane + 0.03}, {-1.0, walk + lane + 0.03}, 3, 0.22, lane - 0.05, 0.01, 0.025);
    b.pedestrians({-1.0, walk - 0.015}, {2.0, walk - 0.015}, 4);
    b.pedestrians({2.0, road_end + 0.1}, {-1.0, road_end + 0.1}, 3);
  } else if (archetype == 1) {
    // Avenue converging towards a vanishing point, sidewalks on both sides.
    spec.sky_top = {0.6f, 0.63f, 0.68f};
    spec.sky_bottom = {0.8f, 0.8f, 0.82f};
    b.buildings(horizon, {{0.45f, 0.48f, 0.55f}, {0.35f, 0.4f, 0.5f}, {0.55f, 0.55f, 0.58f}}, {0.6f, 0.75f, 0.85f});
    b.walls(horizon + 0.01, -0.5, 1.4, 2, {0.5f, 0.47f, 0.45f});
    b.vegetation(horizon + 0.01, -0.6, 1.6, 5, {0.25f, 0.42f, 0.15f});
    const double vx = uniform(rng, 0.4, 0.6), top = horizon + 0.01;
    b.add(rect(b.id(Kind::Sidewalk), -1.0, top, 2.0, 2.0, {0.5f, 0.52f, 0.56f}, Texture::Speckle, {0.44f, 0.46f, 0.5f},
               0.03));
    b.add(poly(b.id(Kind::Road), {{vx - 0.12, top}, {vx + 0.12, top}, {vx + 1.3, 2.0}, {vx - 1.3, 2.0}},
               {0.27f, 0.27f, 0.27f}, Texture::Speckle, {0.22f, 0.22f, 0.22f}, 0.02));
    b.dashes({vx, top}, {vx, 2.0}, 0.1, 0.06, 0.013, {0.95f, 0.8f, 0.15f});
    b.dashes({vx - 0.05, top}, {vx - 0.65, 2.0}, 0.08, 0.08, 0.011, {0.92f, 0.92f, 0.92f});
    b.dashes({vx + 0.05, top}, {vx + 0.65, 2.0}, 0.08, 0.08, 0.011, {0.92f, 0.92f, 0.92f});
    b.fence(top + 0.06, vx + 0.3, vx + 0.9);
    b.clutter(top + 0.12, vx - 0.9, vx - 0.4, 2);
    for (int i = 0; i < 4; ++i) {
      const double s = 0.12 + 0.22 * i;
      b.pole(vx - 0.2 - s * 0.95, top + s, 0.16 + 0.2 * s, {0.3f, 0.3f, 0.28f});
      b.pole(vx + 0.2 + s * 0.95, top + s, 0.16 + 0.2 * s, {0.3f, 0.3f, 0.28f});
    }
    b.vehicles({vx - 0.08, top}, {vx - 0.9, 1.7}, 3, 0.16, 0.1, 0.01, 0.02);
    b.vehicles({vx + 0.75, 1.7}, {vx + 0.02, top}, 3, 0.16, 0.1, 0.01, 0.02);
    b.pedestrians({vx - 0.25, top + 0.05}, {vx - 1.2, 1.5}, 4);
    b.pedestrians({vx + 1.2, 1.5}, {vx + 0.25, top + 0.05}, 3);
  } else {
    // Crossroads: horizontal and vertical roads with sidewalk corners.
    spec.sky_top = {0.8f, 0.55f, 0.45f};
    spec.sky_bottom = {0.95f, 0.8f, 0.6f};
    b.buildings(horizon, {{0.85f, 0.78f, 0.6f}, {0.8f, 0.7f, 0.5f}, {0.75f, 0.75f, 0.65f}}, {0.4f, 0.35f, 0.3f});
    b.walls(horizon + 0.01, -0.5, 1.4, 2, {0.7f, 0.65f, 0.6f});
    b.vegetation(horizon + 0.01, -0.6, 1.6, 4, {0.3f, 0.5f, 0.25f});
    const double top = horizon + 0.01, road_y0 = top + 0.12, road_y1 = road_y0 + 0.24;
    const double cx0 = uniform(rng, 0.3, 0.45), cx1 = cx0 + 0.26;
    b.add(rect(b.id(Kind::Sidewalk), -1.0, top, 2.0, 2.0, {0.68f, 0.5f, 0.42f}, Texture::Speckle, {0.6f, 0.42f, 0.36f},
               0.03));
    b.add(rect(b.id(Kind::Road), -1.0, road_y0, 2.0, road_y1, {0.33f, 0.31f, 0.3f}, Texture::Speckle,
               {0.27f, 0.25f, 0.24f}, 0.02));
    b.add(rect(b.id(Kind::Road), cx0, top, cx1, 2.0, {0.33f, 0.31f, 0.3f}, Texture::Speckle, {0.27f, 0.25f, 0.24f},
               0.02));
    b.dashes({-1.0, (road_y0 + road_y1) / 2}, {cx0 - 0.02, (road_y0 + road_y1) / 2}, 0.07, 0.06, 0.011,
             {0.95f, 0.95f, 0.95f});
    b.dashes({cx1 + 0.02, (road_y0 + road_y1) / 2}, {2.0, (road_y0 + road_y1) / 2}, 0.07, 0.06, 0.011,
             {0.95f, 0.95f, 0.95f});
    b.dashes({(cx0 + cx1) / 2, road_y1 + 0.02}, {(cx0 + cx1) / 2, 2.0}, 0.07, 0.06, 0.011, {0.95f, 0.95f, 0.95f});
    for (double x = cx0 - 0.02; x < cx1; x += 0.05)  // crossing stripes
      b.add(rect(b.id(Kind::LaneLine), x, road_y1 + 0.01, x + 0.025, road_y1 + 0.08, {0.93f, 0.93f, 0.93f}));
    b.fence(road_y1 + 0.2, -0.5, cx0 - 0.08);
    b.clutter(road_y0 - 0.01, cx1 + 0.1, 1.4, 3);
    for (const double x : {cx0 - 0.06, cx1 + 0.04, cx0 - 0.4, cx1 + 0.35})
      b.pole(x, road_y0 - 0.01, uniform(rng, 0.18, 0.26), {0.15f, 0.15f, 0.18f});
    for (const double x : {cx0 - 0.08, cx1 + 0.06}) b.pole(x, road_y1 + 0.35, uniform(rng, 0.25, 0.32), {0.15f, 0.15f, 0.18f});
    b.vehicles({-1.0, road_y0 + 0.02}, {2.0, road_y0 + 0.02}, 3, 0.18, 0.09, 0.012, 0.025);
    b.vehicles({2.0, road_y0 + 0.13}, {-1.0, road_y0 + 0.13}, 2, 0.18, 0.09, 0.012, 0.025);
    b.vehicles({cx0 + 0.03, 2.0}, {cx0 + 0.03, top - 0.05}, 2, 0.09, 0.16, 0.01, 0.02);
    b.pedestrians({-1.0, road_y0 - 0.02}, {2.0, road_y0 - 0.02}, 4);
    b.pedestrians({2.0, road_y1 + 0.25}, {-1.0, road_y1 + 0.25}, 4);
  }
  for (const auto& p : spec.primitives)
    if (p.class_id >= classes) throw InvariantError("primitive class out of range");
  return spec;
}

// Fixed camera perturbation of the second view relative to the reference view,
// in canonical coordinates about the frame centre: anisotropic zoom, shear and
// a pitch-like vertical shift.
inline AffineTransform view_perturbation(const std::string& view_id) {
  if (view_id == "A") return AffineTransform::identity();
  if (view_id == "B") {
    const AffineTransform centre = AffineTransform::translate(0.5, 0.5);
    const AffineTransform m{{1.16, 0.14, 0.0, 0.03, 1.2, 0.0}};
    return compose(AffineTransform::translate(0.04, 0.08), compose(centre, compose(m, invert(centre))));
  }
  throw ConfigError("unknown view id '" + view_id + "' (expected A or B)");
}

// Canonical unit square mapped onto a w x h pixel grid with pixel centres at
// integer coordinates.
inline ViewSpec make_view(const std::string& view_id, std::size_t w, std::size_t h) {
  const AffineTransform to_grid = compose(AffineTransform::translate(-0.5, -0.5),
                                          AffineTransform::scale(static_cast<double>(w), static_cast<double>(h)));
  return {view_id, compose(to_grid, view_perturbation(view_id))};
}

inline std::uint64_t view_index(const std::string& view_id) {
  return view_id.empty() ? 0 : static_cast<std::uint64_t>(static_cast<unsigned char>(view_id[0]));
}

// Pixel-space bounding box of an agent at time t, for the given view.
inline Box agent_pixel_bounds(const Agent& a, const ViewSpec& view, std::int64_t t) {
  const Box c = a.box_at(t);
  Box out{1e300, 1e300, -1e300, -1e300};
  for (const Point p : {Point{c.x0, c.y0}, Point{c.x1, c.y0}, Point{c.x0, c.y1}, Point{c.x1, c.y1}}) {
    const Point q = view.to_pixels.apply(p);
    out = {std::min(out.x0, q.x), std::min(out.y0, q.y), std::max(out.x1, q.x), std::max(out.y1, q.y)};
  }
  return out;
}

inline Frame render_frame(const SceneSpec& scene, const ViewSpec& view, std::int64_t t, std::size_t w, std::size_t h) {
  if (t < 0) throw UsageError("render_frame: negative time index");
  Frame f{Image(w, h), LabelMask(w, h), scene.scene_id, view.id, t, ""};
  const AffineTransform inv = invert(view.to_pixels);

  // Weather is shared by all cameras of a scene at a given time; sensor noise is per camera.
  Rng weather(derive_seed({scene.master_seed, static_cast<std::uint64_t>(scene.scene_id), static_cast<std::uint64_t>(t), 1}));
  const double brightness = uniform(weather, scene.lighting.brightness_lo, scene.lighting.brightness_hi);
  Rgb tint;
  for (auto& v : tint) v = static_cast<float>(uniform(weather, -scene.lighting.tint, scene.lighting.tint));
  const double haze = uniform(weather, 0.0, scene.lighting.haze_hi);
  Rng noise(derive_seed({scene.master_seed, static_cast<std::uint64_t>(scene.scene_id), view_index(view.id),
                         static_cast<std::uint64_t>(t), 2}));

  std::vector<Box> agent_boxes;
  for (const auto& a : scene.agents) agent_boxes.push_back(a.box_at(t));
  std::vector<Box> prim_boxes;
  for (const auto& p : scene.primitives) prim_boxes.push_back(detail::bounds(p));

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Point q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      std::uint8_t cls = 0;
      Rgb color = detail::mix(scene.sky_top, scene.sky_bottom, std::clamp(q.y / 0.45, 0.0, 1.0));
      bool hit = false;
      // Front to back: agents last-drawn first, then primitives.
      for (std::size_t i = scene.agents.size(); i-- > 0 && !hit;) {
        const auto& b = agent_boxes[i];
        if (q.x < b.x0 || q.x >= b.x1 || q.y < b.y0 || q.y >= b.y1) continue;
        const auto& a = scene.agents[i];
        const double v = (q.y - b.y0) / (b.y1 - b.y0), u = (q.x - b.x0) / (b.x1 - b.x0);
        if (a.pedestrian)
          color = v < 0.2 ? Rgb{0.85f, 0.65f, 0.5f} : (v < 0.6 ? a.color : a.accent);
        else
          color = (v > 0.15 && v < 0.45 && u > 0.15 && u < 0.85) ? a.accent : a.color;
        cls = a.class_id;
        hit = true;
      }
      for (std::size_t i = scene.primitives.size(); i-- > 0 && !hit;) {
        const auto& b = prim_boxes[i];
        if (q.x < b.x0 || q.x > b.x1 || q.y < b.y0 || q.y > b.y1) continue;
        const auto& p = scene.primitives[i];
        if (!detail::contains(p, q)) continue;
        color = detail::shade(p, q);
        cls = p.class_id;
        hit = true;
      }
      f.mask.at(y, x) = cls;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = color[c] * brightness + tint[c];
        v = v * (1 - haze) + 0.7 * haze;
        v += uniform(noise, -scene.lighting.noise, scene.lighting.noise);
        f.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return f;
}

// ---- dataset ------------------------------------------------------------------

struct GenConfig {
  std::vector<int> scenes{1, 2, 3};
  std::vector<std::string> views{"A", "B"};
  std::size_t frames = 300;  // per subset
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t classes = 8;
  std::uint64_t seed = 1;
};

struct FrameRecord {
  std::string image_path;
  std::string mask_path;
  int scene = 0;
  std::string view;
  std::int64_t t = 0;
  std::string split;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint64_t seed = 0;
  std::map<std::string, AffineTransform> views;
  std::vector<FrameRecord> frames;
  fs::path root;  // directory holding the manifest; frame paths are relative to it

  std::vector<const FrameRecord*> select(const std::string& subset, const std::string& split) const {
    std::vector<const FrameRecord*> out;
    for (const auto& f : frames)
      if (subset_id(f.view, f.scene) == subset && f.split == split) out.push_back(&f);
    return out;
  }
  bool has_subset(const std::string& subset) const {
    return std::any_of(frames.begin(), frames.end(), [&](const auto& f) { return subset_id(f.view, f.scene) == subset; });
  }

  static std::string subset_id(const std::string& view, int scene) { return view + std::to_string(scene); }
};

// Subset ids are a view letter followed by a scene number, e.g. "B2".
inline std::pair<std::string, int> parse_subset(const std::string& id) {
  if (id.size() < 2 || !std::isalpha(static_cast<unsigned char>(id[0])))
    throw ConfigError("malformed subset id '" + id + "'");
  try {
    std::size_t used = 0;
    const int scene = std::stoi(id.substr(1), &used);
    if (used != id.size() - 1) throw ConfigError("malformed subset id '" + id + "'");
    return {id.substr(0, 1), scene};
  } catch (const std::logic_error&) {
    throw ConfigError("malformed subset id '" + id + "'");
  }
}

inline AffineTransform inter_view_transform(const DatasetManifest& m, const std::string& view_a,
                                            const std::string& view_b) {
  const auto a = m.views.find(view_a), b = m.views.find(view_b);
  if (a == m.views.end()) throw ConfigError("unknown view id '" + view_a + "'");
  if (b == m.views.end()) throw ConfigError("unknown view id '" + view_b + "'");
  if (view_a == view_b) return AffineTransform::identity();
  return compose(b->second, invert(a->second));
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  using nlohmann::json;
  json j;
  j["classes"] = m.classes;
  j["resolution"] = {{"w", m.width}, {"h", m.height}};
  j["seed"] = m.seed;
  j["views"] = json::array();
  for (const auto& [id, t] : m.views)
    j["views"].push_back({{"id", id}, {"matrix", {{t.m[0], t.m[1], t.m[2]}, {t.m[3], t.m[4], t.m[5]}}}});
  j["frames"] = json::array();
  for (const auto& f : m.frames)
    j["frames"].push_back({{"image_path", f.image_path},
                           {"mask_path", f.mask_path},
                           {"scene", f.scene},
                           {"view", f.view},
                           {"t", f.t},
                           {"split", f.split}});
  return j;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.width = j.at("resolution").at("w").get<std::size_t>();
    m.height = j.at("resolution").at("h").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("views")) {
      const auto& mat = v.at("matrix");
      AffineTransform t;
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c) t.m[r * 3 + c] = mat.at(r).at(c).get<double>();
      m.views[v.at("id").get<std::string>()] = t;
    }
    for (const auto& f : j.at("frames"))
      m.frames.push_back({f.at("image_path").get<std::string>(), f.at("mask_path").get<std::string>(),
                          f.at("scene").get<int>(), f.at("view").get<std::string>(), f.at("t").get<std::int64_t>(),
                          f.at("split").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

// Seeded 60/20/20 split of frame indices 0..n-1.
inline std::vector<std::string> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  std::vector<std::string> split(n);
  for (std::size_t k = 0; k < n; ++k) split[order[k]] = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
  return split;
}

inline std::string frame_name(const char* prefix, std::int64_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05lld.%s", prefix, static_cast<long long>(t), ext);
  return buf;
}

// Renders every (scene, view, t) frame under out_dir and writes manifest.json
// last, so an interrupted run never leaves a manifest pointing at missing files.
inline DatasetManifest generate_dataset(const GenConfig& cfg, const fs::path& out_dir, std::size_t jobs = 1) {
  if (cfg.frames == 0) throw ConfigError("frames must be positive");
  if (cfg.width == 0 || cfg.height == 0) throw ConfigError("resolution must be positive");
  if (cfg.scenes.empty() || cfg.views.empty()) throw ConfigError("scenes and views must be non-empty");
  const Taxonomy tax = make_taxonomy(cfg.classes);

  DatasetManifest m;
  m.classes = tax.names;
  m.width = cfg.width;
  m.height = cfg.height;
  m.seed = cfg.seed;
  m.root = out_dir;
  std::vector<SceneSpec> scenes;
  for (const int s : cfg.scenes) scenes.push_back(build_scene(s, cfg.seed, cfg.classes));
  std::vector<ViewSpec> views;
  for (const auto& v : cfg.views) {
    views.push_back(make_view(v, cfg.width, cfg.height));
    m.views[v] = views.back().to_pixels;
  }

  struct Job {
    std::size_t scene, view;
    std::int64_t t;
  };
  std::vector<Job> work;
  for (std::size_t si = 0; si < scenes.size(); ++si)
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
      const std::string subset = DatasetManifest::subset_id(views[vi].id, scenes[si].scene_id);
      ensure_directory(out_dir / subset);
      const auto splits = assign_splits(
          cfg.frames, derive_seed({cfg.seed, static_cast<std::uint64_t>(scenes[si].scene_id), view_index(views[vi].id), 3}));
      for (std::size_t t = 0; t < cfg.frames; ++t) {
        m.frames.push_back({subset + "/" + frame_name("img", static_cast<std::int64_t>(t), "ppm"),
                            subset + "/" + frame_name("mask", static_cast<std::int64_t>(t), "pgm"), scenes[si].scene_id,
                            views[vi].id, static_cast<std::int64_t>(t), splits[t]});
        work.push_back({si, vi, static_cast<std::int64_t>(t)});
      }
    }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < work.size(); i += stride) {
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        const Job& job = work[i];
        const Frame f = render_frame(scenes[job.scene], views[job.view], job.t, cfg.width, cfg.height);
        write_ppm(out_dir / m.frames[i].image_path, f.image);
        write_pgm(out_dir / m.frames[i].mask_path, f.mask);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, work.size()));
  std::vector<std::thread> threads;
  for (std::size_t k = 1; k < n_threads; ++k) threads.emplace_back(worker, k, n_threads);
  worker(0, n_threads);
  for (auto& th : threads) th.join();
  if (failure) std::rethrow_exception(failure);

  atomic_write(out_dir / "manifest.json", manifest_to_json(m).dump(1));
  return m;
}

struct LoadedFrame {
  Image image;
  LabelMask mask;
};

inline LoadedFrame load_frame(const DatasetManifest& m, const FrameRecord& r) {
  LoadedFrame f{read_ppm(m.root / r.image_path), read_pgm(m.root / r.mask_path)};
  if (f.image.width != m.width || f.image.height != m.height || f.mask.width != m.width || f.mask.height != m.height)
    throw DataError("frame " + r.image_path + " does not match the manifest resolution");
  for (std::size_t i = 0; i < f.mask.data.size(); ++i)
    if (f.mask.data[i] >= m.classes.size())
      throw DataError(r.mask_path + ": class id " + std::to_string(f.mask.data[i]) + " out of range at pixel " +
                      std::to_string(i));
  return f;
}

}  // namespace sceneadapt
