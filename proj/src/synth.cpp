#include "efld/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "efld/image.hpp"
#include "efld/rng.hpp"

namespace efld {
namespace synth {
namespace {

constexpr double pi = std::numbers::pi;
constexpr double head_rx = 0.30, head_ry = 0.36;
constexpr double brow_x0 = 0.19, brow_x1 = 0.04, brow_y = -0.16, brow_arch = 0.02, brow_width = 0.02;
constexpr double mouth_y = 0.17, mouth_a = 0.08, mouth_b = 0.035, inner_a = 0.05, inner_b = 0.014;

using Point = std::pair<double, double>;

Point brow_upper(double x0, double t) {
  return {x0 + (brow_x0 - brow_x1) * t, brow_y - brow_arch * std::sin(pi * t)};
}

std::vector<Keypoint> along(Curve c, int n, bool closed, double t0 = 0.0, double t1 = 1.0) {
  std::vector<Keypoint> out;
  const int steps = closed ? n : n - 1;
  for (int k = 0; k < n; ++k) out.push_back({c, t0 + (t1 - t0) * double(k) / double(std::max(steps, 1))});
  return out;
}

void append(std::vector<Keypoint>& out, const std::vector<Keypoint>& more) { out.insert(out.end(), more.begin(), more.end()); }

}  // namespace

Point face_point(const Keypoint& k) {
  const double t = k.t;
  switch (k.curve) {
    case Curve::jaw: return {-head_rx * std::cos(pi * t), head_ry * std::sin(pi * t)};
    case Curve::brow_left_upper: return brow_upper(-brow_x0, t);
    case Curve::brow_right_upper: return brow_upper(brow_x1, t);
    case Curve::brow_left_lower: {
      auto [x, y] = brow_upper(-brow_x0, t);
      return {x, y + brow_width};
    }
    case Curve::brow_right_lower: {
      auto [x, y] = brow_upper(brow_x1, t);
      return {x, y + brow_width};
    }
    case Curve::nose_bridge: return {0.0, -0.05 + 0.10 * t};
    case Curve::nose_base: return {-0.04 + 0.08 * t, 0.075 + 0.012 * std::sin(pi * t)};
    case Curve::eye_left:
      return {-eye_x - eye_radius * std::cos(2 * pi * t), eye_y - eye_radius * std::sin(2 * pi * t)};
    case Curve::eye_right:
      return {eye_x - eye_radius * std::cos(2 * pi * t), eye_y - eye_radius * std::sin(2 * pi * t)};
    case Curve::pupil_left: return {-eye_x, eye_y};
    case Curve::pupil_right: return {eye_x, eye_y};
    case Curve::mouth_outer: return {-mouth_a * std::cos(2 * pi * t), mouth_y - mouth_b * std::sin(2 * pi * t)};
    case Curve::mouth_inner: return {-inner_a * std::cos(2 * pi * t), mouth_y - inner_b * std::sin(2 * pi * t)};
    case Curve::mouth_center: return {0.0, mouth_y};
  }
  return {0.0, 0.0};
}

std::vector<Keypoint> layout(const std::string& format) {
  std::vector<Keypoint> k;
  if (format == "p68") {
    append(k, along(Curve::jaw, 17, false));
    append(k, along(Curve::brow_left_upper, 5, false));
    append(k, along(Curve::brow_right_upper, 5, false));
    append(k, along(Curve::nose_bridge, 4, false));
    append(k, along(Curve::nose_base, 5, false));
    append(k, along(Curve::eye_left, 6, true));
    append(k, along(Curve::eye_right, 6, true));
    append(k, along(Curve::mouth_outer, 12, true));
    append(k, along(Curve::mouth_inner, 8, true));
  } else if (format == "p98") {
    append(k, along(Curve::jaw, 33, false));
    append(k, along(Curve::brow_left_upper, 5, false));
    append(k, along(Curve::brow_left_lower, 4, false, 0.8, 0.2));
    append(k, along(Curve::brow_right_upper, 5, false));
    append(k, along(Curve::brow_right_lower, 4, false, 0.8, 0.2));
    append(k, along(Curve::nose_bridge, 4, false));
    append(k, along(Curve::nose_base, 5, false));
    append(k, along(Curve::eye_left, 8, true));
    append(k, along(Curve::eye_right, 8, true));
    append(k, along(Curve::mouth_outer, 12, true));
    append(k, along(Curve::mouth_inner, 8, true));
    k.push_back({Curve::pupil_left, 0.0});
    k.push_back({Curve::pupil_right, 0.0});
  } else if (format == "p51") {
    append(k, along(Curve::jaw, 9, false));
    append(k, along(Curve::brow_left_upper, 5, false));
    append(k, along(Curve::brow_right_upper, 5, false));
    append(k, along(Curve::nose_bridge, 4, false));
    append(k, along(Curve::nose_base, 3, false));
    append(k, along(Curve::eye_left, 4, true));
    append(k, along(Curve::eye_right, 4, true));
    k.push_back({Curve::pupil_left, 0.0});
    k.push_back({Curve::pupil_right, 0.0});
    append(k, along(Curve::mouth_outer, 12, true));
    k.push_back({Curve::mouth_inner, 0.25});
    k.push_back({Curve::mouth_inner, 0.75});
    k.push_back({Curve::mouth_center, 0.0});
  } else {
    throw ConfigError("synthetic generator has no template layout for format '" + format +
                      "' (available: p51, p68, p98)");
  }
  return k;
}

}  // namespace synth

namespace {

using synth::Curve;
using synth::Keypoint;
using Point = std::pair<double, double>;
using Color = std::array<double, 3>;

struct Transform {
  double scale, cos_r, sin_r, tx, ty;

  Point apply(Point q) const {
    return {0.5 + tx + scale * (cos_r * q.first - sin_r * q.second),
            0.5 + ty + scale * (sin_r * q.first + cos_r * q.second)};
  }
  Point invert(Point p) const {
    const double x = (p.first - 0.5 - tx) / scale, y = (p.second - 0.5 - ty) / scale;
    return {cos_r * x + sin_r * y, -sin_r * x + cos_r * y};
  }
};

// Signed distances in face units (negative inside).
double ellipse_sdf(Point q, double cx, double cy, double a, double b) {
  const double x = q.first - cx, y = q.second - cy;
  const double f = std::sqrt((x * x) / (a * a) + (y * y) / (b * b));
  if (f < 1e-12) return -std::min(a, b);
  const double gx = x / (a * a * f), gy = y / (b * b * f);
  return (f - 1.0) / std::max(std::sqrt(gx * gx + gy * gy), 1e-12);
}

double segment_distance(Point q, Point a, Point b) {
  const double vx = b.first - a.first, vy = b.second - a.second;
  const double wx = q.first - a.first, wy = q.second - a.second;
  const double t = std::clamp((wx * vx + wy * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(wx - t * vx, wy - t * vy);
}

double stroke_sdf(Point q, Curve c, double t0, double t1, double half_width) {
  constexpr int segments = 16;
  double d = 1e9;
  Point prev = synth::face_point({c, t0});
  for (int i = 1; i <= segments; ++i) {
    const Point next = synth::face_point({c, t0 + (t1 - t0) * i / segments});
    d = std::min(d, segment_distance(q, prev, next));
    prev = next;
  }
  return d - half_width;
}

struct Layer {
  double sdf;
  Color color;
};

void render(Tensorf& image, const Transform& tf, const Color& background, double noise, Rng& rng) {
  const Index size = image.dim(0);
  const double px_per_unit = tf.scale * double(size);
  const double brow_half = 0.01;  // half the brow band width
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const Point q = tf.invert({(double(x) + 0.5) / double(size), (double(y) + 0.5) / double(size)});
      // Brows fill the band between the upper and lower contours.
      const Point brow_q{q.first, q.second - brow_half};
      const Layer layers[] = {
          {ellipse_sdf(q, 0, 0, 0.30, 0.36), {synth::skin_red, 0.70, 0.58}},
          {stroke_sdf(brow_q, Curve::brow_left_upper, 0, 1, brow_half), {0.25, 0.16, 0.10}},
          {stroke_sdf(brow_q, Curve::brow_right_upper, 0, 1, brow_half), {0.25, 0.16, 0.10}},
          {stroke_sdf(q, Curve::nose_bridge, 0, 1, 0.006), {0.55, 0.38, 0.30}},
          {stroke_sdf(q, Curve::nose_base, 0, 1, 0.006), {0.55, 0.38, 0.30}},
          {ellipse_sdf(q, -synth::eye_x, synth::eye_y, synth::eye_radius, synth::eye_radius),
           {synth::eye_red, 0.10, 0.15}},
          {ellipse_sdf(q, synth::eye_x, synth::eye_y, synth::eye_radius, synth::eye_radius),
           {synth::eye_red, 0.10, 0.15}},
          {ellipse_sdf(q, 0, 0.17, 0.08, 0.035), {0.70, 0.20, 0.25}},
          {ellipse_sdf(q, 0, 0.17, 0.05, 0.014), {0.30, 0.05, 0.08}},
      };
      Color c = background;
      for (const Layer& l : layers) {
        const double coverage = std::clamp(0.5 - l.sdf * px_per_unit, 0.0, 1.0);
        if (coverage <= 0.0) continue;
        for (int k = 0; k < 3; ++k) c[std::size_t(k)] += coverage * (l.color[std::size_t(k)] - c[std::size_t(k)]);
      }
      for (Index k = 0; k < 3; ++k) {
        double v = c[std::size_t(k)];
        if (noise > 0.0) v += noise * normal(rng);
        const long byte = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        image[(y * size + x) * 3 + k] = from_byte(unsigned(byte));
      }
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SynthSpec& spec) {
  if (spec.count < 0) throw UsageError("synth: count must be >= 0");
  if (spec.image_size < 8) throw UsageError("synth: image size must be >= 8");
  if (spec.formats.empty()) throw UsageError("synth: at least one format is required");
  Dataset ds;
  std::vector<std::vector<Keypoint>> layouts;
  for (const auto& f : spec.formats) {
    if (!ds.formats.contains(f)) throw ConfigError("synth: unregistered format '" + f + "'");
    layouts.push_back(synth::layout(f));
  }
  Rng rng(spec.seed);
  for (Index i = 0; i < spec.count; ++i) {
    const double scale = uniform(rng, 0.7, 1.0);
    const double angle = uniform(rng, -20.0, 20.0) * std::numbers::pi / 180.0;
    const double tx = uniform(rng, -0.1, 0.1), ty = uniform(rng, -0.1, 0.1);
    const Transform tf{scale, std::cos(angle), std::sin(angle), tx, ty};
    const Color background{uniform(rng, 0.05, 0.5), uniform(rng, 0.05, 0.5), uniform(rng, 0.05, 0.5)};

    Sample s;
    s.image = Tensorf({spec.image_size, spec.image_size, 3});
    render(s.image, tf, background, spec.noise, rng);
    for (std::size_t f = 0; f < spec.formats.size(); ++f) {
      if (spec.round_robin && std::size_t(i) % spec.formats.size() != f) continue;
      std::vector<double> coords;
      for (const Keypoint& k : layouts[f]) {
        const auto [x, y] = tf.apply(synth::face_point(k));
        coords.push_back(x);
        coords.push_back(y);
      }
      s.annotations.emplace(spec.formats[f], std::move(coords));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace efld
