#pragma once

// Deterministic synthetic radar scenes and a ground-truth-leaking pseudo
// detector for metric tests.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "dsfec/metrics.hpp"
#include "dsfec/pillar.hpp"
#include "dsfec/rng.hpp"

namespace dsfec {

struct ClassSize {
  double w;
  double l;
};

/// Typical footprint (width across, length along heading) in meters.
inline ClassSize typical_size(ClassLabel c) {
  switch (c) {
    case ClassLabel::car: return {1.8, 4.5};
    case ClassLabel::truck: return {2.5, 8.0};
    case ClassLabel::pedestrian: return {0.7, 0.7};
    case ClassLabel::bicycle: return {0.6, 1.8};
  }
  return {1.0, 1.0};
}

struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<int, 4> objects = {4, 1, 2, 1};  // per ClassLabel
  int min_points_per_object = 5;
  int max_points_per_object = 30;
  int clutter_points = 50;
  double size_jitter = 0.1;  // relative, uniform in [-j, j]
  /// Minimum distance between object centers.
  double min_separation = 15.0;
  int feature_count = 2;
  GridSpec grid;

  void validate() const {
    grid.validate();
    for (int n : objects)
      if (n < 0) throw ConfigError("scene: object counts must be >= 0");
    if (min_points_per_object < 0 || max_points_per_object < min_points_per_object)
      throw ConfigError("scene: need 0 <= min_points_per_object <= max_points_per_object");
    if (clutter_points < 0) throw ConfigError("scene: clutter_points must be >= 0");
    if (!(size_jitter >= 0.0 && size_jitter < 1.0)) throw ConfigError("scene: size_jitter must lie in [0,1)");
    if (!(min_separation >= 0.0)) throw ConfigError("scene: min_separation must be >= 0");
    if (feature_count < 0) throw ConfigError("scene: feature_count must be >= 0");
  }
};

struct Scene {
  RadarFrame frame;
  std::vector<GroundTruthBox> boxes;
};

namespace detail {

/// Largest float strictly below `hi` when rounding lands on it.
inline float below_bound(double v, double hi) {
  float f = static_cast<float>(v);
  if (f >= hi) f = std::nextafter(static_cast<float>(hi), -std::numeric_limits<float>::infinity());
  return f;
}

inline std::vector<float> draw_features(SplitMix64& rng, int n) {
  std::vector<float> f(static_cast<std::size_t>(n));
  for (auto& v : f) v = static_cast<float>(rng.normal());
  return f;
}

}  // namespace detail

/// Boxes are placed uniformly with their whole footprint inside the grid and
/// centers at least `min_separation` apart; object points are uniform inside
/// the footprint, clutter uniform over the grid volume.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const auto& g = spec.grid;
  SplitMix64 place(derive_seed(spec.seed, 1));
  SplitMix64 points(derive_seed(spec.seed, 2));
  SplitMix64 clutter(derive_seed(spec.seed, 3));
  Scene scene;
  scene.frame.feature_count = spec.feature_count;

  for (ClassLabel label : kClasses) {
    for (int k = 0; k < spec.objects[static_cast<std::size_t>(label)]; ++k) {
      const auto base = typical_size(label);
      GroundTruthBox box;
      box.class_label = label;
      box.w = base.w * (1.0 + place.uniform(-spec.size_jitter, spec.size_jitter));
      box.l = base.l * (1.0 + place.uniform(-spec.size_jitter, spec.size_jitter));
      box.theta = std::numbers::pi - 2.0 * std::numbers::pi * place.uniform();  // (-pi, pi]
      const double margin = 0.5 * std::hypot(box.w, box.l);
      if (g.x_max - g.x_min <= 2 * margin || g.y_max - g.y_min <= 2 * margin)
        throw ConfigError("scene: grid too small for a " + to_string(label));
      bool placed = false;
      for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
        box.cx = place.uniform(g.x_min + margin, g.x_max - margin);
        box.cy = place.uniform(g.y_min + margin, g.y_max - margin);
        placed = true;
        for (const auto& other : scene.boxes)
          if (std::hypot(box.cx - other.cx, box.cy - other.cy) < spec.min_separation) {
            placed = false;
            break;
          }
      }
      if (!placed)
        throw ConfigError("scene: cannot place " + std::to_string(scene.boxes.size() + 1) + " objects " +
                          std::to_string(spec.min_separation) + " m apart in the grid");
      scene.boxes.push_back(box);
    }
  }

  for (const auto& box : scene.boxes) {
    const auto n = spec.min_points_per_object +
                   static_cast<int>(points.below(
                       static_cast<std::uint64_t>(spec.max_points_per_object - spec.min_points_per_object + 1)));
    const double c = std::cos(box.theta), s = std::sin(box.theta);
    for (int i = 0; i < n; ++i) {
      const double u = points.uniform(-0.5 * box.l, 0.5 * box.l);
      const double v = points.uniform(-0.5 * box.w, 0.5 * box.w);
      RadarPoint p;
      p.x = static_cast<float>(box.cx + u * c - v * s);
      p.y = static_cast<float>(box.cy + u * s + v * c);
      p.z = static_cast<float>(points.uniform(g.z_min, g.z_max));
      p.features = detail::draw_features(points, spec.feature_count);
      scene.frame.points.push_back(std::move(p));
    }
  }

  for (int i = 0; i < spec.clutter_points; ++i) {
    RadarPoint p;
    p.x = detail::below_bound(clutter.uniform(g.x_min, g.x_max), g.x_max);
    p.y = detail::below_bound(clutter.uniform(g.y_min, g.y_max), g.y_max);
    p.z = static_cast<float>(clutter.uniform(g.z_min, g.z_max));
    p.features = detail::draw_features(clutter, spec.feature_count);
    scene.frame.points.push_back(std::move(p));
  }
  return scene;
}

enum class ScoreModel {
  constant,  // every detection scores 1
  ranked,    // 1, 1/2, 1/3, ... in GT order
};

struct OracleOptions {
  double noise = 0.0;  // center offset, meters
  std::uint64_t seed = 0;
  ScoreModel score = ScoreModel::constant;
};

/// Copies each GT box, shifting its center by exactly `noise` meters in a
/// seeded random direction. For metric validation only.
inline std::vector<Detection> oracle_detector(const std::vector<GroundTruthBox>& gts, const OracleOptions& opt) {
  if (!(opt.noise >= 0.0)) throw ConfigError("oracle: noise must be >= 0");
  SplitMix64 rng(derive_seed(opt.seed, 4));
  std::vector<Detection> out;
  out.reserve(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto& g = gts[i];
    const double dir = 2.0 * std::numbers::pi * rng.uniform();
    Detection d;
    d.cx = g.cx + opt.noise * std::cos(dir);
    d.cy = g.cy + opt.noise * std::sin(dir);
    d.w = g.w;
    d.l = g.l;
    d.theta = g.theta;
    d.class_label = g.class_label;
    d.score = opt.score == ScoreModel::constant ? 1.0 : 1.0 / static_cast<double>(i + 1);
    out.push_back(d);
  }
  return out;
}

inline std::string synth_frame_id(int index) { return "frame_" + std::to_string(index); }

/// Frame `index` of a seeded sequence.
inline Scene generate_frame(SceneSpec spec, int index) {
  spec.seed = derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(index));
  return generate_scene(spec);
}

}  // namespace dsfec
