#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsfec/error.hpp"

namespace dsfec {

enum class ClassLabel { car, truck, pedestrian, bicycle };

constexpr std::array<ClassLabel, 4> kClasses = {ClassLabel::car, ClassLabel::truck, ClassLabel::pedestrian,
                                                ClassLabel::bicycle};

inline std::string to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::car: return "Car";
    case ClassLabel::truck: return "Truck";
    case ClassLabel::pedestrian: return "Pedestrian";
    case ClassLabel::bicycle: return "Bicycle";
  }
  return "?";
}

inline std::optional<ClassLabel> parse_class(const std::string& s) {
  for (auto c : kClasses)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

/// Oriented BEV box. `l` runs along the heading, `w` across it.
struct Detection {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double l = 1.0;
  double theta = 0.0;  // (-pi, pi]
  ClassLabel class_label = ClassLabel::car;
  double score = 1.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

using Point2 = std::array<double, 2>;

/// Corners in counter-clockwise order.
inline std::array<Point2, 4> box_corners(double cx, double cy, double w, double l, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double hl = 0.5 * l, hw = 0.5 * w;
  const std::array<std::array<double, 2>, 4> local = {{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
  std::array<Point2, 4> out{};
  for (int i = 0; i < 4; ++i)
    out[i] = {cx + local[i][0] * c - local[i][1] * s, cy + local[i][0] * s + local[i][1] * c};
  return out;
}

inline double polygon_area(const std::vector<Point2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::fabs(a);
}

/// Sutherland-Hodgman: clips `subject` against the convex CCW polygon `clip`.
inline std::vector<Point2> clip_convex(std::vector<Point2> subject, const std::vector<Point2>& clip,
                                       double tolerance) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point2 a = clip[e];
    const Point2 b = clip[(e + 1) % clip.size()];
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    auto side = [&](const Point2& p) { return ex * (p[1] - a[1]) - ey * (p[0] - a[0]); };
    std::vector<Point2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point2& p = subject[i];
      const Point2& q = subject[(i + 1) % subject.size()];
      const double sp = side(p), sq = side(q);
      const bool pin = sp >= -tolerance, qin = sq >= -tolerance;
      if (pin) out.push_back(p);
      if (pin != qin) {
        const double t = sp / (sp - sq);
        out.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

/// Area-based IoU of two oriented rectangles; 0 when either is degenerate.
inline double rotated_iou(const Detection& a, const Detection& b) {
  const double area_a = a.w * a.l;
  const double area_b = b.w * b.l;
  if (!(area_a > 1e-12) || !(area_b > 1e-12)) return 0.0;
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb) return 0.0;
  const auto ca = box_corners(a.cx, a.cy, a.w, a.l, a.theta);
  const auto cb = box_corners(b.cx, b.cy, b.w, b.l, b.theta);
  const double scale = std::max({a.w, a.l, b.w, b.l});
  const auto inter_poly = clip_convex({ca.begin(), ca.end()}, {cb.begin(), cb.end()}, 1e-12 * scale * scale);
  const double inter = inter_poly.size() < 3 ? 0.0 : polygon_area(inter_poly);
  const double uni = area_a + area_b - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Ranking used by NMS: score descending, then lower cx, lower cy, input order.
inline std::vector<std::size_t> nms_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const auto& a = dets[i];
    const auto& b = dets[j];
    if (a.score != b.score) return a.score > b.score;
    if (a.cx != b.cx) return a.cx < b.cx;
    return a.cy < b.cy;
  });
  return order;
}

/// Greedy NMS. A box is removed when its IoU with an already kept box is
/// >= iou_threshold (same class only when per_class).
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold, bool per_class = true) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw ConfigError("nms: iou threshold must lie in (0,1]");
  const auto order = nms_order(dets);
  std::vector<bool> removed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t a = 0; a < order.size(); ++a) {
    const std::size_t i = order[a];
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const std::size_t j = order[b];
      if (removed[j]) continue;
      if (per_class && dets[j].class_label != dets[i].class_label) continue;
      if (rotated_iou(dets[i], dets[j]) >= iou_threshold) removed[j] = true;
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Detections JSON: array of {cx, cy, w, l, theta, class, score[, frame_id]}.

inline nlohmann::json detection_to_json(const Detection& d) {
  return {{"cx", d.cx}, {"cy", d.cy}, {"w", d.w}, {"l", d.l}, {"theta", d.theta},
          {"class", to_string(d.class_label)}, {"score", d.score}};
}

inline nlohmann::json detections_to_json(const std::vector<Detection>& dets,
                                         const std::optional<std::string>& frame_id = std::nullopt) {
  auto arr = nlohmann::json::array();
  for (const auto& d : dets) {
    auto j = detection_to_json(d);
    if (frame_id) j["frame_id"] = *frame_id;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace dsfec
