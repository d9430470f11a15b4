#pragma once

// Center-distance detection metrics: greedy matching in score order, 101-point
// interpolated AP per distance threshold, mAP over thresholds. No min-recall /
// min-precision truncation is applied.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsfec/error.hpp"
#include "dsfec/postprocess.hpp"

namespace dsfec {

struct GroundTruthBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double l = 1.0;
  double theta = 0.0;
  ClassLabel class_label = ClassLabel::car;

  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct FrameGroundTruth {
  std::string frame_id;
  std::vector<GroundTruthBox> boxes;
};

struct FrameDetections {
  std::string frame_id;
  std::vector<Detection> detections;
};

inline const std::vector<double>& default_distance_thresholds() {
  static const std::vector<double> t = {0.5, 1.0, 2.0, 4.0};
  return t;
}

struct Match {
  std::size_t detection = 0;          // index into the input detections
  std::optional<std::size_t> gt;      // index into the input ground truth
  double score = 0.0;
  double distance = 0.0;              // to the matched GT, if any
};

/// Indices of detections in processing order: score descending, input order
/// on ties.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

/// Greedy one-to-one matching of `label` detections to `label` GTs. Each
/// detection, highest score first, takes the nearest still-unmatched GT within
/// `distance_threshold` (ties go to the earlier GT). Result is in processing
/// order; other classes are skipped.
inline std::vector<Match> match_detections(const std::vector<Detection>& dets,
                                           const std::vector<GroundTruthBox>& gts, ClassLabel label,
                                           double distance_threshold) {
  if (!(distance_threshold > 0.0)) throw EvalError("match: distance threshold must be positive");
  std::vector<bool> taken(gts.size(), false);
  std::vector<Match> out;
  for (std::size_t i : score_order(dets)) {
    const auto& d = dets[i];
    if (d.class_label != label) continue;
    Match m{i, std::nullopt, d.score, 0.0};
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_label != label) continue;
      const double dist = std::hypot(d.cx - gts[g].cx, d.cy - gts[g].cy);
      if (dist <= distance_threshold && (!m.gt || dist < best)) {
        m.gt = g;
        best = dist;
      }
    }
    if (m.gt) {
      taken[*m.gt] = true;
      m.distance = best;
    }
    out.push_back(m);
  }
  return out;
}

/// 101-point interpolated AP from true-positive flags listed in descending
/// score order. With no ground truth: 0 if anything was detected, otherwise 1
/// (see `ap_undefined`).
inline double average_precision(const std::vector<bool>& is_tp, std::size_t n_ground_truth) {
  if (n_ground_truth == 0) return is_tp.empty() ? 1.0 : 0.0;
  // best_precision[k] = max precision over operating points with recall >= k/100.
  std::vector<double> best(101, 0.0);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    // recall = tp / n >= k / 100  <=>  100 tp >= k n
    for (std::size_t k = 0; k <= 100 && 100 * tp >= k * n_ground_truth; ++k)
      best[k] = std::max(best[k], precision);
  }
  double sum = 0.0;
  for (double p : best) sum += p;
  return sum / 101.0;
}

inline bool ap_undefined(std::size_t n_detections, std::size_t n_ground_truth) {
  return n_detections == 0 && n_ground_truth == 0;
}

struct ClassEval {
  ClassLabel label = ClassLabel::car;
  std::vector<double> ap;  // per threshold
  double mean_ap = 0.0;
  std::size_t n_ground_truth = 0;
  std::size_t n_detections = 0;
  bool undefined = false;  // no GT and no detections; AP reported as 1
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<ClassEval> classes;  // one per ClassLabel, in enum order
  double car_map = 0.0;
  double car_ap4 = 0.0;  // AP at the 4 m threshold, when evaluated

  const ClassEval& of(ClassLabel c) const { return classes[static_cast<std::size_t>(c)]; }
  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline bool operator==(const ClassEval& a, const ClassEval& b) {
  return a.label == b.label && a.ap == b.ap && a.mean_ap == b.mean_ap && a.n_ground_truth == b.n_ground_truth &&
         a.n_detections == b.n_detections && a.undefined == b.undefined;
}

/// Frames are processed in frame-id order, so the result does not depend on
/// the order frames are listed in. Detection frames must all exist in the
/// ground truth; GT frames without detections count as empty.
inline EvalResult evaluate(const std::vector<FrameDetections>& dets, const std::vector<FrameGroundTruth>& gts,
                           const std::vector<double>& thresholds = default_distance_thresholds()) {
  if (thresholds.empty()) throw EvalError("evaluate: no distance thresholds");
  for (double t : thresholds)
    if (!(t > 0.0)) throw EvalError("evaluate: distance thresholds must be positive");

  std::map<std::string, const FrameGroundTruth*> gt_by_id;
  std::vector<std::string> duplicates;
  for (const auto& f : gts)
    if (!gt_by_id.emplace(f.frame_id, &f).second) duplicates.push_back(f.frame_id);
  std::map<std::string, std::vector<Detection>> det_by_id;
  std::set<std::string> unknown;
  for (const auto& f : dets) {
    if (!gt_by_id.count(f.frame_id)) unknown.insert(f.frame_id);
    auto& v = det_by_id[f.frame_id];
    v.insert(v.end(), f.detections.begin(), f.detections.end());
  }
  if (!duplicates.empty() || !unknown.empty()) {
    std::string msg = "frame ids do not align:";
    for (const auto& id : duplicates) msg += " duplicate ground-truth frame '" + id + "';";
    for (const auto& id : unknown) msg += " detections for unknown frame '" + id + "';";
    msg.pop_back();
    throw EvalError(msg);
  }

  EvalResult result;
  result.thresholds = thresholds;
  for (ClassLabel label : kClasses) {
    ClassEval ce;
    ce.label = label;
    for (const auto& [id, f] : gt_by_id)
      for (const auto& b : f->boxes)
        if (b.class_label == label) ++ce.n_ground_truth;
    for (double t : thresholds) {
      // (score, frame rank, processing rank, tp) for every detection of the class.
      struct Entry {
        double score;
        std::size_t frame;
        std::size_t rank;
        bool tp;
      };
      std::vector<Entry> entries;
      std::size_t frame_rank = 0;
      for (const auto& [id, f] : gt_by_id) {
        auto it = det_by_id.find(id);
        if (it != det_by_id.end()) {
          const auto matches = match_detections(it->second, f->boxes, label, t);
          for (std::size_t k = 0; k < matches.size(); ++k)
            entries.push_back({matches[k].score, frame_rank, k, matches[k].gt.has_value()});
        }
        ++frame_rank;
      }
      std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.rank < b.rank;
      });
      std::vector<bool> flags;
      flags.reserve(entries.size());
      for (const auto& e : entries) flags.push_back(e.tp);
      ce.n_detections = entries.size();
      ce.ap.push_back(average_precision(flags, ce.n_ground_truth));
    }
    ce.undefined = ap_undefined(ce.n_detections, ce.n_ground_truth);
    double sum = 0.0;
    for (double a : ce.ap) sum += a;
    ce.mean_ap = sum / static_cast<double>(ce.ap.size());
    result.classes.push_back(std::move(ce));
  }
  const auto& car = result.of(ClassLabel::car);
  result.car_map = car.mean_ap;
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (thresholds[i] == 4.0) result.car_ap4 = car.ap[i];
  return result;
}

// ---------------------------------------------------------------------------
// JSON I/O. GT file: [{frame_id, boxes: [{cx, cy, w, l, theta, class}]}].
// Detections file: [{cx, cy, w, l, theta, class, score, frame_id}].

namespace detail {

inline std::string frame_id_string(const nlohmann::json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

inline double number_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) throw EvalError(where + ": missing or non-numeric '" + key + "'");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw EvalError(where + ": non-finite '" + key + "'");
  return v;
}

inline ClassLabel class_field(const nlohmann::json& obj, const std::string& where) {
  auto it = obj.find("class");
  if (it == obj.end() || !it->is_string()) throw EvalError(where + ": missing 'class'");
  auto c = parse_class(it->get<std::string>());
  if (!c) throw EvalError(where + ": unknown class '" + it->get<std::string>() + "'");
  return *c;
}

inline nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw EvalError(std::string("cannot open ") + what + " file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw EvalError(std::string(what) + " file '" + path + "': " + e.what());
  }
}

}  // namespace detail

inline std::vector<FrameGroundTruth> ground_truth_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw EvalError("ground truth: expected a JSON array of frames");
  std::vector<FrameGroundTruth> frames;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& f = j[i];
    const std::string where = "ground truth frame " + std::to_string(i);
    if (!f.is_object() || !f.contains("frame_id") || !f.contains("boxes") || !f["boxes"].is_array())
      throw EvalError(where + ": expected {frame_id, boxes}");
    FrameGroundTruth fg;
    fg.frame_id = detail::frame_id_string(f["frame_id"]);
    for (std::size_t b = 0; b < f["boxes"].size(); ++b) {
      const auto& o = f["boxes"][b];
      const std::string w = where + " box " + std::to_string(b);
      GroundTruthBox g{detail::number_field(o, "cx", w), detail::number_field(o, "cy", w),
                       detail::number_field(o, "w", w),  detail::number_field(o, "l", w),
                       detail::number_field(o, "theta", w), detail::class_field(o, w)};
      if (!(g.w > 0.0 && g.l > 0.0)) throw EvalError(w + ": box sizes must be positive");
      fg.boxes.push_back(g);
    }
    frames.push_back(std::move(fg));
  }
  return frames;
}

inline nlohmann::json ground_truth_to_json(const std::vector<FrameGroundTruth>& frames) {
  auto arr = nlohmann::json::array();
  for (const auto& f : frames) {
    auto boxes = nlohmann::json::array();
    for (const auto& b : f.boxes)
      boxes.push_back({{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"l", b.l}, {"theta", b.theta},
                       {"class", to_string(b.class_label)}});
    arr.push_back({{"frame_id", f.frame_id}, {"boxes", std::move(boxes)}});
  }
  return arr;
}

/// Detections lacking a frame_id are accepted only when `default_frame` is
/// given (a single-frame evaluation).
inline std::vector<FrameDetections> detections_from_json(const nlohmann::json& j,
                                                         const std::optional<std::string>& default_frame = {}) {
  if (!j.is_array()) throw EvalError("detections: expected a JSON array");
  std::map<std::string, std::size_t> slot;
  std::vector<FrameDetections> frames;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& o = j[i];
    const std::string where = "detection " + std::to_string(i);
    if (!o.is_object()) throw EvalError(where + ": expected an object");
    std::string id;
    if (o.contains("frame_id"))
      id = detail::frame_id_string(o["frame_id"]);
    else if (default_frame)
      id = *default_frame;
    else
      throw EvalError(where + ": missing 'frame_id'");
    Detection d{detail::number_field(o, "cx", where), detail::number_field(o, "cy", where),
                detail::number_field(o, "w", where),  detail::number_field(o, "l", where),
                detail::number_field(o, "theta", where), detail::class_field(o, where),
                detail::number_field(o, "score", where)};
    auto [it, fresh] = slot.emplace(id, frames.size());
    if (fresh) frames.push_back({id, {}});
    frames[it->second].detections.push_back(d);
  }
  return frames;
}

inline nlohmann::json detections_to_json(const std::vector<FrameDetections>& frames) {
  auto arr = nlohmann::json::array();
  for (const auto& f : frames)
    for (auto& j : detections_to_json(f.detections, f.frame_id)) arr.push_back(std::move(j));
  return arr;
}

inline std::vector<FrameGroundTruth> read_ground_truth(const std::string& path) {
  return ground_truth_from_json(detail::read_json_file(path, "ground truth"));
}

inline std::vector<FrameDetections> read_detections(const std::string& path,
                                                    const std::optional<std::string>& default_frame = {}) {
  return detections_from_json(detail::read_json_file(path, "detections"), default_frame);
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& c : r.classes) {
    nlohmann::json ap = nlohmann::json::object();
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
      char key[32];
      std::snprintf(key, sizeof key, "%g", r.thresholds[i]);
      ap[key] = c.ap[i];
    }
    classes[to_string(c.label)] = {{"ap", ap},
                                   {"mAP", c.mean_ap},
                                   {"n_ground_truth", c.n_ground_truth},
                                   {"n_detections", c.n_detections},
                                   {"undefined", c.undefined}};
  }
  return {{"convention", "101-point interpolated AP, center-distance matching, no recall/precision truncation"},
          {"thresholds_m", r.thresholds},
          {"classes", classes},
          {"car_mAP", r.car_map},
          {"car_AP@4", r.car_ap4}};
}

inline std::string eval_to_text(const EvalResult& r) {
  std::string out = "# 101-point interpolated AP, center-distance matching, no recall/precision truncation\n";
  char buf[64];
  out += "class       ";
  for (double t : r.thresholds) {
    std::snprintf(buf, sizeof buf, "  AP@%-5g", t);
    out += buf;
  }
  out += "     mAP     GT    det\n";
  for (const auto& c : r.classes) {
    std::snprintf(buf, sizeof buf, "%-12s", to_string(c.label).c_str());
    out += buf;
    for (double a : c.ap) {
      std::snprintf(buf, sizeof buf, "  %7.4f", a);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  %7.4f %6zu %6zu%s\n", c.mean_ap, c.n_ground_truth, c.n_detections,
                  c.undefined ? "  (no GT, no detections)" : "");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "Car mAP %.4f  AP@4 %.4f\n", r.car_map, r.car_ap4);
  out += buf;
  return out;
}

}  // namespace dsfec
