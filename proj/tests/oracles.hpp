#pragma once

// Independent reference implementations used as test oracles. Written for
// clarity, not speed: direct indexing in the stored weight layout, double
// accumulation, no repacking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <vector>

#include "dsfec/dsfec.hpp"

namespace oracle {

using dsfec::FeatureMap;

inline FeatureMap random_map(dsfec::SplitMix64& rng, int h, int w, int c, double lo = -1.0, double hi = 1.0) {
  FeatureMap m(h, w, c);
  for (auto& v : m.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return m;
}

inline std::vector<float> random_values(dsfec::SplitMix64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

/// Output size and leading pad for "same" padding: out = ceil(in / s), total
/// pad = max((out-1)s + k - in, 0), extra pad at the end.
inline std::pair<int, int> same_geometry(int in, int k, int s) {
  const int out = (in + s - 1) / s;
  const int total = std::max((out - 1) * s + k - in, 0);
  return {out, total / 2};
}

struct Counter {
  std::int64_t macs = 0;
  std::int64_t elementwise = 0;
};

/// Direct convolution over weights [out][in][kh][kw]. Every kernel tap is
/// counted as one MAC, padded taps included (they multiply a zero).
inline FeatureMap conv(const FeatureMap& x, const std::vector<float>& w, const std::optional<std::vector<float>>& b,
                       int cout, int k, int stride, Counter* counter = nullptr) {
  const int cin = x.channels();
  const auto [ho, pt] = same_geometry(x.height(), k, stride);
  const auto [wo, pl] = same_geometry(x.width(), k, stride);
  FeatureMap out(ho, wo, cout);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = b ? (*b)[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int iy = oy * stride + u - pt, ix = ox * stride + v - pl;
              const bool inside = iy >= 0 && iy < x.height() && ix >= 0 && ix < x.width();
              const double xv = inside ? x.at(iy, ix, ci) : 0.0;
              acc += xv * w[((static_cast<std::size_t>(co) * cin + ci) * k + u) * k + v];
              if (counter) ++counter->macs;
            }
        out.at(oy, ox, co) = static_cast<float>(acc);
      }
  return out;
}

inline FeatureMap depthwise(const FeatureMap& x, const std::vector<float>& w, int k, int stride,
                            Counter* counter = nullptr) {
  const int c = x.channels();
  const auto [ho, pt] = same_geometry(x.height(), k, stride);
  const auto [wo, pl] = same_geometry(x.width(), k, stride);
  FeatureMap out(ho, wo, c);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int u = 0; u < k; ++u)
          for (int v = 0; v < k; ++v) {
            const int iy = oy * stride + u - pt, ix = ox * stride + v - pl;
            const bool inside = iy >= 0 && iy < x.height() && ix >= 0 && ix < x.width();
            acc += (inside ? x.at(iy, ix, ch) : 0.0) * w[(static_cast<std::size_t>(ch) * k + u) * k + v];
            if (counter) ++counter->macs;
          }
        out.at(oy, ox, ch) = static_cast<float>(acc);
      }
  return out;
}

/// 1x1 map, weights [out][in].
inline FeatureMap pointwise(const FeatureMap& x, const std::vector<float>& w,
                            const std::optional<std::vector<float>>& b, int cout, Counter* counter = nullptr) {
  const int cin = x.channels();
  FeatureMap out(x.height(), x.width(), cout);
  for (int y = 0; y < x.height(); ++y)
    for (int xx = 0; xx < x.width(); ++xx)
      for (int co = 0; co < cout; ++co) {
        double acc = b ? (*b)[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          acc += static_cast<double>(x.at(y, xx, ci)) * w[static_cast<std::size_t>(co) * cin + ci];
          if (counter) ++counter->macs;
        }
        out.at(y, xx, co) = static_cast<float>(acc);
      }
  return out;
}

inline double activation(double x, const dsfec::Activation& a) {
  using K = dsfec::Activation::Kind;
  switch (a.kind) {
    case K::identity: return x;
    case K::relu: return x > 0 ? x : 0.0;
    case K::leaky_relu: return x > 0 ? x : a.slope * x;
    case K::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case K::swish: return x / (1.0 + std::exp(-x));
    case K::mish: return x * std::tanh(std::log1p(std::exp(x)));
  }
  return x;
}

/// Runs every node of `g` naively from `input` (the graph-input tensor),
/// counting MACs and elementwise ops. Scatter nodes are not supported.
struct Execution {
  std::vector<FeatureMap> outputs;
  Counter total;
  std::vector<Counter> per_node;
};

inline Execution execute(const dsfec::LayerGraph& g, const dsfec::WeightStore& ws, const FeatureMap& input) {
  using dsfec::NodeKind;
  Execution ex;
  for (const auto& n : g.nodes) {
    auto in = [&](std::size_t i) -> const FeatureMap& {
      const int idx = n.inputs.at(i);
      return idx == dsfec::kGraphInput ? input : ex.outputs.at(static_cast<std::size_t>(idx));
    };
    const FeatureMap& x = in(0);
    Counter c;
    std::optional<std::vector<float>> bias;
    if (n.bias) bias = ws.get(n.name + ".bias").values;
    FeatureMap y;
    switch (n.kind) {
      case NodeKind::conv:
        y = conv(x, ws.get(n.name + ".weight").values, bias, n.out_channels, n.kernel, n.stride, &c);
        break;
      case NodeKind::depthwise:
        y = depthwise(x, ws.get(n.name + ".weight").values, n.kernel, n.stride, &c);
        break;
      case NodeKind::pointwise:
      case NodeKind::point_linear:
      case NodeKind::pillar_linear:
        y = pointwise(x, ws.get(n.name + ".weight").values, bias, n.out_channels, &c);
        break;
      case NodeKind::batch_norm: {
        const auto& ga = ws.get(n.name + ".gamma").values;
        const auto& be = ws.get(n.name + ".beta").values;
        const auto& mu = ws.get(n.name + ".running_mean").values;
        const auto& var = ws.get(n.name + ".running_var").values;
        y = x;
        for (int r = 0; r < x.height(); ++r)
          for (int q = 0; q < x.width(); ++q)
            for (int ch = 0; ch < x.channels(); ++ch) {
              y.at(r, q, ch) = static_cast<float>(ga[ch] * (x.at(r, q, ch) - mu[ch]) / std::sqrt(var[ch] + 1e-3) +
                                                  be[ch]);
              ++c.elementwise;
            }
        break;
      }
      case NodeKind::activation:
        y = x;
        for (auto& v : y.data()) {
          v = static_cast<float>(activation(v, n.activation));
          ++c.elementwise;
        }
        break;
      case NodeKind::add: {
        const FeatureMap& z = in(1);
        y = x;
        for (std::size_t i = 0; i < y.size(); ++i) {
          y.data()[i] = x.data()[i] + z.data()[i];
          ++c.elementwise;
        }
        break;
      }
      case NodeKind::point_max:
        y = FeatureMap(x.height(), 1, x.channels());
        for (int r = 0; r < x.height(); ++r)
          for (int ch = 0; ch < x.channels(); ++ch) {
            float m = x.at(r, 0, ch);
            for (int q = 0; q < x.width(); ++q) {
              m = std::max(m, x.at(r, q, ch));
              ++c.elementwise;
            }
            y.at(r, 0, ch) = m;
          }
        break;
      case NodeKind::scatter:
        throw std::logic_error("oracle::execute: scatter not supported");
    }
    ex.total.macs += c.macs;
    ex.total.elementwise += c.elementwise;
    ex.per_node.push_back(c);
    ex.outputs.push_back(std::move(y));
  }
  return ex;
}

/// Random shape-consistent graph over an h x w x c input mixing every dense
/// node kind plus the per-point kinds.
inline dsfec::LayerGraph random_graph(dsfec::SplitMix64& rng, int h, int w, int c) {
  using dsfec::LayerNode;
  using dsfec::NodeKind;
  dsfec::LayerGraph g;
  g.input_shape = {h, w, c};
  auto channels = [&](int idx) { return idx == dsfec::kGraphInput ? c : g.nodes[static_cast<std::size_t>(idx)].out_channels; };
  int cur = dsfec::kGraphInput;
  const int count = 3 + static_cast<int>(rng.below(9));
  for (int i = 0; i < count; ++i) {
    LayerNode n;
    n.name = "n" + std::to_string(i);
    n.inputs = {cur};
    n.in_channels = channels(cur);
    n.out_channels = n.in_channels;
    const auto pick = rng.below(8);
    switch (pick) {
      case 0:
      case 1:
        n.kind = NodeKind::conv;
        n.kernel = static_cast<int>(1 + 2 * rng.below(3));
        n.stride = static_cast<int>(1 + rng.below(2));
        n.out_channels = static_cast<int>(1 + rng.below(8));
        n.bias = rng.below(2) == 0;
        break;
      case 2:
        n.kind = NodeKind::depthwise;
        n.kernel = static_cast<int>(1 + 2 * rng.below(2));
        n.stride = static_cast<int>(1 + rng.below(2));
        break;
      case 3:
        n.kind = rng.below(2) ? NodeKind::pointwise : NodeKind::point_linear;
        n.out_channels = static_cast<int>(1 + rng.below(8));
        n.bias = rng.below(2) == 0;
        break;
      case 4:
        n.kind = NodeKind::batch_norm;
        break;
      case 5: {
        n.kind = NodeKind::activation;
        const dsfec::Activation acts[] = {dsfec::Activation::relu(), dsfec::Activation::leaky_relu(0.1f),
                                          dsfec::Activation::swish(), dsfec::Activation::sigmoid(),
                                          dsfec::Activation::mish()};
        n.activation = acts[rng.below(5)];
        break;
      }
      case 6: {
        // add with the latest earlier node of identical shape, else with itself
        n.kind = NodeKind::add;
        const dsfec::Shape want = cur == dsfec::kGraphInput ? g.input_shape : g.nodes[static_cast<std::size_t>(cur)].out_shape;
        int other = cur;
        for (int j = cur - 1; j >= 0; --j)
          if (g.nodes[static_cast<std::size_t>(j)].out_shape == want) {
            other = j;
            break;
          }
        n.inputs = {cur, other};
        break;
      }
      default:
        n.kind = NodeKind::point_max;
        break;
    }
    g.nodes.push_back(std::move(n));
    dsfec::infer_shapes(g, {h, w, h, w});
    cur = static_cast<int>(g.nodes.size()) - 1;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Rotated boxes

/// Fraction of box a covered by box b, by stratified jittered sampling in a's
/// local frame; IoU follows from the areas.
inline double monte_carlo_iou(const dsfec::Detection& a, const dsfec::Detection& b, int samples,
                              std::uint64_t seed) {
  dsfec::SplitMix64 rng(seed);
  const int side = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(samples)))));
  const double ca = std::cos(a.theta), sa = std::sin(a.theta);
  const double cb = std::cos(b.theta), sb = std::sin(b.theta);
  std::int64_t hits = 0;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const double u = ((i + rng.uniform()) / side - 0.5) * a.l;
      const double v = ((j + rng.uniform()) / side - 0.5) * a.w;
      const double x = a.cx + u * ca - v * sa;
      const double y = a.cy + u * sa + v * ca;
      const double dx = x - b.cx, dy = y - b.cy;
      const double ub = dx * cb + dy * sb;
      const double vb = -dx * sb + dy * cb;
      if (std::fabs(ub) <= 0.5 * b.l && std::fabs(vb) <= 0.5 * b.w) ++hits;
    }
  const double area_a = a.w * a.l, area_b = b.w * b.l;
  const double inter = area_a * static_cast<double>(hits) / (static_cast<double>(side) * side);
  return inter / (area_a + area_b - inter);
}

/// Plain greedy suppression from scratch: repeatedly take the best remaining
/// box under the documented ranking, drop everything it overlaps.
inline std::vector<dsfec::Detection> brute_force_nms(const std::vector<dsfec::Detection>& dets, double thr,
                                                     bool per_class) {
  std::vector<std::size_t> remaining(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) remaining[i] = i;
  auto better = [&](std::size_t i, std::size_t j) {
    const auto &a = dets[i], &b = dets[j];
    if (a.score != b.score) return a.score > b.score;
    if (a.cx != b.cx) return a.cx < b.cx;
    if (a.cy != b.cy) return a.cy < b.cy;
    return i < j;
  };
  std::vector<dsfec::Detection> kept;
  while (!remaining.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < remaining.size(); ++k)
      if (better(remaining[k], remaining[best])) best = k;
    const std::size_t top = remaining[best];
    kept.push_back(dets[top]);
    std::vector<std::size_t> next;
    for (std::size_t idx : remaining) {
      if (idx == top) continue;
      const bool comparable = !per_class || dets[idx].class_label == dets[top].class_label;
      if (comparable && dsfec::rotated_iou(dets[top], dets[idx]) >= thr) continue;
      next.push_back(idx);
    }
    remaining = std::move(next);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Metrics

/// Exact area under the interpolated precision envelope: integral over
/// recall in [0,1] of max{precision at recall >= r}.
inline double exact_interpolated_ap(const std::vector<bool>& tp_in_order, std::size_t n_gt) {
  if (n_gt == 0) return tp_in_order.empty() ? 1.0 : 0.0;
  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  std::size_t tp = 0;
  for (std::size_t i = 0; i < tp_in_order.size(); ++i) {
    tp += tp_in_order[i] ? 1 : 0;
    pts.push_back({static_cast<double>(tp) / static_cast<double>(n_gt), static_cast<double>(tp) / (i + 1.0)});
  }
  double area = 0.0, prev_recall = 0.0;
  // Envelope is a step function: for r in (r_{k-1}, r_k] take max precision over points with recall >= r.
  std::vector<double> recalls;
  for (const auto& p : pts) recalls.push_back(p.first);
  std::sort(recalls.begin(), recalls.end());
  recalls.erase(std::unique(recalls.begin(), recalls.end()), recalls.end());
  for (double r : recalls) {
    double best = 0.0;
    for (const auto& p : pts)
      if (p.first >= r) best = std::max(best, p.second);
    area += (r - prev_recall) * best;
    prev_recall = r;
  }
  return area;
}

/// Optimal-free reference matching: processes detections in descending score
/// order with an explicit scan over every GT (same rule, independent code).
inline std::vector<bool> reference_tp_flags(const std::vector<dsfec::Detection>& dets,
                                            const std::vector<dsfec::GroundTruthBox>& gts, dsfec::ClassLabel label,
                                            double thr) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_label == label) order.push_back({-dets[i].score, i});
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<bool> used(gts.size(), false), flags;
  for (const auto& [neg, i] : order) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_label != label) continue;
      const double d = std::sqrt((dets[i].cx - gts[g].cx) * (dets[i].cx - gts[g].cx) +
                                 (dets[i].cy - gts[g].cy) * (dets[i].cy - gts[g].cy));
      if (d <= thr && (best < 0 || d < best_d)) {
        best = static_cast<int>(g);
        best_d = d;
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    flags.push_back(best >= 0);
  }
  return flags;
}

/// Independent multi-frame AP: per-frame reference matching, then a global
/// score sort and the exact area under the interpolated PR curve. Scores in
/// these cases are distinct across frames.
inline double multi_frame_map(const std::vector<dsfec::FrameDetections>& dets,
                              const std::vector<dsfec::FrameGroundTruth>& gts, dsfec::ClassLabel label,
                              const std::vector<double>& thresholds) {
  double sum = 0.0;
  for (double t : thresholds) {
    std::vector<std::pair<double, bool>> all;
    std::size_t n_gt = 0;
    for (std::size_t f = 0; f < gts.size(); ++f) {
      for (const auto& b : gts[f].boxes) n_gt += b.class_label == label;
      const auto flags = reference_tp_flags(dets[f].detections, gts[f].boxes, label, t);
      std::vector<double> scores;
      for (const auto& d : dets[f].detections)
        if (d.class_label == label) scores.push_back(d.score);
      std::stable_sort(scores.begin(), scores.end(), std::greater<>());
      for (std::size_t i = 0; i < flags.size(); ++i) all.push_back({scores[i], flags[i]});
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<bool> flags;
    for (const auto& [s, tp] : all) flags.push_back(tp);
    sum += exact_interpolated_ap(flags, n_gt);
  }
  return sum / double(thresholds.size());
}


}  // namespace oracle
