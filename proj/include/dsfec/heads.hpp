#pragma once

#include <cmath>
#include <numbers>
#include <variant>
#include <vector>

#include "dsfec/backbone.hpp"
#include "dsfec/config.hpp"
#include "dsfec/pillar.hpp"
#include "dsfec/postprocess.hpp"

namespace dsfec {

/// Per-cell confidence (post-sigmoid) and box regression
/// (cos, sin, dx, dy, log w, log l) for one head.
struct HeadOutput {
  HeadId head = HeadId::car;
  FeatureMap score_map;
  FeatureMap regression_map;
};

struct HeadParams {
  std::variant<DSConvParams, ResidualParams> block;
  LinearSpec score;
  LinearSpec regression;
};

inline HeadParams head_params(const LayerGraph& g, const WeightStore& w, HeadId head) {
  const std::string name = to_string(head);
  const LayerNode& score = detail::node_named(g, name + ".score");
  const LayerNode& reg = detail::node_named(g, name + ".reg");
  HeadParams p{DSConvParams{}, linear_spec(score, w), linear_spec(reg, w)};
  if (g.config.block_kind == BlockKind::dsconv)
    p.block = dsconv_params(g, w, name + ".block");
  else
    p.block = residual_params(g, w, name + ".block");
  return p;
}

/// One unit-stride block with the head's activation, then a sigmoid score
/// branch and a linear regression branch (both 1x1).
inline HeadOutput head_forward(const FeatureMap& stage_output, const HeadParams& params, const Activation& act,
                               HeadId head) {
  if (params.regression.out_features != kRegressionChannels)
    throw ConfigError("head_forward: regression branch must emit 6 channels");
  FeatureMap x = std::visit(
      [&](const auto& block) {
        using T = std::decay_t<decltype(block)>;
        if constexpr (std::is_same_v<T, DSConvParams>)
          return dsconv_block_forward(stage_output, block, 1, act);
        else
          return residual_block_forward(stage_output, block, 1, act);
      },
      params.block);
  HeadOutput out;
  out.head = head;
  out.score_map = apply_activation(pointwise_conv2d(x, params.score), Activation::sigmoid());
  out.regression_map = pointwise_conv2d(x, params.regression);
  return out;
}

inline std::vector<ClassLabel> head_classes(HeadId head) {
  switch (head) {
    case HeadId::car: return {ClassLabel::car};
    case HeadId::truck: return {ClassLabel::truck};
    case HeadId::vru: return {ClassLabel::pedestrian, ClassLabel::bicycle};
  }
  return {};
}

inline double wrap_angle(double theta) {
  // atan2 already lands in [-pi, pi]; fold -pi onto pi.
  if (theta <= -std::numbers::pi) theta += 2.0 * std::numbers::pi;
  return theta;
}

/// Every cell whose score reaches `score_threshold` becomes one detection
/// per score channel. `stage_stride` is the map's downsampling relative to
/// the BEV grid.
inline std::vector<Detection> decode_boxes(const HeadOutput& output, int stage_stride, const GridSpec& grid,
                                           double score_threshold) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw ConfigError("decode_boxes: score threshold must lie in [0,1]");
  if (stage_stride <= 0) throw ConfigError("decode_boxes: stage stride must be positive");
  const auto& scores = output.score_map;
  const auto& reg = output.regression_map;
  if (scores.height() != reg.height() || scores.width() != reg.width() || reg.channels() != kRegressionChannels)
    throw ConfigError("decode_boxes: score and regression maps disagree in shape");
  const auto classes = head_classes(output.head);
  if (static_cast<int>(classes.size()) != scores.channels())
    throw ConfigError("decode_boxes: score map has " + std::to_string(scores.channels()) + " channels, head " +
                      to_string(output.head) + " detects " + std::to_string(classes.size()) + " classes");
  const double step = grid.cell_size * stage_stride;
  constexpr double kMaxLogSize = 10.0;
  std::vector<Detection> dets;
  for (int r = 0; r < scores.height(); ++r) {
    for (int c = 0; c < scores.width(); ++c) {
      const float* rv = reg.pixel(r, c);
      for (std::size_t k = 0; k < classes.size(); ++k) {
        const double score = scores.at(r, c, static_cast<int>(k));
        if (!(score >= score_threshold)) continue;
        Detection d;
        d.cx = grid.x_min + (c + 0.5) * step + rv[2] * step;
        d.cy = grid.y_min + (r + 0.5) * step + rv[3] * step;
        d.theta = wrap_angle(std::atan2(static_cast<double>(rv[1]), static_cast<double>(rv[0])));
        d.w = std::exp(std::clamp(static_cast<double>(rv[4]), -kMaxLogSize, kMaxLogSize));
        d.l = std::exp(std::clamp(static_cast<double>(rv[5]), -kMaxLogSize, kMaxLogSize));
        d.class_label = classes[k];
        d.score = std::clamp(score, 0.0, 1.0);
        dets.push_back(d);
      }
    }
  }
  return dets;
}

}  // namespace dsfec
