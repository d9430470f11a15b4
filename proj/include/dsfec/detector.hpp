#pragma once

#include <array>
#include <string>
#include <vector>

#include "dsfec/backbone.hpp"
#include "dsfec/graph.hpp"
#include "dsfec/heads.hpp"
#include "dsfec/pillar.hpp"
#include "dsfec/postprocess.hpp"
#include "dsfec/weights.hpp"

namespace dsfec {

struct DetectOptions {
  double score_threshold = 0.05;
  double iou_threshold = 0.3;
  bool per_class_nms = true;
};

struct ForwardResult {
  PillarSet pillars;
  FeatureMap pseudo_image;
  std::array<FeatureMap, 4> stages;
  std::array<HeadOutput, 3> heads;
};

/// A configured network with its weights. Construction checks that the store
/// covers every graph parameter with the right dims.
class Detector {
 public:
  Detector(const ModelConfig& config, WeightStore weights)
      : graph_(build_graph(config)), weights_(std::move(weights)) {
    weights_.require(graph_);
    const auto& c = graph_.config;
    if (c.fec) {
      fec_ = FecWeights{layer("fec.point"), layer("fec.enhance"), layer("fec.compress")};
    } else {
      pfn_ = layer("encoder.pfn");
      pfn_bn_ = bn_params(graph_.nodes[static_cast<std::size_t>(graph_.find("encoder.pfn_bn"))], weights_);
    }
    for (HeadId h : kHeads) heads_[static_cast<int>(h)] = head_params(graph_, weights_, h);
  }

  const ModelConfig& config() const noexcept { return graph_.config; }
  const LayerGraph& graph() const noexcept { return graph_; }
  const WeightStore& weights() const noexcept { return weights_; }

  /// Pillarization, per-pillar encoder and scatter.
  FeatureMap encode(const RadarFrame& frame, PillarSet* pillars_out = nullptr) const {
    const auto& c = graph_.config;
    if (frame.feature_count != c.point_features)
      throw InputError("frame has " + std::to_string(frame.feature_count) + " feature columns, model expects " +
                       std::to_string(c.point_features));
    PillarSet pillars = pillarize(frame, c.grid, c.max_points_per_pillar);
    FeatureMap vectors;
    if (c.fec) {
      vectors = pillar_feature_net(pillars, fec_.point, nullptr, c.activations.fec);
      vectors = fec_forward(vectors, *c.fec, fec_, c.activations.fec);
    } else {
      vectors = pillar_feature_net(pillars, pfn_, &pfn_bn_, c.activations.fec);
    }
    FeatureMap image = scatter_to_pseudo_image(pillars, vectors, c.grid);
    if (pillars_out) *pillars_out = std::move(pillars);
    return image;
  }

  ForwardResult forward(const RadarFrame& frame) const {
    ForwardResult r;
    r.pseudo_image = encode(frame, &r.pillars);
    r.stages = backbone_forward(r.pseudo_image, graph_, weights_);
    for (HeadId h : kHeads) {
      const int i = static_cast<int>(h);
      r.heads[i] = head_forward(r.stages[config().head_stage(h) - 1], heads_[i], config().head_activation(h), h);
    }
    return r;
  }

  std::vector<Detection> detect(const RadarFrame& frame, const DetectOptions& opt = {}) const {
    const ForwardResult r = forward(frame);
    std::vector<Detection> all;
    for (HeadId h : kHeads) {
      const auto dets = decode_boxes(r.heads[static_cast<int>(h)],
                                     config().cumulative_stride(config().head_stage(h)), config().grid,
                                     opt.score_threshold);
      all.insert(all.end(), dets.begin(), dets.end());
    }
    return nms(all, opt.iou_threshold, opt.per_class_nms);
  }

 private:
  LinearSpec layer(const std::string& name) const {
    return linear_spec(graph_.nodes[static_cast<std::size_t>(graph_.find(name))], weights_);
  }

  LayerGraph graph_;
  WeightStore weights_;
  FecWeights fec_;
  LinearSpec pfn_;
  BatchNormParams pfn_bn_;
  std::array<HeadParams, 3> heads_;
};

}  // namespace dsfec
