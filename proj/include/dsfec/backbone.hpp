#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dsfec/graph.hpp"
#include "dsfec/ops.hpp"
#include "dsfec/weights.hpp"

namespace dsfec {

/// Depthwise 3x3 -> BN -> act -> pointwise 1x1 -> BN -> act.
struct DSConvParams {
  DepthwiseSpec depthwise;
  BatchNormParams depthwise_bn;
  LinearSpec pointwise;
  BatchNormParams pointwise_bn;
};

inline FeatureMap dsconv_block_forward(const FeatureMap& input, const DSConvParams& params, int stride,
                                       const Activation& act) {
  DepthwiseSpec dw = params.depthwise;
  dw.stride = stride;
  FeatureMap x = depthwise_conv2d(input, dw);
  x = apply_activation(batch_norm_infer(x, params.depthwise_bn), act);
  x = pointwise_conv2d(x, params.pointwise);
  return apply_activation(batch_norm_infer(x, params.pointwise_bn), act);
}

/// Two 3x3 convolutions with a skip connection. The shortcut is a strided
/// 1x1 projection + BN when the block changes shape, identity otherwise.
struct ResidualParams {
  ConvSpec conv1;
  BatchNormParams bn1;
  ConvSpec conv2;
  BatchNormParams bn2;
  std::optional<ConvSpec> shortcut;
  std::optional<BatchNormParams> shortcut_bn;
};

namespace detail {

inline FeatureMap shortcut_path(const FeatureMap& input, const std::optional<ConvSpec>& projection,
                                const std::optional<BatchNormParams>& bn, int stride, const Shape& want) {
  if (projection) {
    ConvSpec p = *projection;
    p.stride = stride;
    FeatureMap s = conv2d(input, p);
    return bn ? batch_norm_infer(s, *bn) : s;
  }
  if (input.height() != want.h || input.width() != want.w || input.channels() != want.c)
    throw ConfigError("residual block changes shape " + input.shape_string() + " -> " +
                      std::to_string(want.h) + "x" + std::to_string(want.w) + "x" + std::to_string(want.c) +
                      " but has no projection shortcut");
  return input;
}

}  // namespace detail

inline FeatureMap residual_block_forward(const FeatureMap& input, const ResidualParams& params, int stride,
                                         const Activation& act) {
  ConvSpec c1 = params.conv1;
  c1.stride = stride;
  FeatureMap x = apply_activation(batch_norm_infer(conv2d(input, c1), params.bn1), act);
  x = batch_norm_infer(conv2d(x, params.conv2), params.bn2);
  const FeatureMap s = detail::shortcut_path(input, params.shortcut, params.shortcut_bn, stride,
                                             {x.height(), x.width(), x.channels()});
  return apply_activation(add(x, s), act);
}

/// 1x1 reduce -> 3x3 (strided) -> 1x1 expand, each with BN; skip connection;
/// final activation. Used by the residual baseline backbone.
struct BottleneckParams {
  LinearSpec reduce;
  BatchNormParams reduce_bn;
  ConvSpec conv;
  BatchNormParams conv_bn;
  LinearSpec expand;
  BatchNormParams expand_bn;
  std::optional<ConvSpec> shortcut;
  std::optional<BatchNormParams> shortcut_bn;
};

inline FeatureMap bottleneck_block_forward(const FeatureMap& input, const BottleneckParams& params, int stride,
                                           const Activation& act) {
  FeatureMap x = apply_activation(batch_norm_infer(pointwise_conv2d(input, params.reduce), params.reduce_bn), act);
  ConvSpec c = params.conv;
  c.stride = stride;
  x = apply_activation(batch_norm_infer(conv2d(x, c), params.conv_bn), act);
  x = batch_norm_infer(pointwise_conv2d(x, params.expand), params.expand_bn);
  const FeatureMap s = detail::shortcut_path(input, params.shortcut, params.shortcut_bn, stride,
                                             {x.height(), x.width(), x.channels()});
  return apply_activation(add(x, s), act);
}

// ---------------------------------------------------------------------------
// Parameter structs gathered from a weight store by node-name prefix.

namespace detail {

inline const LayerNode& node_named(const LayerGraph& g, const std::string& name) {
  const int i = g.find(name);
  if (i < 0) throw ConfigError("graph has no node '" + name + "'");
  return g.nodes[static_cast<std::size_t>(i)];
}

}  // namespace detail

inline DSConvParams dsconv_params(const LayerGraph& g, const WeightStore& w, const std::string& prefix) {
  using detail::node_named;
  return {depthwise_spec(node_named(g, prefix + ".dw"), w), bn_params(node_named(g, prefix + ".dw_bn"), w),
          linear_spec(node_named(g, prefix + ".pw"), w), bn_params(node_named(g, prefix + ".pw_bn"), w)};
}

inline ResidualParams residual_params(const LayerGraph& g, const WeightStore& w, const std::string& prefix) {
  using detail::node_named;
  ResidualParams p{conv_spec(node_named(g, prefix + ".conv1"), w), bn_params(node_named(g, prefix + ".bn1"), w),
                   conv_spec(node_named(g, prefix + ".conv2"), w), bn_params(node_named(g, prefix + ".bn2"), w),
                   std::nullopt, std::nullopt};
  if (g.find(prefix + ".shortcut") >= 0) {
    p.shortcut = conv_spec(node_named(g, prefix + ".shortcut"), w);
    p.shortcut_bn = bn_params(node_named(g, prefix + ".shortcut_bn"), w);
  }
  return p;
}

inline BottleneckParams bottleneck_params(const LayerGraph& g, const WeightStore& w, const std::string& prefix) {
  using detail::node_named;
  BottleneckParams p{linear_spec(node_named(g, prefix + ".reduce"), w),
                     bn_params(node_named(g, prefix + ".reduce_bn"), w),
                     conv_spec(node_named(g, prefix + ".conv"), w),
                     bn_params(node_named(g, prefix + ".conv_bn"), w),
                     linear_spec(node_named(g, prefix + ".expand"), w),
                     bn_params(node_named(g, prefix + ".expand_bn"), w),
                     std::nullopt,
                     std::nullopt};
  if (g.find(prefix + ".shortcut") >= 0) {
    p.shortcut = conv_spec(node_named(g, prefix + ".shortcut"), w);
    p.shortcut_bn = bn_params(node_named(g, prefix + ".shortcut_bn"), w);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Graph interpreter for the dense (pseudo-image onward) part of the network.

inline FeatureMap run_dense_node(const LayerNode& n, const WeightStore& w,
                                 const std::vector<const FeatureMap*>& inputs) {
  const FeatureMap& x = *inputs.at(0);
  switch (n.kind) {
    case NodeKind::conv: return conv2d(x, conv_spec(n, w));
    case NodeKind::depthwise: return depthwise_conv2d(x, depthwise_spec(n, w));
    case NodeKind::pointwise: return pointwise_conv2d(x, linear_spec(n, w));
    case NodeKind::batch_norm: return batch_norm_infer(x, bn_params(n, w));
    case NodeKind::activation: return apply_activation(x, n.activation);
    case NodeKind::add: return add(x, *inputs.at(1));
    default: throw ConfigError("node " + n.name + " (" + to_string(n.kind) + ") is not a dense layer");
  }
}

/// Throws WeightError listing every node in [first, last] whose parameters
/// are absent from `w`.
inline void require_node_weights(const LayerGraph& g, const WeightStore& w, int first, int last) {
  std::string missing;
  for (int i = first; i <= last; ++i) {
    const auto& n = g.nodes[static_cast<std::size_t>(i)];
    for (const auto& p : node_params(n)) {
      if (!w.contains(p.name)) {
        missing += (missing.empty() ? "" : ", ") + n.name;
        break;
      }
    }
  }
  if (!missing.empty()) throw WeightError("missing weights for nodes: " + missing);
}

/// Runs nodes [first, last] given the output of node first-1 (`seed`).
/// Returns the outputs of the nodes listed in `keep`, in that order.
inline std::vector<FeatureMap> execute_dense(const LayerGraph& g, const WeightStore& w, const FeatureMap& seed,
                                             int first, int last, const std::vector<int>& keep) {
  const auto count = static_cast<std::size_t>(last - first + 1);
  std::vector<int> last_use(g.nodes.size(), -1);
  for (int i = first; i <= last; ++i)
    for (int in : g.nodes[static_cast<std::size_t>(i)].inputs)
      if (in >= 0) last_use[static_cast<std::size_t>(in)] = i;
  for (int k : keep) last_use[static_cast<std::size_t>(k)] = last + 1;

  std::vector<std::optional<FeatureMap>> out(count);
  auto lookup = [&](int idx) -> const FeatureMap* {
    if (idx == first - 1) return &seed;
    if (idx < first || idx > last || !out[static_cast<std::size_t>(idx - first)])
      throw ConfigError("graph: node " + std::to_string(idx) + " is not available to the interpreter");
    return &*out[static_cast<std::size_t>(idx - first)];
  };
  for (int i = first; i <= last; ++i) {
    const auto& n = g.nodes[static_cast<std::size_t>(i)];
    std::vector<const FeatureMap*> inputs;
    for (int in : n.inputs) inputs.push_back(lookup(in));
    out[static_cast<std::size_t>(i - first)] = run_dense_node(n, w, inputs);
    for (int in : n.inputs)
      if (in >= first && last_use[static_cast<std::size_t>(in)] == i) out[static_cast<std::size_t>(in - first)].reset();
  }
  std::vector<FeatureMap> result;
  result.reserve(keep.size());
  for (int k : keep) result.push_back(*lookup(k));
  return result;
}

/// Stem + four stages. Returns the output of every stage.
inline std::array<FeatureMap, 4> backbone_forward(const FeatureMap& pseudo_image, const LayerGraph& g,
                                                  const WeightStore& w) {
  const int c = g.config.pseudo_image_channels();
  if (pseudo_image.channels() != c)
    throw ConfigError("backbone_forward: pseudo-image has " + std::to_string(pseudo_image.channels()) +
                      " channels, stem expects " + std::to_string(c));
  const int first = g.first_dense_node();
  const int last = g.stage_outputs[3];
  require_node_weights(g, w, first, last);
  auto outs = execute_dense(g, w, pseudo_image, first, last,
                            {g.stage_outputs[0], g.stage_outputs[1], g.stage_outputs[2], g.stage_outputs[3]});
  return {std::move(outs[0]), std::move(outs[1]), std::move(outs[2]), std::move(outs[3])};
}

}  // namespace dsfec
