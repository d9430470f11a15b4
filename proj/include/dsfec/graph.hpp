#pragma once

// Layer-level description of a detector. The same graph drives the forward
// pass (backbone.hpp), the weight file layout (weights.hpp) and the static
// cost model (analyzer.hpp).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsfec/config.hpp"
#include "dsfec/ops.hpp"

namespace dsfec {

enum class NodeKind {
  point_linear,   // shared linear layer applied to every point slot (P x N x C)
  point_max,      // max over the points of each pillar (P x N x C -> P x 1 x C)
  pillar_linear,  // linear layer on per-pillar vectors (P x 1 x C)
  scatter,        // pillar vectors -> dense BEV pseudo-image
  conv,           // standard k x k convolution
  depthwise,      // per-channel k x k convolution
  pointwise,      // 1 x 1 convolution, stride 1
  batch_norm,
  activation,
  add,
};

inline std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::point_linear: return "point_linear";
    case NodeKind::point_max: return "point_max";
    case NodeKind::pillar_linear: return "pillar_linear";
    case NodeKind::scatter: return "scatter";
    case NodeKind::conv: return "conv";
    case NodeKind::depthwise: return "depthwise";
    case NodeKind::pointwise: return "pointwise";
    case NodeKind::batch_norm: return "batch_norm";
    case NodeKind::activation: return "activation";
    case NodeKind::add: return "add";
  }
  return "?";
}

struct Shape {
  int h = 0;
  int w = 0;
  int c = 0;
  std::int64_t elements() const noexcept { return static_cast<std::int64_t>(h) * w * c; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Sizes the graph is instantiated for. The encoder layers run over a
/// pillars x points_per_pillar slot tensor.
struct InputDims {
  int grid_h = 160;
  int grid_w = 160;
  int pillars = 160 * 160;
  int points_per_pillar = 20;

  static InputDims for_config(const ModelConfig& c) {
    return {c.grid.rows(), c.grid.cols(), c.grid.rows() * c.grid.cols(), c.max_points_per_pillar};
  }
  friend bool operator==(const InputDims&, const InputDims&) = default;
};

constexpr int kGraphInput = -1;

struct LayerNode {
  std::string name;
  NodeKind kind = NodeKind::conv;
  std::string group;  // encoder | fec | stem | backbone | head_car | head_truck | head_vru
  int stage = 0;      // 1..4 inside the backbone, else 0
  int block = -1;     // block index inside its stage
  std::vector<int> inputs;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  bool bias = false;
  Activation activation;  // activation nodes only
  Shape out_shape;
};

struct LayerGraph {
  ModelConfig config;
  InputDims dims;
  Shape input_shape;  // point-slot tensor fed to the first encoder layer
  std::vector<LayerNode> nodes;
  int pseudo_image = -1;                  // scatter node
  std::array<int, 4> stage_outputs{};     // last node of each stage
  std::array<int, 3> head_scores{};       // sigmoid node per head
  std::array<int, 3> head_regressions{};  // regression node per head

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].name == name) return static_cast<int>(i);
    return -1;
  }
  /// Index of the first node that runs on the dense pseudo-image.
  int first_dense_node() const { return pseudo_image + 1; }
};

/// A named parameter tensor owned by one node.
struct ParamInfo {
  std::string name;
  std::vector<std::uint32_t> dims;
  bool trainable = true;
  std::int64_t count() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline std::vector<ParamInfo> node_params(const LayerNode& n) {
  using u32 = std::uint32_t;
  std::vector<ParamInfo> out;
  const auto ci = static_cast<u32>(n.in_channels);
  const auto co = static_cast<u32>(n.out_channels);
  const auto k = static_cast<u32>(n.kernel);
  switch (n.kind) {
    case NodeKind::conv:
      out.push_back({n.name + ".weight", {co, ci, k, k}});
      break;
    case NodeKind::depthwise:
      out.push_back({n.name + ".weight", {co, 1, k, k}});
      break;
    case NodeKind::pointwise:
    case NodeKind::point_linear:
    case NodeKind::pillar_linear:
      out.push_back({n.name + ".weight", {co, ci}});
      break;
    case NodeKind::batch_norm:
      out.push_back({n.name + ".gamma", {co}});
      out.push_back({n.name + ".beta", {co}});
      out.push_back({n.name + ".running_mean", {co}, false});
      out.push_back({n.name + ".running_var", {co}, false});
      return out;
    default:
      return out;
  }
  if (n.bias) out.push_back({n.name + ".bias", {co}});
  return out;
}

namespace detail {

class GraphBuilder {
 public:
  explicit GraphBuilder(LayerGraph& g) : g_(g) {}

  std::string group = "encoder";
  int stage = 0;
  int block = -1;

  int add(LayerNode n) {
    n.group = group;
    n.stage = stage;
    n.block = block;
    g_.nodes.push_back(std::move(n));
    return static_cast<int>(g_.nodes.size()) - 1;
  }
  int channels(int node) const { return g_.nodes[node].out_channels; }

  int linear(NodeKind kind, const std::string& name, int input, int in, int out, bool bias) {
    LayerNode n;
    n.name = name;
    n.kind = kind;
    n.inputs = {input};
    n.in_channels = in;
    n.out_channels = out;
    n.bias = bias;
    return add(std::move(n));
  }
  int conv(const std::string& name, int input, int out, int kernel, int stride) {
    LayerNode n;
    n.name = name;
    n.kind = NodeKind::conv;
    n.inputs = {input};
    n.in_channels = channels(input);
    n.out_channels = out;
    n.kernel = kernel;
    n.stride = stride;
    return add(std::move(n));
  }
  int depthwise(const std::string& name, int input, int stride) {
    LayerNode n;
    n.name = name;
    n.kind = NodeKind::depthwise;
    n.inputs = {input};
    n.in_channels = n.out_channels = channels(input);
    n.kernel = 3;
    n.stride = stride;
    return add(std::move(n));
  }
  int pointwise(const std::string& name, int input, int out, bool bias = false) {
    return linear(NodeKind::pointwise, name, input, channels(input), out, bias);
  }
  int bn(const std::string& name, int input) {
    LayerNode n;
    n.name = name;
    n.kind = NodeKind::batch_norm;
    n.inputs = {input};
    n.in_channels = n.out_channels = channels(input);
    return add(std::move(n));
  }
  int act(const std::string& name, int input, const Activation& a) {
    LayerNode n;
    n.name = name;
    n.kind = NodeKind::activation;
    n.inputs = {input};
    n.in_channels = n.out_channels = channels(input);
    n.activation = a;
    return add(std::move(n));
  }
  int passthrough(NodeKind kind, const std::string& name, int input) {
    LayerNode n;
    n.name = name;
    n.kind = kind;
    n.inputs = {input};
    n.in_channels = n.out_channels = channels(input);
    return add(std::move(n));
  }
  int sum(const std::string& name, int a, int b) {
    LayerNode n;
    n.name = name;
    n.kind = NodeKind::add;
    n.inputs = {a, b};
    n.in_channels = n.out_channels = channels(a);
    return add(std::move(n));
  }

  int dsconv_block(const std::string& p, int input, int out, int stride, const Activation& a) {
    int x = depthwise(p + ".dw", input, stride);
    x = bn(p + ".dw_bn", x);
    x = act(p + ".dw_act", x, a);
    x = pointwise(p + ".pw", x, out);
    x = bn(p + ".pw_bn", x);
    return act(p + ".pw_act", x, a);
  }

  int shortcut(const std::string& p, int input, int out, int stride) {
    if (stride == 1 && channels(input) == out) return input;
    int s = conv(p + ".shortcut", input, out, 1, stride);
    return bn(p + ".shortcut_bn", s);
  }

  int basic_block(const std::string& p, int input, int out, int stride, const Activation& a) {
    int x = conv(p + ".conv1", input, out, 3, stride);
    x = bn(p + ".bn1", x);
    x = act(p + ".act1", x, a);
    x = conv(p + ".conv2", x, out, 3, 1);
    x = bn(p + ".bn2", x);
    const int s = shortcut(p, input, out, stride);
    x = sum(p + ".add", x, s);
    return act(p + ".act", x, a);
  }

  int bottleneck_block(const std::string& p, int input, int out, int stride, int expansion,
                       const Activation& a) {
    const int mid = out / expansion;
    int x = pointwise(p + ".reduce", input, mid);
    x = bn(p + ".reduce_bn", x);
    x = act(p + ".reduce_act", x, a);
    x = conv(p + ".conv", x, mid, 3, stride);
    x = bn(p + ".conv_bn", x);
    x = act(p + ".conv_act", x, a);
    x = pointwise(p + ".expand", x, out);
    x = bn(p + ".expand_bn", x);
    const int s = shortcut(p, input, out, stride);
    x = sum(p + ".add", x, s);
    return act(p + ".act", x, a);
  }

 private:
  LayerGraph& g_;
};

}  // namespace detail

/// Recomputes every node's output shape for `dims`; throws ConfigError on an
/// inconsistent graph.
inline void infer_shapes(LayerGraph& g, const InputDims& dims) {
  if (dims.grid_h <= 0 || dims.grid_w <= 0 || dims.pillars < 0 || dims.points_per_pillar <= 0)
    throw ConfigError("input dims must be positive");
  if (dims.pillars > dims.grid_h * dims.grid_w)
    throw ConfigError("input dims: more pillars than grid cells");
  g.dims = dims;
  g.input_shape.h = dims.pillars;
  g.input_shape.w = dims.points_per_pillar;
  auto in_shape = [&](int idx) -> const Shape& {
    return idx == kGraphInput ? g.input_shape : g.nodes[static_cast<std::size_t>(idx)].out_shape;
  };
  for (auto& n : g.nodes) {
    for (int i : n.inputs)
      if (i != kGraphInput && (i < 0 || &g.nodes[static_cast<std::size_t>(i)] >= &n))
        throw ConfigError("graph: node " + n.name + " consumes a later node");
    const Shape& s = in_shape(n.inputs.front());
    if (s.c != n.in_channels)
      throw ConfigError("graph: node " + n.name + " expects " + std::to_string(n.in_channels) +
                        " channels, producer gives " + std::to_string(s.c));
    switch (n.kind) {
      case NodeKind::point_linear:
      case NodeKind::pillar_linear:
      case NodeKind::pointwise:
      case NodeKind::batch_norm:
      case NodeKind::activation:
        n.out_shape = {s.h, s.w, n.out_channels};
        break;
      case NodeKind::point_max:
        n.out_shape = {s.h, 1, n.out_channels};
        break;
      case NodeKind::scatter:
        n.out_shape = {dims.grid_h, dims.grid_w, n.out_channels};
        break;
      case NodeKind::conv:
      case NodeKind::depthwise:
        n.out_shape = {axis_geometry(s.h, n.kernel, n.stride, Padding::same).out,
                       axis_geometry(s.w, n.kernel, n.stride, Padding::same).out, n.out_channels};
        break;
      case NodeKind::add: {
        const Shape& b = in_shape(n.inputs.at(1));
        if (!(b == s)) throw ConfigError("graph: add node " + n.name + " joins mismatched shapes");
        n.out_shape = s;
        break;
      }
    }
  }
}

inline LayerGraph build_graph(const ModelConfig& config) {
  config.validate();
  LayerGraph g;
  g.config = config;
  g.input_shape = {0, 0, augmented_width(config.point_features)};
  detail::GraphBuilder b(g);

  // Pillar encoder.
  int x;
  if (config.fec) {
    const auto& f = *config.fec;
    const Activation& a = config.activations.fec;
    b.group = "fec";
    x = b.linear(NodeKind::point_linear, "fec.point", kGraphInput, g.input_shape.c, f.f1, true);
    x = b.act("fec.point_act", x, a);
    x = b.passthrough(NodeKind::point_max, "fec.max", x);
    x = b.linear(NodeKind::pillar_linear, "fec.enhance", x, f.f1, f.f2, true);
    x = b.act("fec.enhance_act", x, a);
    x = b.linear(NodeKind::pillar_linear, "fec.compress", x, f.f2, f.f3, true);
    x = b.act("fec.compress_act", x, a);
  } else {
    b.group = "encoder";
    x = b.linear(NodeKind::point_linear, "encoder.pfn", kGraphInput, g.input_shape.c, config.pfn_filters,
                 false);
    x = b.bn("encoder.pfn_bn", x);
    x = b.act("encoder.pfn_act", x, config.activations.fec);
    x = b.passthrough(NodeKind::point_max, "encoder.max", x);
  }
  b.group = "encoder";
  x = b.passthrough(NodeKind::scatter, "encoder.scatter", x);
  g.pseudo_image = x;

  // Stem: one 3x3 conv for DSConv networks, two for the residual baseline.
  b.group = "stem";
  const Activation& stem_act = config.activations.stem;
  if (config.block_kind == BlockKind::dsconv) {
    x = b.conv("stem.conv", x, config.stem_filters, 3, 1);
    x = b.bn("stem.bn", x);
    x = b.act("stem.act", x, stem_act);
  } else {
    for (int i = 1; i <= 2; ++i) {
      const auto s = std::to_string(i);
      x = b.conv("stem.conv" + s, x, config.stem_filters, 3, 1);
      x = b.bn("stem.bn" + s, x);
      x = b.act("stem.act" + s, x, stem_act);
    }
  }

  // Backbone stages.
  b.group = "backbone";
  const Activation& act = config.activations.backbone;
  for (int s = 0; s < 4; ++s) {
    b.stage = s + 1;
    for (int j = 0; j < config.blocks_per_stage[s]; ++j) {
      b.block = j;
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(j);
      const int stride = j == 0 ? config.stage_strides[s] : 1;
      const int width = config.stage_widths[s];
      if (config.block_kind == BlockKind::dsconv)
        x = b.dsconv_block(prefix, x, width, stride, act);
      else
        x = b.bottleneck_block(prefix, x, width, stride, config.bottleneck_expansion, act);
    }
    g.stage_outputs[s] = x;
  }
  b.stage = 0;
  b.block = -1;

  // Detection heads.
  for (HeadId head : kHeads) {
    const int h = static_cast<int>(head);
    const std::string name = to_string(head);
    b.group = name;
    const Activation& ha = config.head_activation(head);
    const int tap = g.stage_outputs[config.head_stage(head) - 1];
    const int width = b.channels(tap);
    int y = config.block_kind == BlockKind::dsconv ? b.dsconv_block(name + ".block", tap, width, 1, ha)
                                                   : b.basic_block(name + ".block", tap, width, 1, ha);
    const int score = b.pointwise(name + ".score", y, head_score_channels(head), true);
    g.head_scores[h] = b.act(name + ".score_act", score, Activation::sigmoid());
    g.head_regressions[h] = b.pointwise(name + ".reg", y, kRegressionChannels, true);
  }

  infer_shapes(g, InputDims::for_config(config));
  return g;
}

/// Number of blocks per stage, counted from node metadata.
inline std::array<int, 4> count_blocks(const LayerGraph& g) {
  std::array<int, 4> out{};
  for (const auto& n : g.nodes)
    if (n.group == "backbone" && n.stage >= 1) out[n.stage - 1] = std::max(out[n.stage - 1], n.block + 1);
  return out;
}

}  // namespace dsfec
