#pragma once

// Static cost model over a LayerGraph plus a wall-clock benchmark harness.
// FLOPs are reported as 2 x multiply-accumulates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsfec/detector.hpp"
#include "dsfec/graph.hpp"

namespace dsfec {

constexpr double kMiB = 1024.0 * 1024.0;

inline std::string shape_string(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

// ---------------------------------------------------------------------------
// Parameters

struct ParamRow {
  std::string name;
  std::int64_t trainable = 0;
  std::int64_t all = 0;  // including batch-norm running statistics
};

struct ParamCount {
  std::vector<ParamRow> rows;
  std::int64_t total = 0;
  std::int64_t total_all = 0;
};

inline ParamRow node_param_count(const LayerNode& n) {
  ParamRow r{n.name, 0, 0};
  for (const auto& p : node_params(n)) {
    r.all += p.count();
    if (p.trainable) r.trainable += p.count();
  }
  return r;
}

inline ParamCount count_params(const LayerGraph& g) {
  ParamCount pc;
  for (const auto& n : g.nodes) {
    auto r = node_param_count(n);
    pc.total += r.trainable;
    pc.total_all += r.all;
    pc.rows.push_back(std::move(r));
  }
  return pc;
}

// ---------------------------------------------------------------------------
// FLOPs

inline std::int64_t node_macs(const LayerNode& n, const Shape& in) {
  const Shape& o = n.out_shape;
  const std::int64_t k2 = static_cast<std::int64_t>(n.kernel) * n.kernel;
  switch (n.kind) {
    case NodeKind::conv: return k2 * n.in_channels * o.elements();
    case NodeKind::depthwise: return k2 * o.elements();
    case NodeKind::pointwise:
    case NodeKind::point_linear:
    case NodeKind::pillar_linear: return static_cast<std::int64_t>(n.in_channels) * o.elements();
    default: (void)in; return 0;
  }
}

/// Elementwise ops: batch norm, activation and add count one op per output
/// element; the point max counts one op per input element.
inline std::int64_t node_elementwise_ops(const LayerNode& n, const Shape& in) {
  switch (n.kind) {
    case NodeKind::batch_norm:
    case NodeKind::activation:
    case NodeKind::add: return n.out_shape.elements();
    case NodeKind::point_max: return in.elements();
    default: return 0;
  }
}

struct FlopRow {
  std::string name;
  std::int64_t macs = 0;
  std::int64_t flops = 0;  // 2 * macs + elementwise ops
};

struct FlopCount {
  std::vector<FlopRow> rows;
  std::int64_t total = 0;
  std::int64_t total_macs = 0;
};

inline FlopCount count_flops(const LayerGraph& graph, const InputDims& dims) {
  LayerGraph g = graph;
  infer_shapes(g, dims);
  FlopCount fc;
  for (const auto& n : g.nodes) {
    const int src = n.inputs.front();
    const Shape& in = src == kGraphInput ? g.input_shape : g.nodes[static_cast<std::size_t>(src)].out_shape;
    FlopRow r{n.name, node_macs(n, in), 0};
    r.flops = 2 * r.macs + node_elementwise_ops(n, in);
    fc.total += r.flops;
    fc.total_macs += r.macs;
    fc.rows.push_back(std::move(r));
  }
  return fc;
}

inline FlopCount count_flops(const LayerGraph& g) { return count_flops(g, g.dims); }

// ---------------------------------------------------------------------------
// Activation memory

struct MemoryRow {
  std::string name;
  std::int64_t output_bytes = 0;
  std::int64_t live_bytes = 0;  // output + everything still awaiting a consumer
};

struct MemoryEstimate {
  std::vector<MemoryRow> rows;
  std::int64_t peak_bytes = 0;
};

/// Liveness model: a tensor (the graph input included) stays resident from
/// its producer until its last consumer has run; tensors nobody consumes
/// stay resident to the end. Upper bound: no in-place reuse, no allocator
/// effects.
inline MemoryEstimate estimate_activation_memory(const LayerGraph& graph, const InputDims& dims) {
  LayerGraph g = graph;
  infer_shapes(g, dims);
  const int n = static_cast<int>(g.nodes.size());
  const int end = n;  // "never freed"
  std::vector<int> last_use(static_cast<std::size_t>(n), end);
  int input_last_use = -1;
  std::vector<bool> consumed(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    for (int in : g.nodes[static_cast<std::size_t>(i)].inputs) {
      if (in == kGraphInput) {
        input_last_use = i;
      } else {
        last_use[static_cast<std::size_t>(in)] = i;
        consumed[static_cast<std::size_t>(in)] = true;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    if (!consumed[static_cast<std::size_t>(i)]) last_use[static_cast<std::size_t>(i)] = end;

  MemoryEstimate m;
  const std::int64_t input_bytes = 4 * g.input_shape.elements();
  std::int64_t resident = input_bytes;
  for (int i = 0; i < n; ++i) {
    const auto& node = g.nodes[static_cast<std::size_t>(i)];
    const std::int64_t out = 4 * node.out_shape.elements();
    resident += out;
    m.rows.push_back({node.name, out, resident});
    m.peak_bytes = std::max(m.peak_bytes, resident);
    // Free what this node was the last consumer of.
    if (input_last_use == i) resident -= input_bytes;
    std::vector<int> freed;
    for (int in : node.inputs)
      if (in != kGraphInput && last_use[static_cast<std::size_t>(in)] == i &&
          std::find(freed.begin(), freed.end(), in) == freed.end()) {
        resident -= 4 * g.nodes[static_cast<std::size_t>(in)].out_shape.elements();
        freed.push_back(in);
      }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkStats {
  std::size_t runs = 0;
  std::size_t frames = 0;
  int reps = 0;
  int warmup = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double fps = 0.0;
};

inline BenchmarkStats summarize_timings(std::vector<double> ms) {
  if (ms.empty()) throw ConfigError("benchmark: no timed runs");
  BenchmarkStats s;
  s.runs = ms.size();
  double sum = 0.0;
  for (double v : ms) sum += v;
  s.mean_ms = sum / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  s.fps = s.mean_ms > 0.0 ? 1000.0 / s.mean_ms : 0.0;
  return s;
}

/// `warmup` untimed passes over the frames, then `reps` timed passes. Each
/// timed run is one end-to-end detect() call on one frame.
inline BenchmarkStats benchmark(const Detector& model, const std::vector<RadarFrame>& frames, int warmup, int reps,
                                const DetectOptions& opt = {}) {
  if (frames.empty()) throw ConfigError("benchmark: no frames");
  if (reps < 1) throw ConfigError("benchmark: reps must be >= 1");
  if (warmup < 0) throw ConfigError("benchmark: warmup must be >= 0");
  std::size_t sink = 0;
  for (int w = 0; w < warmup; ++w)
    for (const auto& f : frames) sink += model.detect(f, opt).size();
  std::vector<double> ms;
  ms.reserve(frames.size() * static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    for (const auto& f : frames) {
      const auto t0 = std::chrono::steady_clock::now();
      sink += model.detect(f, opt).size();
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  auto s = summarize_timings(std::move(ms));
  s.frames = frames.size();
  s.reps = reps;
  s.warmup = warmup;
  (void)sink;
  return s;
}

// ---------------------------------------------------------------------------
// Report

struct LayerReportRow {
  std::string name;
  std::string kind;
  std::string group;
  Shape out_shape;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t activation_bytes = 0;
  std::int64_t live_bytes = 0;
};

struct AnalysisTotals {
  std::int64_t params = 0;
  std::int64_t params_all = 0;
  std::int64_t flops = 0;
  double gflops = 0.0;
  double peak_activation_mb = 0.0;
  std::int64_t stem_flops = 0;
  /// Pseudo-image plus stem output, in MiB.
  double stem_io_mb = 0.0;
};

struct AnalysisReport {
  std::string model;
  InputDims dims;
  std::vector<LayerReportRow> rows;
  AnalysisTotals totals;
  std::optional<BenchmarkStats> bench;
};

inline AnalysisReport analyze(const LayerGraph& graph, const InputDims& dims) {
  LayerGraph g = graph;
  infer_shapes(g, dims);
  const auto pc = count_params(g);
  const auto fc = count_flops(g, dims);
  const auto mem = estimate_activation_memory(g, dims);
  AnalysisReport r;
  r.model = g.config.name;
  r.dims = dims;
  int last_stem = -1;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    r.rows.push_back({n.name, to_string(n.kind), n.group, n.out_shape, pc.rows[i].trainable, fc.rows[i].flops,
                      mem.rows[i].output_bytes, mem.rows[i].live_bytes});
    if (n.group == "stem") {
      r.totals.stem_flops += fc.rows[i].flops;
      last_stem = static_cast<int>(i);
    }
  }
  r.totals.params = pc.total;
  r.totals.params_all = pc.total_all;
  r.totals.flops = fc.total;
  r.totals.gflops = static_cast<double>(fc.total) / 1e9;
  r.totals.peak_activation_mb = static_cast<double>(mem.peak_bytes) / kMiB;
  if (last_stem >= 0)
    r.totals.stem_io_mb = 4.0 *
                          static_cast<double>(g.nodes[static_cast<std::size_t>(g.pseudo_image)].out_shape.elements() +
                                              g.nodes[static_cast<std::size_t>(last_stem)].out_shape.elements()) /
                          kMiB;
  return r;
}

/// Cost model for a config. The encoder layers are sized for a dense pillar
/// budget (every grid cell occupied) unless `dims` says otherwise.
inline AnalysisReport analyze(const ModelConfig& config, std::optional<InputDims> dims = std::nullopt) {
  const LayerGraph g = build_graph(config);
  return analyze(g, dims.value_or(g.dims));
}

inline const char* kFlopsConvention = "FLOPs = 2 x multiply-accumulates; batch norm, activation, add and max count one "
                                      "op per element";
inline const char* kMemoryConvention = "peak activation memory: fp32, liveness upper bound (no in-place reuse)";

inline nlohmann::json bench_to_json(const BenchmarkStats& b) {
  return {{"runs", b.runs},           {"frames", b.frames}, {"reps", b.reps},
          {"warmup", b.warmup},       {"mean_ms", b.mean_ms}, {"median_ms", b.median_ms},
          {"p95_ms", b.p95_ms},       {"fps", b.fps}};
}

inline nlohmann::json report_to_json(const AnalysisReport& r, bool include_layers = true) {
  nlohmann::json j;
  j["model"] = r.model;
  j["conventions"] = {kFlopsConvention, kMemoryConvention};
  j["input"] = {{"grid_h", r.dims.grid_h},
                {"grid_w", r.dims.grid_w},
                {"pillars", r.dims.pillars},
                {"points_per_pillar", r.dims.points_per_pillar}};
  j["totals"] = {{"params", r.totals.params},
                 {"params_all_state", r.totals.params_all},
                 {"flops", r.totals.flops},
                 {"gflops", r.totals.gflops},
                 {"peak_activation_mb", r.totals.peak_activation_mb},
                 {"stem_flops", r.totals.stem_flops},
                 {"stem_io_mb", r.totals.stem_io_mb}};
  if (include_layers) {
    auto layers = nlohmann::json::array();
    for (const auto& row : r.rows)
      layers.push_back({{"name", row.name},
                        {"kind", row.kind},
                        {"group", row.group},
                        {"output_shape", {row.out_shape.h, row.out_shape.w, row.out_shape.c}},
                        {"params", row.params},
                        {"flops", row.flops},
                        {"activation_bytes", row.activation_bytes}});
    j["layers"] = std::move(layers);
  }
  if (r.bench) j["benchmark"] = bench_to_json(*r.bench);
  return j;
}

namespace detail {

inline std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width, bool left_align) {
  if (s.size() >= width) return s;
  return left_align ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

}  // namespace detail

inline std::string report_to_text(const AnalysisReport& r, bool include_layers = true) {
  using detail::pad;
  std::string out;
  out += "# model: " + r.model + "\n";
  out += "# " + std::string(kFlopsConvention) + "\n";
  out += "# " + std::string(kMemoryConvention) + "\n";
  out += "# input: grid " + std::to_string(r.dims.grid_h) + "x" + std::to_string(r.dims.grid_w) + ", " +
         std::to_string(r.dims.pillars) + " pillars x " + std::to_string(r.dims.points_per_pillar) + " points\n";
  if (include_layers) {
    std::size_t wn = 4;
    for (const auto& row : r.rows) wn = std::max(wn, row.name.size());
    out += pad("name", wn + 2, true) + pad("kind", 15, true) + pad("output", 14, true) + pad("params", 12, false) +
           pad("flops", 16, false) + pad("act_bytes", 14, false) + "\n";
    for (const auto& row : r.rows)
      out += pad(row.name, wn + 2, true) + pad(row.kind, 15, true) + pad(shape_string(row.out_shape), 14, true) +
             pad(std::to_string(row.params), 12, false) + pad(std::to_string(row.flops), 16, false) +
             pad(std::to_string(row.activation_bytes), 14, false) + "\n";
  }
  out += "params:              " + std::to_string(r.totals.params) + "\n";
  out += "params (all state):  " + std::to_string(r.totals.params_all) + "\n";
  out += "GFLOPs:              " + detail::fmt("%.4f", r.totals.gflops) + "\n";
  out += "peak activation MB:  " + detail::fmt("%.3f", r.totals.peak_activation_mb) + "\n";
  out += "stem FLOPs:          " + std::to_string(r.totals.stem_flops) + "\n";
  out += "stem I/O MB:         " + detail::fmt("%.3f", r.totals.stem_io_mb) + "\n";
  if (r.bench) {
    const auto& b = *r.bench;
    out += "runs:                " + std::to_string(b.runs) + "\n";
    out += "mean ms:             " + detail::fmt("%.3f", b.mean_ms) + "\n";
    out += "median ms:           " + detail::fmt("%.3f", b.median_ms) + "\n";
    out += "p95 ms:              " + detail::fmt("%.3f", b.p95_ms) + "\n";
    out += "fps:                 " + detail::fmt("%.3f", b.fps) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

enum class AblationAxis { stem_filters, blocks_stage2 };

inline std::string to_string(AblationAxis a) {
  return a == AblationAxis::stem_filters ? "stem_filters" : "blocks_stage2";
}

inline AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "stem_filters") return AblationAxis::stem_filters;
  if (s == "blocks_stage2") return AblationAxis::blocks_stage2;
  throw ConfigError("unknown ablation axis '" + s + "' (expected stem_filters or blocks_stage2)");
}

struct AblationRow {
  int value = 0;
  bool valid = true;
  std::string reason;
  std::int64_t params = 0;
  double gflops = 0.0;
  std::int64_t stem_flops = 0;
  double peak_activation_mb = 0.0;
  double stem_io_mb = 0.0;
};

inline std::vector<AblationRow> ablation_report(const ModelConfig& base, AblationAxis axis,
                                                const std::vector<int>& values) {
  if (values.empty()) throw ConfigError("ablation: no values given");
  std::vector<AblationRow> rows;
  for (int v : values) {
    AblationRow row;
    row.value = v;
    ModelConfig c = base;
    if (axis == AblationAxis::stem_filters)
      c.stem_filters = v;
    else
      c.blocks_per_stage[1] = v;
    try {
      const auto r = analyze(c);
      row.params = r.totals.params;
      row.gflops = r.totals.gflops;
      row.stem_flops = r.totals.stem_flops;
      row.peak_activation_mb = r.totals.peak_activation_mb;
      row.stem_io_mb = r.totals.stem_io_mb;
    } catch (const ConfigError& e) {
      row.valid = false;
      row.reason = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json ablation_to_json(const ModelConfig& base, AblationAxis axis,
                                       const std::vector<AblationRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"value", r.value}, {"valid", r.valid}};
    if (r.valid) {
      j["params"] = r.params;
      j["gflops"] = r.gflops;
      j["stem_flops"] = r.stem_flops;
      j["peak_activation_mb"] = r.peak_activation_mb;
      j["stem_io_mb"] = r.stem_io_mb;
    } else {
      j["reason"] = r.reason;
    }
    arr.push_back(std::move(j));
  }
  return {{"model", base.name}, {"axis", to_string(axis)}, {"convention", kFlopsConvention}, {"rows", arr}};
}

inline std::string ablation_to_text(const ModelConfig& base, AblationAxis axis,
                                    const std::vector<AblationRow>& rows) {
  using detail::pad;
  std::string out = "# model: " + base.name + ", axis: " + to_string(axis) + "\n# " + kFlopsConvention + "\n";
  out += pad(to_string(axis), 14, true) + pad("params", 12, false) + pad("GFLOPs", 10, false) +
         pad("stem_FLOPs", 14, false) + pad("peak_MB", 10, false) + pad("stem_io_MB", 12, false) + "\n";
  for (const auto& r : rows) {
    if (!r.valid) {
      out += pad(std::to_string(r.value), 14, true) + "  invalid: " + r.reason + "\n";
      continue;
    }
    out += pad(std::to_string(r.value), 14, true) + pad(std::to_string(r.params), 12, false) +
           pad(detail::fmt("%.4f", r.gflops), 10, false) + pad(std::to_string(r.stem_flops), 14, false) +
           pad(detail::fmt("%.3f", r.peak_activation_mb), 10, false) +
           pad(detail::fmt("%.3f", r.stem_io_mb), 12, false) + "\n";
  }
  return out;
}

}  // namespace dsfec
