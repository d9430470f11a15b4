#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsfec/error.hpp"
#include "dsfec/pillar.hpp"
#include "dsfec/tensor.hpp"

namespace dsfec {

enum class BlockKind { residual, dsconv };

inline std::string to_string(BlockKind kind) { return kind == BlockKind::residual ? "residual" : "dsconv"; }

/// Activation per network component.
struct ActivationMap {
  Activation fec = Activation::relu();
  Activation stem = Activation::leaky_relu(0.1f);
  Activation backbone = Activation::leaky_relu(0.1f);
  Activation head_car = Activation::swish();
  Activation head_truck = Activation::swish();
  Activation head_vru = Activation::relu();

  friend bool operator==(const ActivationMap&, const ActivationMap&) = default;
};

enum class HeadId { car, truck, vru };

inline std::string to_string(HeadId head) {
  switch (head) {
    case HeadId::car: return "head_car";
    case HeadId::truck: return "head_truck";
    case HeadId::vru: return "head_vru";
  }
  return "?";
}

/// Number of score channels: one per class the head detects.
inline int head_score_channels(HeadId head) { return head == HeadId::vru ? 2 : 1; }

constexpr int kRegressionChannels = 6;  // cos, sin, dx, dy, log w, log l
constexpr std::array<HeadId, 3> kHeads = {HeadId::car, HeadId::truck, HeadId::vru};

struct ModelConfig {
  std::string name = "custom";
  /// Absent for the PointPillars baseline encoder (one per-point layer with
  /// batch norm, `pfn_filters` wide).
  std::optional<FecConfig> fec = FecConfig{};
  int pfn_filters = 32;
  int stem_filters = 12;
  BlockKind block_kind = BlockKind::dsconv;
  std::array<int, 4> blocks_per_stage = {3, 6, 6, 3};
  std::array<int, 4> stage_widths = {128, 128, 128, 256};
  std::array<int, 4> stage_strides = {2, 2, 2, 2};
  ActivationMap activations;
  GridSpec grid;
  int point_features = 2;
  int max_points_per_pillar = 20;
  /// Residual blocks are bottlenecks: inner width = stage width / expansion.
  int bottleneck_expansion = 4;
  /// 1-based backbone stage each head taps: car, truck, vru.
  std::array<int, 3> head_stages = {4, 3, 2};

  /// Channels of the per-pillar vectors after the first (per-point) layer.
  int pillar_width() const { return fec ? fec->f1 : pfn_filters; }
  /// Channels of the scattered pseudo-image.
  int pseudo_image_channels() const { return fec ? fec->f3 : pfn_filters; }
  int stem_convs() const { return block_kind == BlockKind::dsconv ? 1 : 2; }
  int head_stage(HeadId head) const { return head_stages[static_cast<int>(head)]; }
  const Activation& head_activation(HeadId head) const {
    switch (head) {
      case HeadId::car: return activations.head_car;
      case HeadId::truck: return activations.head_truck;
      case HeadId::vru: return activations.head_vru;
    }
    return activations.head_vru;
  }
  /// Cumulative downsampling of stage `stage` (1-based) relative to the grid.
  int cumulative_stride(int stage) const {
    int s = 1;
    for (int i = 0; i < stage; ++i) s *= stage_strides[i];
    return s;
  }

  void validate() const {
    if (fec) fec->validate();
    if (!fec && pfn_filters <= 0) throw ConfigError("pfn_filters must be positive");
    if (stem_filters <= 0) throw ConfigError("stem_filters must be positive");
    for (int i = 0; i < 4; ++i) {
      if (blocks_per_stage[i] <= 0)
        throw ConfigError("blocks_per_stage[" + std::to_string(i) + "] must be positive");
      if (stage_widths[i] <= 0) throw ConfigError("stage_widths[" + std::to_string(i) + "] must be positive");
      if (stage_strides[i] <= 0) throw ConfigError("stage_strides[" + std::to_string(i) + "] must be positive");
    }
    if (block_kind == BlockKind::residual) {
      if (bottleneck_expansion <= 0) throw ConfigError("bottleneck_expansion must be positive");
      for (int w : stage_widths)
        if (w % bottleneck_expansion != 0)
          throw ConfigError("stage width " + std::to_string(w) + " not divisible by bottleneck_expansion");
    }
    for (int s : head_stages)
      if (s < 1 || s > 4) throw ConfigError("head_stages entries must lie in 1..4");
    if (point_features < 0) throw ConfigError("point_features must be >= 0");
    if (max_points_per_pillar <= 0) throw ConfigError("max_points_per_pillar must be positive");
    grid.validate();
    activations.fec.validate();
    activations.stem.validate();
    activations.backbone.validate();
    activations.head_car.validate();
    activations.head_truck.validate();
    activations.head_vru.validate();
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"baseline", "dsfec-l", "dsfec-m", "dsfec-s"};
  return names;
}

inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "baseline") {
    c.fec.reset();
    c.pfn_filters = 32;
    c.stem_filters = 32;
    c.block_kind = BlockKind::residual;
    c.blocks_per_stage = {3, 6, 6, 3};
  } else if (name == "dsfec-l") {
    c.blocks_per_stage = {3, 6, 6, 3};
  } else if (name == "dsfec-m") {
    c.blocks_per_stage = {3, 3, 2, 3};
  } else if (name == "dsfec-s") {
    c.blocks_per_stage = {1, 1, 3, 2};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected baseline, dsfec-l, dsfec-m or dsfec-s)");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Flat JSON config mirroring ModelConfig field names. A "preset" key selects
// the starting point; every other key overrides one field.

namespace detail {

inline int positive_int(const nlohmann::json& v, const std::string& field) {
  if (!v.is_number_integer() || v.get<long long>() <= 0)
    throw ConfigError("config field '" + field + "': expected a positive integer");
  return v.get<int>();
}

template <std::size_t N>
std::array<int, N> positive_ints(const nlohmann::json& v, const std::string& field) {
  if (!v.is_array() || v.size() != N)
    throw ConfigError("config field '" + field + "': expected an array of " + std::to_string(N) +
                      " positive integers");
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = positive_int(v[i], field);
  return out;
}

inline std::array<double, 2> range_pair(const nlohmann::json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError("config field '" + field + "': expected [min, max]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace detail

inline ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  ModelConfig c;
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config field 'preset': expected a string");
    c = preset(it->get<std::string>());
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "name") {
      if (!v.is_string()) throw ConfigError("config field 'name': expected a string");
      c.name = v.get<std::string>();
    } else if (key == "fec") {
      if (v.is_null()) {
        c.fec.reset();
      } else {
        const auto f = detail::positive_ints<3>(v, "fec");
        c.fec = FecConfig{f[0], f[1], f[2]};
      }
    } else if (key == "pfn_filters") {
      c.pfn_filters = detail::positive_int(v, key);
    } else if (key == "stem_filters") {
      c.stem_filters = detail::positive_int(v, key);
    } else if (key == "block_kind") {
      if (v == "residual") c.block_kind = BlockKind::residual;
      else if (v == "dsconv") c.block_kind = BlockKind::dsconv;
      else throw ConfigError("config field 'block_kind': expected \"residual\" or \"dsconv\"");
    } else if (key == "blocks_per_stage") {
      c.blocks_per_stage = detail::positive_ints<4>(v, key);
    } else if (key == "stage_widths") {
      c.stage_widths = detail::positive_ints<4>(v, key);
    } else if (key == "stage_strides") {
      c.stage_strides = detail::positive_ints<4>(v, key);
    } else if (key == "head_stages") {
      c.head_stages = detail::positive_ints<3>(v, key);
    } else if (key == "bottleneck_expansion") {
      c.bottleneck_expansion = detail::positive_int(v, key);
    } else if (key == "max_points_per_pillar") {
      c.max_points_per_pillar = detail::positive_int(v, key);
    } else if (key == "point_features") {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError("config field 'point_features': expected a non-negative integer");
      c.point_features = v.get<int>();
    } else if (key == "activations") {
      if (!v.is_object()) throw ConfigError("config field 'activations': expected an object");
      for (const auto& [part, a] : v.items()) {
        const std::string field = "activations." + part;
        if (!a.is_string()) throw ConfigError("config field '" + field + "': expected a string");
        Activation act;
        try {
          act = parse_activation(a.get<std::string>());
        } catch (const ConfigError& e) {
          throw ConfigError("config field '" + field + "': " + e.what());
        }
        if (part == "fec") c.activations.fec = act;
        else if (part == "stem") c.activations.stem = act;
        else if (part == "backbone") c.activations.backbone = act;
        else if (part == "head_car") c.activations.head_car = act;
        else if (part == "head_truck") c.activations.head_truck = act;
        else if (part == "head_vru") c.activations.head_vru = act;
        else throw ConfigError("config field '" + field + "': unknown component");
      }
    } else if (key == "grid") {
      if (!v.is_object()) throw ConfigError("config field 'grid': expected an object");
      for (const auto& [gk, gv] : v.items()) {
        const std::string field = "grid." + gk;
        if (gk == "x_range" || gk == "y_range" || gk == "z_range") {
          const auto r = detail::range_pair(gv, field);
          double& lo = gk == "x_range" ? c.grid.x_min : gk == "y_range" ? c.grid.y_min : c.grid.z_min;
          double& hi = gk == "x_range" ? c.grid.x_max : gk == "y_range" ? c.grid.y_max : c.grid.z_max;
          lo = r[0];
          hi = r[1];
        }
        else if (gk == "cell_size") {
          if (!gv.is_number() || !(gv.get<double>() > 0.0))
            throw ConfigError("config field 'grid.cell_size': expected a positive number");
          c.grid.cell_size = gv.get<double>();
        } else {
          throw ConfigError("config field '" + field + "': unknown field");
        }
      }
    } else {
      throw ConfigError("config field '" + key + "': unknown field");
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["fec"] = c.fec ? nlohmann::json::array({c.fec->f1, c.fec->f2, c.fec->f3}) : nlohmann::json(nullptr);
  j["pfn_filters"] = c.pfn_filters;
  j["stem_filters"] = c.stem_filters;
  j["block_kind"] = to_string(c.block_kind);
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["stage_widths"] = c.stage_widths;
  j["stage_strides"] = c.stage_strides;
  j["head_stages"] = c.head_stages;
  j["bottleneck_expansion"] = c.bottleneck_expansion;
  j["point_features"] = c.point_features;
  j["max_points_per_pillar"] = c.max_points_per_pillar;
  j["activations"] = {{"fec", to_string(c.activations.fec)},
                      {"stem", to_string(c.activations.stem)},
                      {"backbone", to_string(c.activations.backbone)},
                      {"head_car", to_string(c.activations.head_car)},
                      {"head_truck", to_string(c.activations.head_truck)},
                      {"head_vru", to_string(c.activations.head_vru)}};
  j["grid"] = {{"x_range", {c.grid.x_min, c.grid.x_max}},
               {"y_range", {c.grid.y_min, c.grid.y_max}},
               {"z_range", {c.grid.z_min, c.grid.z_max}},
               {"cell_size", c.grid.cell_size}};
  return j;
}

}  // namespace dsfec
