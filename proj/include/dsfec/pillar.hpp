#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dsfec/error.hpp"
#include "dsfec/ops.hpp"
#include "dsfec/tensor.hpp"

namespace dsfec {

struct RadarPoint {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  std::vector<float> features;

  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
};

struct RadarFrame {
  int feature_count = 0;  // F: measurement channels per point
  std::vector<RadarPoint> points;

  friend bool operator==(const RadarFrame&, const RadarFrame&) = default;
};

/// BEV discretization. x/y ranges are half-open [min, max), z is closed.
struct GridSpec {
  double x_min = 0.0, x_max = 80.0;
  double y_min = -40.0, y_max = 40.0;
  double z_min = -2.5, z_max = 2.5;
  double cell_size = 0.5;

  int cols() const { return extent(x_min, x_max, "x"); }
  int rows() const { return extent(y_min, y_max, "y"); }

  void validate() const {
    if (!(cell_size > 0.0)) throw ConfigError("grid: cell_size must be positive");
    if (!(z_max >= z_min)) throw ConfigError("grid: z_max < z_min");
    (void)cols();
    (void)rows();
  }

  bool contains(double x, double y, double z) const noexcept {
    return x >= x_min && x < x_max && y >= y_min && y < y_max && z >= z_min && z <= z_max;
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  int extent(double lo, double hi, const char* axis) const {
    const double cells = (hi - lo) / cell_size;
    const double rounded = std::round(cells);
    if (!(cells > 0.0) || std::fabs(cells - rounded) > 1e-6)
      throw ConfigError(std::string("grid: ") + axis + " range is not a positive whole number of cells");
    return static_cast<int>(rounded);
  }
};

/// Filter counts of the three consecutive 1x1 layers of the FEC stack.
struct FecConfig {
  int f1 = 32;
  int f2 = 128;
  int f3 = 12;

  void validate() const {
    const std::string tag =
        "FEC filters (" + std::to_string(f1) + "," + std::to_string(f2) + "," + std::to_string(f3) + ")";
    if (f1 <= 0 || f2 <= 0 || f3 <= 0) throw ConfigError(tag + " must be positive");
    if (!(f1 < f2)) throw ConfigError(tag + " violate f1<f2");
    if (!(f2 > f3)) throw ConfigError(tag + " violate f2>f3");
    if (!(f1 >= f3)) throw ConfigError(tag + " violate f1>=f3");
  }

  friend bool operator==(const FecConfig&, const FecConfig&) = default;
};

/// Width of the augmented per-point vector: x, y, z, F features, x-xc, y-yc.
constexpr int augmented_width(int feature_count) noexcept { return 3 + feature_count + 2; }

struct Pillar {
  int row = 0;
  int col = 0;
  int point_count = 0;
  std::vector<float> points;  // point_count x augmented_width, row-major
};

struct PillarSet {
  GridSpec grid;
  int feature_count = 0;
  int max_points_per_pillar = 20;
  std::vector<Pillar> pillars;  // first-seen order
  std::size_t out_of_range = 0;
  std::size_t overflow = 0;

  int point_width() const noexcept { return augmented_width(feature_count); }
  std::size_t assigned() const noexcept {
    std::size_t n = 0;
    for (const auto& p : pillars) n += static_cast<std::size_t>(p.point_count);
    return n;
  }
};

inline PillarSet pillarize(const RadarFrame& frame, const GridSpec& grid, int max_points_per_pillar) {
  grid.validate();
  if (max_points_per_pillar <= 0) throw ConfigError("max_points_per_pillar must be positive");
  PillarSet set;
  set.grid = grid;
  set.feature_count = frame.feature_count;
  set.max_points_per_pillar = max_points_per_pillar;

  const int rows = grid.rows();
  const int cols = grid.cols();
  const int width = set.point_width();
  std::vector<int> slot(static_cast<std::size_t>(rows) * cols, -1);

  for (const auto& p : frame.points) {
    if (p.features.size() != static_cast<std::size_t>(frame.feature_count))
      throw ConfigError("pillarize: point carries " + std::to_string(p.features.size()) +
                        " features, frame declares " + std::to_string(frame.feature_count));
    if (!grid.contains(p.x, p.y, p.z)) {
      ++set.out_of_range;
      continue;
    }
    const int row = std::min(static_cast<int>(std::floor((p.y - grid.y_min) / grid.cell_size)), rows - 1);
    const int col = std::min(static_cast<int>(std::floor((p.x - grid.x_min) / grid.cell_size)), cols - 1);
    int& idx = slot[static_cast<std::size_t>(row) * cols + col];
    if (idx < 0) {
      idx = static_cast<int>(set.pillars.size());
      set.pillars.push_back(Pillar{row, col, 0, {}});
    }
    Pillar& pillar = set.pillars[static_cast<std::size_t>(idx)];
    if (pillar.point_count >= max_points_per_pillar) {
      ++set.overflow;
      continue;
    }
    const double xc = grid.x_min + (col + 0.5) * grid.cell_size;
    const double yc = grid.y_min + (row + 0.5) * grid.cell_size;
    pillar.points.reserve(pillar.points.size() + width);
    pillar.points.push_back(p.x);
    pillar.points.push_back(p.y);
    pillar.points.push_back(p.z);
    pillar.points.insert(pillar.points.end(), p.features.begin(), p.features.end());
    pillar.points.push_back(static_cast<float>(p.x - xc));
    pillar.points.push_back(static_cast<float>(p.y - yc));
    ++pillar.point_count;
  }
  return set;
}

/// Shared per-point linear layer (+ optional batch norm) + activation, then
/// elementwise max over each pillar's points. Returns P x 1 x out_features.
inline FeatureMap pillar_feature_net(const PillarSet& pillars, const LinearSpec& layer,
                                     const BatchNormParams* batch_norm = nullptr,
                                     const Activation& act = Activation::relu()) {
  layer.validate();
  if (layer.in_features != pillars.point_width())
    throw ConfigError("pillar_feature_net: weights expect " + std::to_string(layer.in_features) +
                      " point features, pillars carry " + std::to_string(pillars.point_width()));
  if (batch_norm) {
    batch_norm->validate();
    if (batch_norm->channels() != static_cast<std::size_t>(layer.out_features))
      throw ConfigError("pillar_feature_net: batch norm width != out_features");
  }
  const int n = layer.out_features;
  std::vector<float> scale, shift;
  if (batch_norm) {
    scale.resize(n);
    shift.resize(n);
    for (int c = 0; c < n; ++c) {
      scale[c] = batch_norm->gamma[c] / std::sqrt(batch_norm->running_var[c] + batch_norm->epsilon);
      shift[c] = batch_norm->beta[c];
    }
  }
  const auto t = transpose_linear(layer);
  FeatureMap out(static_cast<int>(pillars.pillars.size()), 1, n);
  std::vector<float> acc(n), point_out(n);
  const int width = pillars.point_width();
  for (std::size_t i = 0; i < pillars.pillars.size(); ++i) {
    const Pillar& pillar = pillars.pillars[i];
    float* dst = out.pixel(static_cast<int>(i), 0);
    for (int k = 0; k < pillar.point_count; ++k) {
      linear_apply<float>(layer, t.data(), pillar.points.data() + static_cast<std::size_t>(k) * width,
                          point_out.data(), acc);
      for (int c = 0; c < n; ++c) {
        float v = point_out[c];
        if (batch_norm) v = (v - batch_norm->running_mean[c]) * scale[c] + shift[c];
        v = activate(v, act);
        dst[c] = (k == 0) ? v : std::max(dst[c], v);
      }
    }
  }
  return out;
}

/// The three 1x1 layers of the FEC stack: `point` is the pillar net's
/// per-point layer (F_aug -> f1), `enhance` f1 -> f2, `compress` f2 -> f3.
/// None of them is followed by batch normalization.
struct FecWeights {
  LinearSpec point;
  LinearSpec enhance;
  LinearSpec compress;
};

/// Applies the enhancement and compression layers (linear + activation each)
/// to per-pillar f1 vectors. Input and output are P x 1 x C.
inline FeatureMap fec_forward(const FeatureMap& pillar_vectors, const FecConfig& config,
                              const FecWeights& weights, const Activation& act = Activation::relu()) {
  config.validate();
  weights.point.validate();
  weights.enhance.validate();
  weights.compress.validate();
  if (weights.point.out_features != config.f1 || weights.enhance.in_features != config.f1 ||
      weights.enhance.out_features != config.f2 || weights.compress.in_features != config.f2 ||
      weights.compress.out_features != config.f3)
    throw ConfigError("fec_forward: weight shapes do not follow f1->f2->f3 = " +
                      std::to_string(config.f1) + "->" + std::to_string(config.f2) + "->" +
                      std::to_string(config.f3));
  if (pillar_vectors.channels() != config.f1)
    throw ConfigError("fec_forward: input width " + std::to_string(pillar_vectors.channels()) +
                      " != f1 " + std::to_string(config.f1));
  FeatureMap out(pillar_vectors.height(), 1, config.f3);
  if (pillar_vectors.height() == 0) return out;
  const auto te = transpose_linear(weights.enhance);
  const auto tc = transpose_linear(weights.compress);
  std::vector<float> acc2(config.f2), acc3(config.f3), hidden(config.f2);
  for (int i = 0; i < pillar_vectors.height(); ++i) {
    linear_apply<float>(weights.enhance, te.data(), pillar_vectors.pixel(i, 0), hidden.data(), acc2);
    apply_activation_inplace(hidden, act);
    float* dst = out.pixel(i, 0);
    linear_apply<float>(weights.compress, tc.data(), hidden.data(), dst, acc3);
    apply_activation_inplace(std::span<float>(dst, config.f3), act);
  }
  return out;
}

/// Writes each pillar's vector into its (row, col) cell; every other cell is 0.
inline FeatureMap scatter_to_pseudo_image(const PillarSet& pillars, const FeatureMap& vectors,
                                          const GridSpec& grid) {
  if (vectors.height() != static_cast<int>(pillars.pillars.size()) || vectors.width() != 1)
    throw ConfigError("scatter: expected " + std::to_string(pillars.pillars.size()) +
                      "x1 pillar vectors, got " + vectors.shape_string());
  FeatureMap image(grid.rows(), grid.cols(), vectors.channels());
  for (std::size_t i = 0; i < pillars.pillars.size(); ++i) {
    const auto& p = pillars.pillars[i];
    if (p.row < 0 || p.row >= image.height() || p.col < 0 || p.col >= image.width())
      throw ConfigError("scatter: pillar index out of bounds");
    std::copy_n(vectors.pixel(static_cast<int>(i), 0), vectors.channels(), image.pixel(p.row, p.col));
  }
  return image;
}

/// Inverse of scatter at the non-empty cells.
inline FeatureMap gather_from_pseudo_image(const PillarSet& pillars, const FeatureMap& image) {
  FeatureMap vectors(static_cast<int>(pillars.pillars.size()), 1, image.channels());
  for (std::size_t i = 0; i < pillars.pillars.size(); ++i) {
    const auto& p = pillars.pillars[i];
    std::copy_n(image.pixel(p.row, p.col), image.channels(), vectors.pixel(static_cast<int>(i), 0));
  }
  return vectors;
}

// ---------------------------------------------------------------------------
// Radar frame CSV: header `x,y,z,f0,f1,...`, one point per row.

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline void append_float(std::string& out, float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

}  // namespace detail

inline RadarFrame parse_frame_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw InputError("empty file: missing header", 1);
  ++line_no;
  const auto header = detail::split_commas(detail::trim(line));
  if (header.size() < 3 || detail::trim(header[0]) != "x" || detail::trim(header[1]) != "y" ||
      detail::trim(header[2]) != "z")
    throw InputError("header must start with x,y,z", line_no);
  RadarFrame frame;
  frame.feature_count = static_cast<int>(header.size()) - 3;
  for (int i = 0; i < frame.feature_count; ++i) {
    if (detail::trim(header[3 + i]) != "f" + std::to_string(i))
      throw InputError("header column " + std::to_string(4 + i) + " must be f" + std::to_string(i), line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto fields = detail::split_commas(body);
    if (fields.size() != header.size())
      throw InputError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    std::vector<float> values(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto f = detail::trim(fields[i]);
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[i]);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
        throw InputError("field " + std::to_string(i + 1) + " is not a number: '" + std::string(f) + "'",
                         line_no);
      if (!std::isfinite(values[i]))
        throw InputError("field " + std::to_string(i + 1) + " is not finite", line_no);
    }
    RadarPoint p{values[0], values[1], values[2], std::vector<float>(values.begin() + 3, values.end())};
    frame.points.push_back(std::move(p));
  }
  return frame;
}

inline RadarFrame read_frame_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open radar frame '" + path + "'");
  return parse_frame_csv(in);
}

inline std::string format_frame_csv(const RadarFrame& frame) {
  std::string out = "x,y,z";
  for (int i = 0; i < frame.feature_count; ++i) out += ",f" + std::to_string(i);
  out += '\n';
  for (const auto& p : frame.points) {
    detail::append_float(out, p.x);
    out += ',';
    detail::append_float(out, p.y);
    out += ',';
    detail::append_float(out, p.z);
    for (float f : p.features) {
      out += ',';
      detail::append_float(out, f);
    }
    out += '\n';
  }
  return out;
}

inline void write_frame_csv(const std::string& path, const RadarFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto text = format_frame_csv(frame);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace dsfec
