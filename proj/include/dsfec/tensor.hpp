#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsfec/error.hpp"

namespace dsfec {

/// Dense height x width x channels activation tensor, channels innermost.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels)
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0)
      throw ConfigError("FeatureMap: negative dimension");
    data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
  }
  FeatureMap(int height, int width, int channels, std::vector<float> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height < 0 || width < 0 || channels < 0)
      throw ConfigError("FeatureMap: negative dimension");
    if (data_.size() != static_cast<std::size_t>(height) * width * channels)
      throw ConfigError("FeatureMap: data length " + std::to_string(data_.size()) +
                        " != " + std::to_string(height) + "*" + std::to_string(width) + "*" +
                        std::to_string(channels));
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int row, int col, int ch) noexcept { return data_[index(row, col, ch)]; }
  float at(int row, int col, int ch) const noexcept { return data_[index(row, col, ch)]; }

  float* pixel(int row, int col) noexcept { return data_.data() + index(row, col, 0); }
  const float* pixel(int row, int col) const noexcept { return data_.data() + index(row, col, 0); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const FeatureMap& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t index(int row, int col, int ch) const noexcept {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

enum class Padding { same, valid };

/// Standard k x k convolution. weights are [out][in][kh][kw].
struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Padding padding = Padding::same;
  std::vector<float> weights;
  std::optional<std::vector<float>> bias;

  void validate() const {
    if (kernel_h <= 0 || kernel_w <= 0 || in_channels <= 0 || out_channels <= 0 || stride <= 0)
      throw ConfigError("ConvSpec: kernel, channels and stride must be positive");
    const auto expected =
        static_cast<std::size_t>(out_channels) * in_channels * kernel_h * kernel_w;
    if (weights.size() != expected)
      throw ConfigError("ConvSpec: weights length " + std::to_string(weights.size()) +
                        " != " + std::to_string(expected));
    if (bias && bias->size() != static_cast<std::size_t>(out_channels))
      throw ConfigError("ConvSpec: bias length != out_channels");
  }
};

/// One k x k kernel per channel. weights are [channels][kh][kw].
struct DepthwiseSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int channels = 0;
  int stride = 1;
  Padding padding = Padding::same;
  std::vector<float> weights;
  std::optional<std::vector<float>> bias;

  void validate() const {
    if (kernel_h <= 0 || kernel_w <= 0 || channels <= 0 || stride <= 0)
      throw ConfigError("DepthwiseSpec: kernel, channels and stride must be positive");
    if (weights.size() != static_cast<std::size_t>(channels) * kernel_h * kernel_w)
      throw ConfigError("DepthwiseSpec: kernel count does not match channels (" +
                        std::to_string(weights.size() / (kernel_h * kernel_w)) + " kernels for " +
                        std::to_string(channels) + " channels)");
    if (bias && bias->size() != static_cast<std::size_t>(channels))
      throw ConfigError("DepthwiseSpec: bias length != channels");
  }
};

/// Fully-connected map applied per pixel (1x1 convolution) or per point.
/// weights are [out][in].
struct LinearSpec {
  int in_features = 0;
  int out_features = 0;
  std::vector<float> weights;
  std::optional<std::vector<float>> bias;

  void validate() const {
    if (in_features <= 0 || out_features <= 0)
      throw ConfigError("LinearSpec: feature counts must be positive");
    if (weights.size() != static_cast<std::size_t>(in_features) * out_features)
      throw ConfigError("LinearSpec: weights length " + std::to_string(weights.size()) +
                        " != " + std::to_string(out_features) + "*" +
                        std::to_string(in_features));
    if (bias && bias->size() != static_cast<std::size_t>(out_features))
      throw ConfigError("LinearSpec: bias length != out_features");
  }
};

/// Inference-mode batch normalization.
struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float epsilon = 1e-3f;

  std::size_t channels() const noexcept { return gamma.size(); }

  static BatchNormParams neutral(int channels, float epsilon = 1e-3f) {
    const auto n = static_cast<std::size_t>(channels);
    return {std::vector<float>(n, 1.0f), std::vector<float>(n, 0.0f),
            std::vector<float>(n, 0.0f), std::vector<float>(n, 1.0f), epsilon};
  }

  void validate() const {
    const auto n = gamma.size();
    if (beta.size() != n || running_mean.size() != n || running_var.size() != n)
      throw ConfigError("BatchNormParams: gamma/beta/mean/var lengths differ");
    if (!(epsilon >= 0.0f)) throw ConfigError("BatchNormParams: epsilon must be >= 0");
    for (float v : running_var) {
      if (!(v >= 0.0f)) throw ConfigError("BatchNormParams: running_var must be >= 0");
      if (!(v + epsilon > 0.0f)) throw ConfigError("BatchNormParams: running_var + epsilon == 0");
    }
  }
};

struct Activation {
  enum class Kind { identity, relu, leaky_relu, swish, mish, sigmoid };

  Kind kind = Kind::identity;
  float slope = 0.1f;  // leaky_relu only

  static Activation identity() { return {Kind::identity}; }
  static Activation relu() { return {Kind::relu}; }
  static Activation leaky_relu(float slope = 0.1f) { return {Kind::leaky_relu, slope}; }
  static Activation swish() { return {Kind::swish}; }
  static Activation mish() { return {Kind::mish}; }
  static Activation sigmoid() { return {Kind::sigmoid}; }

  void validate() const {
    if (kind == Kind::leaky_relu && !(slope > 0.0f && slope < 1.0f))
      throw ConfigError("leaky_relu slope must lie in (0,1), got " + std::to_string(slope));
  }

  friend bool operator==(const Activation& a, const Activation& b) {
    return a.kind == b.kind && (a.kind != Kind::leaky_relu || a.slope == b.slope);
  }
};

inline std::string to_string(Activation::Kind kind) {
  switch (kind) {
    case Activation::Kind::identity: return "identity";
    case Activation::Kind::relu: return "relu";
    case Activation::Kind::leaky_relu: return "leaky_relu";
    case Activation::Kind::swish: return "swish";
    case Activation::Kind::mish: return "mish";
    case Activation::Kind::sigmoid: return "sigmoid";
  }
  return "?";
}

inline std::string to_string(const Activation& act) {
  if (act.kind == Activation::Kind::leaky_relu) {
    // Shortest decimal that round-trips for the usual slopes.
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", static_cast<double>(act.slope));
    return "leaky_relu:" + std::string(buf);
  }
  return to_string(act.kind);
}

/// Parses "relu", "swish", "mish", "identity", "sigmoid", "leaky_relu" or
/// "leaky_relu:<slope>".
inline Activation parse_activation(std::string_view text) {
  Activation act;
  std::string_view name = text;
  std::optional<float> slope;
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    name = text.substr(0, colon);
    try {
      slope = std::stof(std::string(text.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("bad activation slope in '" + std::string(text) + "'");
    }
  }
  if (name == "identity") act.kind = Activation::Kind::identity;
  else if (name == "relu") act.kind = Activation::Kind::relu;
  else if (name == "leaky_relu") act.kind = Activation::Kind::leaky_relu;
  else if (name == "swish") act.kind = Activation::Kind::swish;
  else if (name == "mish") act.kind = Activation::Kind::mish;
  else if (name == "sigmoid") act.kind = Activation::Kind::sigmoid;
  else throw ConfigError("unknown activation '" + std::string(text) + "'");
  if (slope) {
    if (act.kind != Activation::Kind::leaky_relu)
      throw ConfigError("only leaky_relu takes a slope: '" + std::string(text) + "'");
    act.slope = *slope;
  }
  act.validate();
  return act;
}

}  // namespace dsfec
