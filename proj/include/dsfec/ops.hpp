#pragma once

// Dense kernels over FeatureMap. Every function is pure; the Acc template
// parameter selects the accumulator type (float for deployment numerics,
// double for tight oracle comparisons).

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsfec/error.hpp"
#include "dsfec/tensor.hpp"

namespace dsfec {

/// Output extent and leading pad along one axis. "same" padding puts the
/// odd extra pixel at the bottom/right.
struct AxisGeometry {
  int out = 0;
  int pad_before = 0;
};

inline AxisGeometry axis_geometry(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::same) {
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
  }
  if (in < kernel)
    throw ConfigError("valid padding: input extent " + std::to_string(in) +
                      " smaller than kernel " + std::to_string(kernel));
  return {(in - kernel) / stride + 1, 0};
}

namespace detail {

inline void require_nonempty(const FeatureMap& input, const char* op) {
  if (input.height() <= 0 || input.width() <= 0 || input.channels() <= 0)
    throw ConfigError(std::string(op) + ": zero-sized input " + input.shape_string());
}

}  // namespace detail

template <class Acc = float>
FeatureMap conv2d(const FeatureMap& input, const ConvSpec& spec) {
  spec.validate();
  detail::require_nonempty(input, "conv2d");
  if (input.channels() != spec.in_channels)
    throw ConfigError("conv2d: input has " + std::to_string(input.channels()) +
                      " channels, spec expects " + std::to_string(spec.in_channels));

  const int cin = spec.in_channels;
  const int cout = spec.out_channels;
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  const auto gy = axis_geometry(input.height(), kh, spec.stride, spec.padding);
  const auto gx = axis_geometry(input.width(), kw, spec.stride, spec.padding);

  // Repack [out][in][kh][kw] -> [kh][kw][in][out] so the innermost loop
  // walks output channels contiguously.
  std::vector<float> packed(spec.weights.size());
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int u = 0; u < kh; ++u)
        for (int v = 0; v < kw; ++v)
          packed[((static_cast<std::size_t>(u) * kw + v) * cin + ci) * cout + co] =
              spec.weights[((static_cast<std::size_t>(co) * cin + ci) * kh + u) * kw + v];

  FeatureMap output(gy.out, gx.out, cout);
  std::vector<Acc> acc(cout);
  for (int oy = 0; oy < gy.out; ++oy) {
    for (int ox = 0; ox < gx.out; ++ox) {
      if (spec.bias)
        std::copy(spec.bias->begin(), spec.bias->end(), acc.begin());
      else
        std::fill(acc.begin(), acc.end(), Acc{0});
      for (int u = 0; u < kh; ++u) {
        const int iy = oy * spec.stride + u - gy.pad_before;
        if (iy < 0 || iy >= input.height()) continue;
        for (int v = 0; v < kw; ++v) {
          const int ix = ox * spec.stride + v - gx.pad_before;
          if (ix < 0 || ix >= input.width()) continue;
          const float* px = input.pixel(iy, ix);
          const float* w = packed.data() + (static_cast<std::size_t>(u) * kw + v) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const Acc x = px[ci];
            const float* wrow = w + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) acc[co] += x * static_cast<Acc>(wrow[co]);
          }
        }
      }
      float* out = output.pixel(oy, ox);
      for (int co = 0; co < cout; ++co) out[co] = static_cast<float>(acc[co]);
    }
  }
  return output;
}

template <class Acc = float>
FeatureMap depthwise_conv2d(const FeatureMap& input, const DepthwiseSpec& spec) {
  spec.validate();
  detail::require_nonempty(input, "depthwise_conv2d");
  if (input.channels() != spec.channels)
    throw ConfigError("depthwise_conv2d: " + std::to_string(spec.channels) +
                      " kernels for an input with " + std::to_string(input.channels()) +
                      " channels");

  const int c = spec.channels;
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  const auto gy = axis_geometry(input.height(), kh, spec.stride, spec.padding);
  const auto gx = axis_geometry(input.width(), kw, spec.stride, spec.padding);

  std::vector<float> packed(spec.weights.size());  // [kh][kw][c]
  for (int ch = 0; ch < c; ++ch)
    for (int t = 0; t < kh * kw; ++t)
      packed[static_cast<std::size_t>(t) * c + ch] = spec.weights[static_cast<std::size_t>(ch) * kh * kw + t];

  FeatureMap output(gy.out, gx.out, c);
  std::vector<Acc> acc(c);
  for (int oy = 0; oy < gy.out; ++oy) {
    for (int ox = 0; ox < gx.out; ++ox) {
      if (spec.bias)
        std::copy(spec.bias->begin(), spec.bias->end(), acc.begin());
      else
        std::fill(acc.begin(), acc.end(), Acc{0});
      for (int u = 0; u < kh; ++u) {
        const int iy = oy * spec.stride + u - gy.pad_before;
        if (iy < 0 || iy >= input.height()) continue;
        for (int v = 0; v < kw; ++v) {
          const int ix = ox * spec.stride + v - gx.pad_before;
          if (ix < 0 || ix >= input.width()) continue;
          const float* px = input.pixel(iy, ix);
          const float* w = packed.data() + (static_cast<std::size_t>(u) * kw + v) * c;
          for (int ch = 0; ch < c; ++ch) acc[ch] += static_cast<Acc>(px[ch]) * static_cast<Acc>(w[ch]);
        }
      }
      float* out = output.pixel(oy, ox);
      for (int ch = 0; ch < c; ++ch) out[ch] = static_cast<float>(acc[ch]);
    }
  }
  return output;
}

/// out = W * x (+ b) for one vector. `x` has spec.in_features entries.
template <class Acc = float>
void linear_apply(const LinearSpec& spec, const float* transposed, const float* x, float* out,
                  std::vector<Acc>& acc) {
  const int in = spec.in_features;
  const int n = spec.out_features;
  if (spec.bias)
    std::copy(spec.bias->begin(), spec.bias->end(), acc.begin());
  else
    std::fill(acc.begin(), acc.end(), Acc{0});
  for (int i = 0; i < in; ++i) {
    const Acc xi = x[i];
    const float* w = transposed + static_cast<std::size_t>(i) * n;
    for (int o = 0; o < n; ++o) acc[o] += xi * static_cast<Acc>(w[o]);
  }
  for (int o = 0; o < n; ++o) out[o] = static_cast<float>(acc[o]);
}

/// [out][in] -> [in][out].
inline std::vector<float> transpose_linear(const LinearSpec& spec) {
  std::vector<float> t(spec.weights.size());
  for (int o = 0; o < spec.out_features; ++o)
    for (int i = 0; i < spec.in_features; ++i)
      t[static_cast<std::size_t>(i) * spec.out_features + o] =
          spec.weights[static_cast<std::size_t>(o) * spec.in_features + i];
  return t;
}

template <class Acc = float>
FeatureMap pointwise_conv2d(const FeatureMap& input, const LinearSpec& spec) {
  spec.validate();
  detail::require_nonempty(input, "pointwise_conv2d");
  if (input.channels() != spec.in_features)
    throw ConfigError("pointwise_conv2d: input has " + std::to_string(input.channels()) +
                      " channels, weights expect " + std::to_string(spec.in_features));
  const auto t = transpose_linear(spec);
  FeatureMap output(input.height(), input.width(), spec.out_features);
  std::vector<Acc> acc(spec.out_features);
  for (int y = 0; y < input.height(); ++y)
    for (int x = 0; x < input.width(); ++x)
      linear_apply<Acc>(spec, t.data(), input.pixel(y, x), output.pixel(y, x), acc);
  return output;
}

inline FeatureMap batch_norm_infer(const FeatureMap& input, const BatchNormParams& params) {
  params.validate();
  if (params.channels() != static_cast<std::size_t>(input.channels()))
    throw ConfigError("batch_norm_infer: " + std::to_string(params.channels()) +
                      " parameter channels for input with " + std::to_string(input.channels()));
  const int c = input.channels();
  std::vector<float> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    scale[ch] = params.gamma[ch] / std::sqrt(params.running_var[ch] + params.epsilon);
    shift[ch] = params.beta[ch];
  }
  FeatureMap output = input;
  auto data = output.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ch = static_cast<int>(i % c);
    data[i] = (data[i] - params.running_mean[ch]) * scale[ch] + shift[ch];
  }
  return output;
}

inline float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

inline float softplus(float x) { return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x))); }

inline float activate(float x, const Activation& act) {
  switch (act.kind) {
    case Activation::Kind::identity: return x;
    case Activation::Kind::relu: return x > 0.0f ? x : 0.0f;
    case Activation::Kind::leaky_relu: return x >= 0.0f ? x : act.slope * x;
    case Activation::Kind::swish: return x * sigmoid(x);
    case Activation::Kind::mish: return x * std::tanh(softplus(x));
    case Activation::Kind::sigmoid: return sigmoid(x);
  }
  return x;
}

inline void apply_activation_inplace(std::span<float> values, const Activation& act) {
  act.validate();
  if (act.kind == Activation::Kind::identity) return;
  for (float& v : values) v = activate(v, act);
}

inline FeatureMap apply_activation(const FeatureMap& input, const Activation& act) {
  FeatureMap output = input;
  apply_activation_inplace(output.data(), act);
  return output;
}

inline FeatureMap add(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b))
    throw ConfigError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  FeatureMap output = a;
  auto out = output.data();
  auto rhs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i];
  return output;
}

}  // namespace dsfec
