#pragma once

// Named parameter tensors and the DSFW weight file:
//
//   "DSFW" | u32 version=1 | u32 tensor_count |
//   per tensor: u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dims |
//               prod(dims) x f32
//
// All integers and floats little-endian.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "dsfec/error.hpp"
#include "dsfec/graph.hpp"
#include "dsfec/rng.hpp"
#include "dsfec/tensor.hpp"

namespace dsfec {

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

class WeightStore {
 public:
  void set(const std::string& name, Tensor t) {
    if (t.values.size() != t.count())
      throw WeightError("tensor '" + name + "': value count does not match dims");
    tensors_[name] = std::move(t);
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw WeightError("missing weight tensor: " + name);
    return it->second;
  }
  Tensor& get_mut(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw WeightError("missing weight tensor: " + name);
    return it->second;
  }
  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }

  /// Throws WeightError naming every parameter of `graph` that is absent or
  /// has the wrong dims.
  void require(const LayerGraph& graph) const {
    std::string missing, mismatched;
    for (const auto& node : graph.nodes) {
      for (const auto& p : node_params(node)) {
        auto it = tensors_.find(p.name);
        if (it == tensors_.end())
          missing += (missing.empty() ? "" : ", ") + p.name;
        else if (it->second.dims != p.dims)
          mismatched += (mismatched.empty() ? "" : ", ") + p.name;
      }
    }
    if (!missing.empty() || !mismatched.empty()) {
      std::string msg;
      if (!missing.empty()) msg += "missing weight tensors: " + missing;
      if (!mismatched.empty()) msg += (msg.empty() ? "" : "; ") + std::string("wrong shape: ") + mismatched;
      throw WeightError(msg);
    }
  }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Score-branch bias prior: sigmoid(bias) == kScorePrior on a zero feature.
inline constexpr double kScorePrior = 0.01;

/// Deterministic untrained weights: He-style fan-in normal init for conv and
/// linear weights, zero biases except the score branches (set to the
/// kScorePrior logit), neutral batch norm (gamma 1, beta 0, mean 0, var 1).
/// Each tensor draws from its own stream so adding a layer does not perturb
/// the others.
inline WeightStore init_weights(const LayerGraph& graph, std::uint64_t seed) {
  WeightStore store;
  for (const auto& node : graph.nodes) {
    for (const auto& p : node_params(node)) {
      Tensor t{p.dims, std::vector<float>(static_cast<std::size_t>(p.count()), 0.0f)};
      const auto suffix = p.name.substr(p.name.rfind('.') + 1);
      if (suffix == "weight") {
        const double fan_in = node.kind == NodeKind::depthwise
                                  ? static_cast<double>(node.kernel) * node.kernel
                                  : static_cast<double>(node.in_channels) * node.kernel * node.kernel;
        const double sd = std::sqrt(2.0 / fan_in);
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the tensor name
        for (unsigned char ch : p.name) h = (h ^ ch) * 1099511628211ULL;
        SplitMix64 rng(derive_seed(seed, h));
        for (auto& v : t.values) v = static_cast<float>(rng.normal() * sd);
      } else if (suffix == "gamma" || suffix == "running_var") {
        std::fill(t.values.begin(), t.values.end(), 1.0f);
      } else if (suffix == "bias" && p.name.ends_with(".score.bias")) {
        std::fill(t.values.begin(), t.values.end(),
                  static_cast<float>(std::log(kScorePrior / (1.0 - kScorePrior))));
      }
      store.set(p.name, std::move(t));
    }
  }
  return store;
}

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U u;
  std::memcpy(&u, &v, sizeof u);
  for (std::size_t i = 0; i < sizeof u; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <class T>
  T get(const char* what) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
                                 std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                    std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    if (pos_ + sizeof(U) > bytes_.size()) throw WeightError(std::string("weight file truncated reading ") + what);
    U u = 0;
    for (std::size_t i = 0; i < sizeof u; ++i)
      u |= static_cast<U>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof u;
    T v;
    std::memcpy(&v, &u, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw WeightError(std::string("weight file truncated reading ") + what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

constexpr std::uint32_t kWeightFileVersion = 1;

inline std::string serialize_weights(const WeightStore& store) {
  std::string out = "DSFW";
  detail::put_le<std::uint32_t>(out, kWeightFileVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.tensors()) {
    if (name.size() > 0xFFFF) throw WeightError("tensor name too long: " + name.substr(0, 64));
    if (t.dims.size() > 0xFF) throw WeightError("tensor '" + name + "' has too many dims");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint32_t>(out, d);
    for (float v : t.values) detail::put_le<float>(out, v);
  }
  return out;
}

inline WeightStore deserialize_weights(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.bytes(4, "magic") != "DSFW") throw WeightError("not a DSFW weight file (bad magic bytes)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightFileVersion)
    throw WeightError("unsupported weight file version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto ndim = r.get<std::uint8_t>("ndim");
    Tensor t;
    std::uint64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      t.dims.push_back(r.get<std::uint32_t>("dims"));
      n *= t.dims.back();
    }
    if (n > bytes.size()) throw WeightError("tensor '" + name + "' larger than the file");
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) v = r.get<float>("values");
    if (store.contains(name)) throw WeightError("duplicate tensor '" + name + "'");
    store.set(name, std::move(t));
  }
  if (!r.done()) throw WeightError("trailing bytes after last tensor");
  return store;
}

inline void save_weights(const std::string& path, const WeightStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const auto bytes = serialize_weights(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline WeightStore load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightError("cannot open weight file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

// ---------------------------------------------------------------------------
// Kernel specs for one node, read from a store.

inline std::optional<std::vector<float>> node_bias(const LayerNode& n, const WeightStore& w) {
  if (!n.bias) return std::nullopt;
  return w.get(n.name + ".bias").values;
}

inline ConvSpec conv_spec(const LayerNode& n, const WeightStore& w) {
  return {n.kernel, n.kernel, n.in_channels, n.out_channels, n.stride, Padding::same,
          w.get(n.name + ".weight").values, node_bias(n, w)};
}

inline DepthwiseSpec depthwise_spec(const LayerNode& n, const WeightStore& w) {
  return {n.kernel, n.kernel, n.in_channels, n.stride, Padding::same, w.get(n.name + ".weight").values,
          node_bias(n, w)};
}

inline LinearSpec linear_spec(const LayerNode& n, const WeightStore& w) {
  return {n.in_channels, n.out_channels, w.get(n.name + ".weight").values, node_bias(n, w)};
}

inline BatchNormParams bn_params(const LayerNode& n, const WeightStore& w) {
  return {w.get(n.name + ".gamma").values, w.get(n.name + ".beta").values,
          w.get(n.name + ".running_mean").values, w.get(n.name + ".running_var").values, 1e-3f};
}

}  // namespace dsfec
