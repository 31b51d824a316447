#pragma once

#include <string>
#include <utility>
#include <vector>

#include "simpgan/rng.hpp"
#include "simpgan/tensor.hpp"

namespace simpgan {

enum class LayerKind {
  conv,
  dense,
  instance_norm,
  activation,
  residual_block,
  downsample,
  upsample,
};

enum class Activation { relu, leaky_relu, sigmoid, tanh };

struct LayerSpec {
  LayerKind kind;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  // Convs that feed an instance norm carry no bias: the norm removes
  // constant shifts, which would leave the bias without a gradient.
  bool bias = true;
  Activation act = Activation::relu;
  double slope = 0.2;

  LayerSpec& no_bias() {
    bias = false;
    return *this;
  }
};

inline LayerSpec conv_layer(std::string name, int in_ch, int out_ch, int kernel = 3,
                            int stride = 1, int pad = 1) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.name = std::move(name);
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

inline LayerSpec dense_layer(std::string name, int in_dim, int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.name = std::move(name);
  s.in_channels = in_dim;
  s.out_channels = out_dim;
  return s;
}

inline LayerSpec instance_norm_layer(std::string name, int channels) {
  LayerSpec s;
  s.kind = LayerKind::instance_norm;
  s.name = std::move(name);
  s.in_channels = channels;
  s.out_channels = channels;
  return s;
}

inline LayerSpec activation_layer(std::string name, Activation act, double slope = 0.2) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.name = std::move(name);
  s.act = act;
  s.slope = slope;
  return s;
}

inline LayerSpec residual_block_layer(std::string name, int channels) {
  LayerSpec s;
  s.kind = LayerKind::residual_block;
  s.name = std::move(name);
  s.in_channels = channels;
  s.out_channels = channels;
  return s;
}

inline LayerSpec downsample_layer(std::string name, int in_ch, int out_ch) {
  LayerSpec s = conv_layer(std::move(name), in_ch, out_ch, 3, 2, 1);
  s.kind = LayerKind::downsample;
  return s;
}

inline LayerSpec upsample_layer(std::string name, int in_ch, int out_ch) {
  LayerSpec s = conv_layer(std::move(name), in_ch, out_ch, 3, 1, 1);
  s.kind = LayerKind::upsample;
  return s;
}

/// Ordered, name-addressed collection of trainable tensors. Iteration order
/// is insertion order, which keeps checkpoints and SGD sweeps deterministic.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> tensor) {
    if (has(name)) throw ShapeError("param set: duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(true);
    items_.emplace_back(std::move(name), std::move(tensor));
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : items_) {
      if (n == name) return true;
    }
    return false;
  }

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& [n, t] : items_) {
      if (n == name) return t;
    }
    throw ShapeError("param set: unknown parameter '" + name + "'");
  }

  Tensor<T>& at(const std::string& name) {
    for (auto& [n, t] : items_) {
      if (n == name) return t;
    }
    throw ShapeError("param set: unknown parameter '" + name + "'");
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  /// Same values, gradients blocked; used to freeze a model inside a loss.
  ParamSet frozen() const {
    ParamSet out;
    for (const auto& [name, t] : items_) {
      out.items_.emplace_back(name, t.frozen());
    }
    return out;
  }

  void watch_all(Graph<T>& g) const {
    for (const auto& [name, t] : items_) g.watch(t);
  }

  bool all_finite() const {
    for (const auto& [name, t] : items_) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

namespace detail {

inline void validate_layer(const LayerSpec& spec) {
  if (spec.kernel < 1 || spec.stride < 1 || spec.pad < 0) {
    throw ShapeError("layer " + spec.name + ": kernel and stride must be positive");
  }
  const bool needs_channels = spec.kind != LayerKind::activation;
  if (needs_channels && (spec.in_channels < 1 || spec.out_channels < 1)) {
    throw ShapeError("layer " + spec.name + ": channel counts must be positive");
  }
}

template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, int fan_in) {
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
void init_conv(ParamSet<T>& params, Rng& rng, const std::string& prefix, int in_ch, int out_ch,
               int kernel, bool bias) {
  params.add(prefix + ".w",
             he_normal<T>(rng, {out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel));
  if (bias) params.add(prefix + ".b", Tensor<T>::zeros({out_ch}));
}

template <typename T>
void init_norm(ParamSet<T>& params, const std::string& prefix, int channels) {
  params.add(prefix + ".gamma", Tensor<T>::full({channels}, T(1)));
  params.add(prefix + ".beta", Tensor<T>::zeros({channels}));
}

}  // namespace detail

/// Deterministic initialization: conv/dense weights are zero-mean normals
/// scaled by fan-in (variance 2/fan_in), biases zero, norm scales one.
/// Each layer draws from its own named substream of `seed`.
template <typename T>
ParamSet<T> init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  ParamSet<T> params;
  const Rng root = Rng(seed).split("init");
  for (const auto& spec : specs) {
    detail::validate_layer(spec);
    Rng rng = root.split(spec.name);
    switch (spec.kind) {
      case LayerKind::conv:
      case LayerKind::downsample:
      case LayerKind::upsample:
        detail::init_conv(params, rng, spec.name, spec.in_channels, spec.out_channels,
                          spec.kernel, spec.bias);
        break;
      case LayerKind::dense:
        params.add(spec.name + ".w",
                   detail::he_normal<T>(rng, {spec.out_channels, spec.in_channels},
                                        spec.in_channels));
        params.add(spec.name + ".b", Tensor<T>::zeros({spec.out_channels}));
        break;
      case LayerKind::instance_norm:
        detail::init_norm(params, spec.name, spec.in_channels);
        break;
      case LayerKind::activation:
        break;
      case LayerKind::residual_block:
        detail::init_conv(params, rng, spec.name + ".conv1", spec.in_channels, spec.out_channels,
                          spec.kernel, false);
        detail::init_norm(params, spec.name + ".norm1", spec.out_channels);
        detail::init_conv(params, rng, spec.name + ".conv2", spec.out_channels, spec.out_channels,
                          spec.kernel, false);
        detail::init_norm(params, spec.name + ".norm2", spec.out_channels);
        break;
    }
  }
  return params;
}

template <typename T>
Tensor<T> apply_activation(Graph<T>& g, Activation act, const Tensor<T>& x, double slope = 0.2) {
  switch (act) {
    case Activation::relu: return g.relu(x);
    case Activation::leaky_relu: return g.leaky_relu(x, slope);
    case Activation::sigmoid: return g.sigmoid(x);
    case Activation::tanh: return g.tanh(x);
  }
  throw ShapeError("unknown activation");
}

template <typename T>
Tensor<T> layer_forward(Graph<T>& g, const LayerSpec& spec, const ParamSet<T>& params,
                        const Tensor<T>& x) {
  detail::validate_layer(spec);
  const auto& s = x.shape();
  auto check_channels = [&](int expected) {
    if (s.size() != 4 || s[1] != expected) {
      throw ShapeError("layer " + spec.name + ": input " + shape_str(s) + " does not provide " +
                       std::to_string(expected) + " channels");
    }
  };
  switch (spec.kind) {
    case LayerKind::conv:
    case LayerKind::downsample: {
      check_channels(spec.in_channels);
      return g.conv2d(x, params.at(spec.name + ".w"),
                      spec.bias ? params.at(spec.name + ".b") : Tensor<T>{}, spec.stride,
                      spec.pad);
    }
    case LayerKind::upsample: {
      check_channels(spec.in_channels);
      auto up = g.upsample_nearest(x, 2);
      return g.conv2d(up, params.at(spec.name + ".w"),
                      spec.bias ? params.at(spec.name + ".b") : Tensor<T>{}, spec.stride,
                      spec.pad);
    }
    case LayerKind::dense: {
      if (s.size() != 1 || s[0] != spec.in_channels) {
        throw ShapeError("layer " + spec.name + ": input " + shape_str(s) +
                         " does not match dense width " + std::to_string(spec.in_channels));
      }
      return g.add(g.matmul(params.at(spec.name + ".w"), x), params.at(spec.name + ".b"));
    }
    case LayerKind::instance_norm: {
      check_channels(spec.in_channels);
      return g.instance_norm(x, params.at(spec.name + ".gamma"), params.at(spec.name + ".beta"));
    }
    case LayerKind::activation:
      return apply_activation(g, spec.act, x, spec.slope);
    case LayerKind::residual_block: {
      check_channels(spec.in_channels);
      auto h = g.conv2d(x, params.at(spec.name + ".conv1.w"), 1, spec.kernel / 2);
      h = g.instance_norm(h, params.at(spec.name + ".norm1.gamma"),
                          params.at(spec.name + ".norm1.beta"));
      h = g.relu(h);
      h = g.conv2d(h, params.at(spec.name + ".conv2.w"), 1, spec.kernel / 2);
      h = g.instance_norm(h, params.at(spec.name + ".norm2.gamma"),
                          params.at(spec.name + ".norm2.beta"));
      return g.add(x, h);
    }
  }
  throw ShapeError("layer " + spec.name + ": unknown layer kind");
}

template <typename T>
Tensor<T> net_forward(Graph<T>& g, const std::vector<LayerSpec>& specs, const ParamSet<T>& params,
                      Tensor<T> x) {
  for (const auto& spec : specs) x = layer_forward(g, spec, params, x);
  return x;
}

/// Output shape a layer will produce for `in`, without running it.
inline Shape infer_layer_shape(const LayerSpec& spec, const Shape& in) {
  detail::validate_layer(spec);
  auto conv_out = [&](const Shape& s, int stride, int pad, int kernel, int out_ch) {
    if (s.size() != 4) throw ShapeError("layer " + spec.name + ": expected NCHW input");
    const int oh = (s[2] + 2 * pad - kernel) / stride + 1;
    const int ow = (s[3] + 2 * pad - kernel) / stride + 1;
    return Shape{s[0], out_ch, oh, ow};
  };
  switch (spec.kind) {
    case LayerKind::conv:
    case LayerKind::downsample:
      return conv_out(in, spec.stride, spec.pad, spec.kernel, spec.out_channels);
    case LayerKind::upsample: {
      Shape up = in;
      if (up.size() != 4) throw ShapeError("layer " + spec.name + ": expected NCHW input");
      up[2] *= 2;
      up[3] *= 2;
      return conv_out(up, spec.stride, spec.pad, spec.kernel, spec.out_channels);
    }
    case LayerKind::dense:
      return Shape{spec.out_channels};
    case LayerKind::instance_norm:
    case LayerKind::activation:
    case LayerKind::residual_block:
      return in;
  }
  throw ShapeError("layer " + spec.name + ": unknown layer kind");
}

inline Shape infer_net_shape(const std::vector<LayerSpec>& specs, Shape in) {
  for (const auto& spec : specs) in = infer_layer_shape(spec, in);
  return in;
}

}  // namespace simpgan
