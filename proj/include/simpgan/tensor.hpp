#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "simpgan/common.hpp"

namespace simpgan {

namespace detail {

inline std::int64_t next_tensor_id() {
  static std::atomic<std::int64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;  // materialized lazily by Graph::backward
  bool requires_grad = false;
  std::int64_t id = 0;
};

}  // namespace detail

/// Dense n-dimensional array with row-major scalar storage.
///
/// Tensor is a cheap handle: copies share the underlying value buffer, which
/// is how weight sharing and in-place SGD updates work. `frozen()` produces a
/// view over the same values that never receives gradients.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from(std::move(shape), {});
  }

  static Tensor full(Shape shape, T fill) {
    const auto n = static_cast<std::size_t>(simpgan::numel(shape));
    Tensor t;
    t.d_ = std::make_shared<detail::TensorStorage<T>>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::make_shared<std::vector<T>>(n, fill);
    t.d_->id = detail::next_tensor_id();
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    const auto n = static_cast<std::size_t>(simpgan::numel(shape));
    if (values.empty()) values.assign(n, T(0));
    if (values.size() != n) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.d_ = std::make_shared<detail::TensorStorage<T>>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::make_shared<std::vector<T>>(std::move(values));
    t.d_->id = detail::next_tensor_id();
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::int64_t numel() const { return simpgan::numel(d_->shape); }
  std::int64_t id() const { return d_->id; }
  bool requires_grad() const { return d_ && d_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    d_->requires_grad = on;
    return *this;
  }

  const std::vector<T>& value() const { return *d_->value; }
  std::vector<T>& value() { return *d_->value; }

  /// Gradient buffer; empty until a backward pass has touched this tensor.
  const std::vector<T>& grad() const { return d_->grad; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return (*d_->value)[0];
  }

  /// View sharing this tensor's values but excluded from differentiation.
  Tensor frozen() const {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorStorage<T>>();
    t.d_->shape = d_->shape;
    t.d_->value = d_->value;
    t.d_->requires_grad = false;
    t.d_->id = detail::next_tensor_id();
    return t;
  }

  /// Deep copy of the values; gradient state is not copied.
  Tensor clone() const {
    Tensor t = from(d_->shape, *d_->value);
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  bool all_finite() const {
    for (T v : *d_->value) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // Internal: used by Graph during backward. Tensor is a handle, so gradient
  // state lives in the shared storage and is reachable through const handles.
  std::vector<T>& grad_buffer() const {
    if (d_->grad.size() != d_->value->size()) d_->grad.assign(d_->value->size(), T(0));
    return d_->grad;
  }
  void zero_grad() const { d_->grad.assign(d_->value->size(), T(0)); }

 private:
  std::shared_ptr<detail::TensorStorage<T>> d_;
};

/// Forward operation kinds. `clamp` and `reshape` are internal helpers used
/// by loss plumbing; everything else is part of the public op contract.
enum class Op {
  add,
  sub,
  mul,
  scale,
  matmul,
  conv2d,
  relu,
  leaky_relu,
  sigmoid,
  tanh,
  softmax,
  square,
  abs,
  sum,
  mean,
  log,
  concat,
  pad,
  upsample_nearest,
  instance_norm,
  clamp,
  reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::conv2d: return "conv2d";
    case Op::relu: return "relu";
    case Op::leaky_relu: return "leaky_relu";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::softmax: return "softmax";
    case Op::square: return "square";
    case Op::abs: return "abs";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::log: return "log";
    case Op::concat: return "concat";
    case Op::pad: return "pad";
    case Op::upsample_nearest: return "upsample_nearest";
    case Op::instance_norm: return "instance_norm";
    case Op::clamp: return "clamp";
    case Op::reshape: return "reshape";
  }
  return "?";
}

struct OpAttrs {
  int stride = 1;         // conv2d
  int pad = 0;            // conv2d
  int pad_h = 0;          // pad
  int pad_w = 0;          // pad
  int axis = -1;          // softmax, concat (-1 = last)
  int factor = 2;         // upsample_nearest
  double alpha = 1.0;     // scale
  double slope = 0.2;     // leaky_relu
  double eps = 1e-5;      // instance_norm
  double lo = 0.0;        // clamp
  double hi = 1.0;        // clamp
  std::vector<int> axes;  // sum/mean reduction axes (empty = all)
  Shape shape;            // reshape target
};

/// Define-by-run tape. Ops record a node whenever any input requires a
/// gradient; `backward` sweeps the tape once in reverse and returns the
/// gradient of every watched or encountered leaf, keyed by tensor id.
///
/// A Graph is rebuilt per training iteration and is confined to one thread.
template <typename T>
class Graph {
 public:
  Graph() = default;
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Optional instrumentation: when enabled, the graph records the smallest
  /// distance of any relu/leaky_relu/abs/clamp input from its kink, and the
  /// smallest per-plane stddev seen by instance_norm. Gradient checks use
  /// both to redraw points that finite differences cannot resolve.
  void track_kink_clearance(bool on) { track_kinks_ = on; }
  double kink_clearance() const { return kink_clearance_; }
  double min_norm_std() const { return min_norm_std_; }

  /// Register a leaf so backward reports its gradient even when it does not
  /// participate in the loss (it then gets zeros).
  void watch(const Tensor<T>& leaf) {
    if (!leaf.requires_grad()) return;
    if (watched_ids_.insert(leaf.id()).second) watched_.push_back(leaf);
  }

  // ---- generic dispatcher ------------------------------------------------

  Tensor<T> forward(Op op, const std::vector<Tensor<T>>& inputs, const OpAttrs& attrs = {}) {
    switch (op) {
      case Op::add: need(op, inputs, 2); return add(inputs[0], inputs[1]);
      case Op::sub: need(op, inputs, 2); return sub(inputs[0], inputs[1]);
      case Op::mul: need(op, inputs, 2); return mul(inputs[0], inputs[1]);
      case Op::scale: need(op, inputs, 1); return scale(inputs[0], attrs.alpha);
      case Op::matmul: need(op, inputs, 2); return matmul(inputs[0], inputs[1]);
      case Op::conv2d:
        if (inputs.size() == 2) return conv2d(inputs[0], inputs[1], {}, attrs.stride, attrs.pad);
        need(op, inputs, 3);
        return conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
      case Op::relu: need(op, inputs, 1); return relu(inputs[0]);
      case Op::leaky_relu: need(op, inputs, 1); return leaky_relu(inputs[0], attrs.slope);
      case Op::sigmoid: need(op, inputs, 1); return sigmoid(inputs[0]);
      case Op::tanh: need(op, inputs, 1); return tanh(inputs[0]);
      case Op::softmax: need(op, inputs, 1); return softmax(inputs[0], attrs.axis);
      case Op::square: need(op, inputs, 1); return square(inputs[0]);
      case Op::abs: need(op, inputs, 1); return abs(inputs[0]);
      case Op::sum: need(op, inputs, 1); return sum(inputs[0], attrs.axes);
      case Op::mean: need(op, inputs, 1); return mean(inputs[0], attrs.axes);
      case Op::log: need(op, inputs, 1); return log(inputs[0]);
      case Op::concat: return concat(inputs, attrs.axis);
      case Op::pad: need(op, inputs, 1); return pad(inputs[0], attrs.pad_h, attrs.pad_w);
      case Op::upsample_nearest: need(op, inputs, 1); return upsample_nearest(inputs[0], attrs.factor);
      case Op::instance_norm:
        if (inputs.size() == 1) return instance_norm(inputs[0], attrs.eps);
        need(op, inputs, 3);
        return instance_norm(inputs[0], inputs[1], inputs[2], attrs.eps);
      case Op::clamp: need(op, inputs, 1); return clamp(inputs[0], attrs.lo, attrs.hi);
      case Op::reshape: need(op, inputs, 1); return reshape(inputs[0], attrs.shape);
    }
    throw ShapeError("forward: unknown op");
  }

  // ---- elementwise arithmetic --------------------------------------------

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(Op::add, a, b); }
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(Op::sub, a, b); }
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(Op::mul, a, b); }

  Tensor<T> scale(const Tensor<T>& x, double alpha) {
    auto out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    const T a = static_cast<T>(alpha);
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = a * xv[i];
    record(out, {x}, [x, out, a]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += a * go[i];
    });
    return out;
  }

  // ---- linear algebra ----------------------------------------------------

  /// [M,K]x[K,N] -> [M,N], or [M,K]x[K] -> [M].
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const bool vec = sb.size() == 1;
    if (sa.size() != 2 || (sb.size() != 2 && !vec) || sa[1] != sb[0]) {
      throw ShapeError(std::string("matmul: incompatible shapes ") + shape_str(sa) + " x " +
                       shape_str(sb));
    }
    const int m = sa[0], k = sa[1], n = vec ? 1 : sb[1];
    auto out = Tensor<T>::zeros(vec ? Shape{m} : Shape{m, n});
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    T* po = out.value().data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const T av = pa[i * k + p];
        const T* brow = pb + p * n;
        T* orow = po + i * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    record(out, {a, b}, [a, b, out, m, k, n]() mutable {
      const T* go = out.grad().data();
      const T* pa = a.value().data();
      const T* pb = b.value().data();
      if (a.requires_grad()) {
        T* ga = a.grad_buffer().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            T acc = 0;
            const T* gr = go + i * n;
            const T* br = pb + p * n;
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            ga[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_buffer().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* gr = go + i * n;
            T* br = gb + p * n;
            for (int j = 0; j < n; ++j) br[j] += av * gr[j];
          }
      }
    });
    return out;
  }

  /// NCHW x OIHW convolution with symmetric zero padding.
  Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                   int pad) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) {
      throw ShapeError(std::string("conv2d: incompatible input ") + shape_str(sx) +
                       " and kernel " + shape_str(sw));
    }
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
    const int N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const int OC = sw[0], KH = sw[2], KW = sw[3];
    if (H + 2 * pad < KH || W + 2 * pad < KW) {
      throw ShapeError(std::string("conv2d: kernel ") + shape_str(sw) +
                       " larger than padded input " + shape_str(sx));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != OC)) {
      throw ShapeError(std::string("conv2d: bias ") + shape_str(bias.shape()) +
                       " does not match output channels " + std::to_string(OC));
    }
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    auto out = Tensor<T>::zeros({N, OC, OH, OW});
    {
      const T* px = x.value().data();
      const T* pw = w.value().data();
      T* po = out.value().data();
      for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < OC; ++oc) {
          T* oplane = po + (static_cast<std::size_t>(n) * OC + oc) * OH * OW;
          if (has_bias) {
            const T bv = bias.value()[oc];
            for (int i = 0; i < OH * OW; ++i) oplane[i] = bv;
          }
          for (int ic = 0; ic < C; ++ic) {
            const T* iplane = px + (static_cast<std::size_t>(n) * C + ic) * H * W;
            const T* wk = pw + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
            for (int kh = 0; kh < KH; ++kh) {
              for (int kw = 0; kw < KW; ++kw) {
                const T wv = wk[kh * KW + kw];
                if (wv == T(0)) continue;
                for (int oh = 0; oh < OH; ++oh) {
                  const int ih = oh * stride + kh - pad;
                  if (ih < 0 || ih >= H) continue;
                  // valid ow range: 0 <= ow*stride + kw - pad < W
                  int lo = 0;
                  while (lo < OW && lo * stride + kw - pad < 0) ++lo;
                  int hi = OW;
                  while (hi > lo && (hi - 1) * stride + kw - pad >= W) --hi;
                  const T* irow = iplane + ih * W + (lo * stride + kw - pad);
                  T* orow = oplane + oh * OW;
                  if (stride == 1) {
                    for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow - lo];
                  } else {
                    for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[(ow - lo) * stride];
                  }
                }
              }
            }
          }
        }
      }
    }
    std::vector<Tensor<T>> ins = {x, w};
    if (has_bias) ins.push_back(bias);
    record(out, ins, [x, w, bias, out, has_bias, stride, pad, N, C, H, W, OC, KH, KW, OH,
                      OW]() mutable {
      const T* go = out.grad().data();
      const T* px = x.value().data();
      const T* pw = w.value().data();
      T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      T* gw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
      T* gb = (has_bias && bias.requires_grad()) ? bias.grad_buffer().data() : nullptr;
      for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < OC; ++oc) {
          const T* gplane = go + (static_cast<std::size_t>(n) * OC + oc) * OH * OW;
          if (gb) {
            T acc = 0;
            for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
            gb[oc] += acc;
          }
          if (!gx && !gw) continue;
          for (int ic = 0; ic < C; ++ic) {
            const T* iplane = px + (static_cast<std::size_t>(n) * C + ic) * H * W;
            T* gxplane = gx ? gx + (static_cast<std::size_t>(n) * C + ic) * H * W : nullptr;
            const T* wk = pw + (static_cast<std::size_t>(oc) * C + ic) * KH * KW;
            T* gwk = gw ? gw + (static_cast<std::size_t>(oc) * C + ic) * KH * KW : nullptr;
            for (int kh = 0; kh < KH; ++kh) {
              for (int kw = 0; kw < KW; ++kw) {
                const T wv = wk[kh * KW + kw];
                T wacc = 0;
                for (int oh = 0; oh < OH; ++oh) {
                  const int ih = oh * stride + kh - pad;
                  if (ih < 0 || ih >= H) continue;
                  int lo = 0;
                  while (lo < OW && lo * stride + kw - pad < 0) ++lo;
                  int hi = OW;
                  while (hi > lo && (hi - 1) * stride + kw - pad >= W) --hi;
                  const T* grow = gplane + oh * OW;
                  const int base = lo * stride + kw - pad;
                  if (gw) {
                    const T* irow = iplane + ih * W + base;
                    if (stride == 1) {
                      for (int ow = lo; ow < hi; ++ow) wacc += grow[ow] * irow[ow - lo];
                    } else {
                      for (int ow = lo; ow < hi; ++ow) wacc += grow[ow] * irow[(ow - lo) * stride];
                    }
                  }
                  if (gx) {
                    T* gxrow = gxplane + ih * W + base;
                    if (stride == 1) {
                      for (int ow = lo; ow < hi; ++ow) gxrow[ow - lo] += wv * grow[ow];
                    } else {
                      for (int ow = lo; ow < hi; ++ow) gxrow[(ow - lo) * stride] += wv * grow[ow];
                    }
                  }
                }
                if (gw) gwk[kh * KW + kw] += wacc;
              }
            }
          }
        }
      }
    });
    return out;
  }

  Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0) {
    return conv2d(x, w, Tensor<T>{}, stride, pad);
  }

  // ---- activations ---------------------------------------------------------

  Tensor<T> relu(const Tensor<T>& x) {
    note_kink_distance(x, 0.0);
    return unary(Op::relu, x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T) { return v > T(0) ? T(1) : T(0); });
  }

  Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.2) {
    note_kink_distance(x, 0.0);
    const T s = static_cast<T>(slope);
    return unary(Op::leaky_relu, x, [s](T v) { return v > T(0) ? v : s * v; },
                 [s](T v, T) { return v > T(0) ? T(1) : s; });
  }

  Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary(Op::sigmoid, x,
                 [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  Tensor<T> tanh(const Tensor<T>& x) {
    return unary(Op::tanh, x, [](T v) { return std::tanh(v); },
                 [](T, T y) { return T(1) - y * y; });
  }

  Tensor<T> square(const Tensor<T>& x) {
    return unary(Op::square, x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
  }

  Tensor<T> abs(const Tensor<T>& x) {
    note_kink_distance(x, 0.0);
    return unary(Op::abs, x, [](T v) { return std::fabs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  }

  Tensor<T> log(const Tensor<T>& x) {
    for (T v : x.value()) {
      if (!(v > T(0))) {
        throw NumericError("log: non-positive input value " + std::to_string(double(v)));
      }
    }
    return unary(Op::log, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
  }

  Tensor<T> clamp(const Tensor<T>& x, double lo, double hi) {
    note_kink_distance(x, lo);
    note_kink_distance(x, hi);
    const T l = static_cast<T>(lo), h = static_cast<T>(hi);
    return unary(Op::clamp, x,
                 [l, h](T v) { return v < l ? l : (v > h ? h : v); },
                 [l, h](T v, T) { return (v > l && v < h) ? T(1) : T(0); });
  }

  Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
    const auto& s = x.shape();
    const int rank = static_cast<int>(s.size());
    int ax = axis < 0 ? rank + axis : axis;
    if (ax < 0 || ax >= rank) {
      throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                       shape_str(s));
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= s[i];
    for (int i = ax + 1; i < rank; ++i) inner *= s[i];
    const int len = s[ax];
    auto out = Tensor<T>::zeros(s);
    const T* px = x.value().data();
    T* po = out.value().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const T* xs = px + o * len * inner + in;
        T* os = po + o * len * inner + in;
        T mx = xs[0];
        for (int i = 1; i < len; ++i) mx = std::max(mx, xs[i * inner]);
        T denom = 0;
        for (int i = 0; i < len; ++i) {
          const T e = std::exp(xs[i * inner] - mx);
          os[i * inner] = e;
          denom += e;
        }
        for (int i = 0; i < len; ++i) os[i * inner] /= denom;
      }
    }
    record(out, {x}, [x, out, outer, inner, len]() mutable {
      const T* go = out.grad().data();
      const T* po = out.value().data();
      T* gx = x.grad_buffer().data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * len * inner + in;
          T dot = 0;
          for (int i = 0; i < len; ++i) dot += go[base + i * inner] * po[base + i * inner];
          for (int i = 0; i < len; ++i) {
            gx[base + i * inner] += po[base + i * inner] * (go[base + i * inner] - dot);
          }
        }
      }
    });
    return out;
  }

  // ---- reductions ----------------------------------------------------------

  Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes = {}) {
    return reduce(Op::sum, x, axes, false);
  }

  Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes = {}) {
    return reduce(Op::mean, x, axes, true);
  }

  // ---- shape ops -----------------------------------------------------------

  Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const auto& s0 = xs[0].shape();
    const int rank = static_cast<int>(s0.size());
    int ax = axis < 0 ? rank + axis : axis;
    if (ax < 0 || ax >= rank) {
      throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                       shape_str(s0));
    }
    Shape so = s0;
    for (std::size_t t = 1; t < xs.size(); ++t) {
      const auto& st = xs[t].shape();
      if (static_cast<int>(st.size()) != rank) {
        throw ShapeError(std::string("concat: rank mismatch ") + shape_str(s0) + " vs " +
                         shape_str(st));
      }
      for (int i = 0; i < rank; ++i) {
        if (i != ax && st[i] != s0[i]) {
          throw ShapeError(std::string("concat: shapes ") + shape_str(s0) + " and " +
                           shape_str(st) + " differ off axis " + std::to_string(ax));
        }
      }
      so[ax] += st[ax];
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= s0[i];
    for (int i = ax + 1; i < rank; ++i) inner *= s0[i];
    auto out = Tensor<T>::zeros(so);
    T* po = out.value().data();
    const std::int64_t ostride = static_cast<std::int64_t>(so[ax]) * inner;
    std::int64_t off = 0;
    for (const auto& xt : xs) {
      const std::int64_t len = static_cast<std::int64_t>(xt.shape()[ax]) * inner;
      const T* px = xt.value().data();
      for (std::int64_t o = 0; o < outer; ++o) {
        std::copy(px + o * len, px + (o + 1) * len, po + o * ostride + off);
      }
      off += len;
    }
    record(out, xs, [xs, out, outer, ostride]() mutable {
      const T* go = out.grad().data();
      std::int64_t off = 0;
      for (auto& xt : xs) {
        const std::int64_t len = xt.numel() / outer;
        if (xt.requires_grad()) {
          T* gx = xt.grad_buffer().data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = go + o * ostride + off;
            T* dst = gx + o * len;
            for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }
        off += len;
      }
    });
    return out;
  }

  /// Symmetric zero padding of the two trailing spatial dims of an NCHW tensor.
  Tensor<T> pad(const Tensor<T>& x, int pad_h, int pad_w) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError(std::string("pad: expected NCHW input, got ") + shape_str(s));
    if (pad_h < 0 || pad_w < 0) throw ShapeError("pad: negative padding");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int OH = H + 2 * pad_h, OW = W + 2 * pad_w;
    auto out = Tensor<T>::zeros({N, C, OH, OW});
    const T* px = x.value().data();
    T* po = out.value().data();
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
      for (int h = 0; h < H; ++h) {
        std::copy(px + (p * H + h) * W, px + (p * H + h + 1) * W,
                  po + (p * OH + h + pad_h) * OW + pad_w);
      }
    }
    record(out, {x}, [x, out, N, C, H, W, OH, OW, pad_h, pad_w]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad_buffer().data();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
        for (int h = 0; h < H; ++h) {
          const T* src = go + (p * OH + h + pad_h) * OW + pad_w;
          T* dst = gx + (p * H + h) * W;
          for (int w = 0; w < W; ++w) dst[w] += src[w];
        }
      }
    });
    return out;
  }

  Tensor<T> upsample_nearest(const Tensor<T>& x, int factor = 2) {
    const auto& s = x.shape();
    if (s.size() != 4) {
      throw ShapeError(std::string("upsample_nearest: expected NCHW input, got ") + shape_str(s));
    }
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int OH = H * factor, OW = W * factor;
    auto out = Tensor<T>::zeros({N, C, OH, OW});
    const T* px = x.value().data();
    T* po = out.value().data();
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
      for (int oh = 0; oh < OH; ++oh) {
        const T* irow = px + (p * H + oh / factor) * W;
        T* orow = po + (p * OH + oh) * OW;
        for (int ow = 0; ow < OW; ++ow) orow[ow] = irow[ow / factor];
      }
    }
    record(out, {x}, [x, out, N, C, H, W, OH, OW, factor]() mutable {
      const T* go = out.grad().data();
      T* gx = x.grad_buffer().data();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(N) * C; ++p) {
        for (int oh = 0; oh < OH; ++oh) {
          const T* grow = go + (p * OH + oh) * OW;
          T* xrow = gx + (p * H + oh / factor) * W;
          for (int ow = 0; ow < OW; ++ow) xrow[ow / factor] += grow[ow];
        }
      }
    });
    return out;
  }

  Tensor<T> reshape(const Tensor<T>& x, Shape target) {
    if (simpgan::numel(target) != x.numel()) {
      throw ShapeError(std::string("reshape: cannot view ") + shape_str(x.shape()) + " as " +
                       shape_str(target));
    }
    auto out = Tensor<T>::from(target, x.value());
    record(out, {x}, [x, out]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
    return out;
  }

  // ---- normalization -------------------------------------------------------

  Tensor<T> instance_norm(const Tensor<T>& x, double eps = 1e-5) {
    return instance_norm_impl(x, Tensor<T>{}, Tensor<T>{}, eps);
  }

  Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          double eps = 1e-5) {
    return instance_norm_impl(x, gamma, beta, eps);
  }

  // ---- backward ------------------------------------------------------------

  std::unordered_map<std::int64_t, Tensor<T>> backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ShapeError("backward: loss must be a scalar tensor");
    }
    // Zero every gradient buffer this pass can touch, exactly once.
    std::unordered_set<std::int64_t> zeroed;
    auto zero_once = [&zeroed](Tensor<T> t) {
      if (zeroed.insert(t.id()).second) t.zero_grad();
    };
    for (auto& n : nodes_) {
      zero_once(n.out);
      for (auto& in : n.inputs) {
        if (in.defined() && in.requires_grad()) zero_once(in);
      }
    }
    for (auto& w : watched_) zero_once(w);
    Tensor<T> l = loss;
    l.grad_buffer()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();

    std::unordered_map<std::int64_t, Tensor<T>> grads;
    auto emit = [&grads](Tensor<T>& t) {
      if (!t.requires_grad() || grads.count(t.id())) return;
      Tensor<T> g = t.grad().empty() ? Tensor<T>::zeros(t.shape())
                                     : Tensor<T>::from(t.shape(), t.grad());
      grads.emplace(t.id(), std::move(g));
    };
    for (auto& w : watched_) emit(w);
    for (auto& n : nodes_) {
      for (auto& in : n.inputs) {
        if (in.defined() && in.requires_grad() && !produced_.count(in.id())) {
          Tensor<T> leaf = in;
          emit(leaf);
        }
      }
    }
    return grads;
  }

 private:
  struct Node {
    Tensor<T> out;
    std::vector<Tensor<T>> inputs;
    std::function<void()> back;
  };

  void note_kink_distance(const Tensor<T>& x, double kink) {
    if (!track_kinks_) return;
    for (T v : x.value()) {
      const double d = std::fabs(static_cast<double>(v) - kink);
      if (d < kink_clearance_) kink_clearance_ = d;
    }
  }

  static void need(Op op, const std::vector<Tensor<T>>& inputs, std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  }

  void record(Tensor<T>& out, std::vector<Tensor<T>> inputs, std::function<void()> back) {
    if (!grad_enabled_) return;
    bool any = false;
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        any = true;
        break;
      }
    }
    if (!any) return;
    out.set_requires_grad(true);
    produced_.insert(out.id());
    nodes_.push_back(Node{out, std::move(inputs), std::move(back)});
  }

  template <typename FwdFn, typename GradFn>
  Tensor<T> unary(Op op, const Tensor<T>& x, FwdFn fwd, GradFn dfn) {
    (void)op;
    auto out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
    record(out, {x}, [x, out, dfn]() mutable {
      const auto& go = out.grad();
      const auto& xv = x.value();
      const auto& ov = out.value();
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dfn(xv[i], ov[i]) * go[i];
    });
    return out;
  }

  Tensor<T> binary(Op op, const Tensor<T>& a, const Tensor<T>& b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
    const auto& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    auto out = Tensor<T>::zeros(out_shape);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    const std::size_t n = ov.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T x = av[a_scalar ? 0 : i];
      const T y = bv[b_scalar ? 0 : i];
      ov[i] = op == Op::add ? x + y : op == Op::sub ? x - y : x * y;
    }
    record(out, {a, b}, [a, b, out, op, a_scalar, b_scalar, n]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        const auto& bv = b.value();
        for (std::size_t i = 0; i < n; ++i) {
          const T g = op == Op::mul ? go[i] * bv[b_scalar ? 0 : i] : go[i];
          ga[a_scalar ? 0 : i] += g;
        }
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        const auto& av = a.value();
        for (std::size_t i = 0; i < n; ++i) {
          T g = go[i];
          if (op == Op::sub) g = -g;
          if (op == Op::mul) g = go[i] * av[a_scalar ? 0 : i];
          gb[b_scalar ? 0 : i] += g;
        }
      }
    });
    return out;
  }

  Tensor<T> reduce(Op op, const Tensor<T>& x, std::vector<int> axes, bool is_mean) {
    const auto& s = x.shape();
    const int rank = static_cast<int>(s.size());
    std::vector<bool> reduced(rank, false);
    if (axes.empty()) {
      reduced.assign(rank, true);
    } else {
      for (int a : axes) {
        const int ax = a < 0 ? rank + a : a;
        if (ax < 0 || ax >= rank) {
          throw ShapeError(std::string(op_name(op)) + ": axis " + std::to_string(a) +
                           " out of range for " + shape_str(s));
        }
        reduced[ax] = true;
      }
    }
    Shape so;
    std::int64_t m = 1;
    for (int i = 0; i < rank; ++i) {
      if (reduced[i]) m *= s[i];
      else so.push_back(s[i]);
    }
    if (so.empty()) so = {1};

    // Index mapping: out_index(flat x index) via per-axis strides.
    std::vector<std::int64_t> xstride(rank, 1), omap(rank, 0);
    for (int i = rank - 2; i >= 0; --i) xstride[i] = xstride[i + 1] * s[i + 1];
    {
      std::int64_t os = 1;
      for (int i = rank - 1; i >= 0; --i) {
        if (!reduced[i]) {
          omap[i] = os;
          os *= s[i];
        }
      }
    }
    auto out = Tensor<T>::zeros(so);
    const auto& xv = x.value();
    auto& ov = out.value();
    const std::int64_t total = x.numel();
    for (std::int64_t f = 0; f < total; ++f) {
      std::int64_t oi = 0;
      std::int64_t r = f;
      for (int i = 0; i < rank; ++i) {
        const std::int64_t c = r / xstride[i];
        r %= xstride[i];
        oi += omap[i] * c * (reduced[i] ? 0 : 1);
      }
      ov[oi] += xv[f];
    }
    if (is_mean) {
      for (auto& v : ov) v /= static_cast<T>(m);
    }
    record(out, {x}, [x, out, xstride, omap, reduced, rank, m, is_mean]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad_buffer();
      const std::int64_t total = x.numel();
      const T inv = is_mean ? T(1) / static_cast<T>(m) : T(1);
      for (std::int64_t f = 0; f < total; ++f) {
        std::int64_t oi = 0;
        std::int64_t r = f;
        for (int i = 0; i < rank; ++i) {
          const std::int64_t c = r / xstride[i];
          r %= xstride[i];
          oi += omap[i] * c * (reduced[i] ? 0 : 1);
        }
        gx[f] += go[oi] * inv;
      }
    });
    return out;
  }

  Tensor<T> instance_norm_impl(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                               double eps) {
    const auto& s = x.shape();
    if (s.size() != 4) {
      throw ShapeError(std::string("instance_norm: expected NCHW input, got ") + shape_str(s));
    }
    const int N = s[0], C = s[1], HW = s[2] * s[3];
    const bool affine = gamma.defined();
    if (affine) {
      if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw ShapeError(std::string("instance_norm: affine params ") + shape_str(gamma.shape()) +
                         "/" + shape_str(beta.shape()) + " do not match channels " +
                         std::to_string(C));
      }
    }
    auto out = Tensor<T>::zeros(s);
    // Cache normalized values and the inverse stddev per (n, c) for backward.
    auto yhat = std::make_shared<std::vector<T>>(x.value().size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * C);
    {
      const T* px = x.value().data();
      T* po = out.value().data();
      T* ph = yhat->data();
      for (int p = 0; p < N * C; ++p) {
        const T* xs = px + static_cast<std::size_t>(p) * HW;
        T mu = 0;
        for (int i = 0; i < HW; ++i) mu += xs[i];
        mu /= static_cast<T>(HW);
        T var = 0;
        for (int i = 0; i < HW; ++i) {
          const T d = xs[i] - mu;
          var += d * d;
        }
        var /= static_cast<T>(HW);
        if (track_kinks_) {
          const double sd = std::sqrt(static_cast<double>(var) + eps);
          if (sd < min_norm_std_) min_norm_std_ = sd;
        }
        const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
        (*inv_std)[p] = istd;
        const int c = p % C;
        const T g = affine ? gamma.value()[c] : T(1);
        const T b = affine ? beta.value()[c] : T(0);
        T* os = po + static_cast<std::size_t>(p) * HW;
        T* hs = ph + static_cast<std::size_t>(p) * HW;
        for (int i = 0; i < HW; ++i) {
          const T h = (xs[i] - mu) * istd;
          hs[i] = h;
          os[i] = g * h + b;
        }
      }
    }
    std::vector<Tensor<T>> ins = {x};
    if (affine) {
      ins.push_back(gamma);
      ins.push_back(beta);
    }
    record(out, ins, [x, gamma, beta, out, yhat, inv_std, N, C, HW, affine]() mutable {
      const T* go = out.grad().data();
      const T* ph = yhat->data();
      T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      T* gg = (affine && gamma.requires_grad()) ? gamma.grad_buffer().data() : nullptr;
      T* gb = (affine && beta.requires_grad()) ? beta.grad_buffer().data() : nullptr;
      for (int p = 0; p < N * C; ++p) {
        const int c = p % C;
        const T* gos = go + static_cast<std::size_t>(p) * HW;
        const T* hs = ph + static_cast<std::size_t>(p) * HW;
        if (gg || gb) {
          T sg = 0, sb = 0;
          for (int i = 0; i < HW; ++i) {
            sg += gos[i] * hs[i];
            sb += gos[i];
          }
          if (gg) gg[c] += sg;
          if (gb) gb[c] += sb;
        }
        if (gx) {
          const T g = affine ? gamma.value()[c] : T(1);
          T mean_dy = 0, mean_dyh = 0;
          for (int i = 0; i < HW; ++i) {
            const T dy = gos[i] * g;
            mean_dy += dy;
            mean_dyh += dy * hs[i];
          }
          mean_dy /= static_cast<T>(HW);
          mean_dyh /= static_cast<T>(HW);
          const T istd = (*inv_std)[p];
          T* gxs = gx + static_cast<std::size_t>(p) * HW;
          for (int i = 0; i < HW; ++i) {
            const T dy = gos[i] * g;
            gxs[i] += istd * (dy - mean_dy - hs[i] * mean_dyh);
          }
        }
      }
    });
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> watched_;
  std::unordered_set<std::int64_t> watched_ids_;
  std::unordered_set<std::int64_t> produced_;
  bool grad_enabled_ = true;
  bool track_kinks_ = false;
  double kink_clearance_ = std::numeric_limits<double>::infinity();
  double min_norm_std_ = std::numeric_limits<double>::infinity();
};

template <typename T>
using GradMap = std::unordered_map<std::int64_t, Tensor<T>>;

}  // namespace simpgan
