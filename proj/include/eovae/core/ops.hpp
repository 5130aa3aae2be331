#pragma once

// Differentiable tensor operations over Var<T>.

#include <cmath>
#include <limits>
#include <span>

#include "eovae/core/autograd.hpp"

namespace eovae::ops {

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

/// Unary elementwise op: y = f(x), dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op<T>(std::move(out), {x}, [df](Node<T>& n) {
    if (auto* gx = input_grad(n, 0)) {
      const auto& xv = input_value(n, 0);
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i] * df(xv[i], n.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = input_grad(n, k)) *g += n.grad;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) *g += n.grad;
    if (auto* g = input_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] -= n.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = input_value(n, 0);
    const auto& bv = input_value(n, 1);
    if (auto* g = input_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    if (auto* g = input_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * av[i];
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "div");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& bv = input_value(n, 1);
    if (auto* g = input_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] / bv[i];
    if (auto* g = input_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] -= n.grad[i] * n.value[i] / bv[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return scale(x, T{-1});
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::sqrt(v); },
                       [](T, T y) { return y > T{0} ? T{0.5} / y : T{0}; });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v / (T{1} + std::exp(-v)); },
      [](T v, T) {
        const T s = T{1} / (T{1} + std::exp(-v));
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T{0} ? v : T{0}; },
                       [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

/// x^p for x > 0; x <= 0 maps to 0 with zero gradient.
template <typename T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  return detail::unary(x, [p](T v) { return v > T{0} ? std::pow(v, p) : T{0}; },
                       [p](T v, T y) { return v > T{0} ? p * y / v : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(x.value().sum());
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      const T go = n.grad[0];
      for (auto& v : g->values()) v += go;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T count = static_cast<T>(x.value().size());
  Tensor<T> out = Tensor<T>::scalar(x.value().sum() / count);
  return make_op<T>(std::move(out), {x}, [count](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      const T go = n.grad[0] / count;
      for (auto& v : g->values()) v += go;
    }
  });
}

/// Frobenius norm with a zero subgradient at the origin.
template <typename T>
Var<T> frobenius_norm(const Var<T>& x) {
  T ss{0};
  for (T v : x.value().values()) ss += v * v;
  Tensor<T> out = Tensor<T>::scalar(std::sqrt(ss));
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) {
      const T norm = n.value[0];
      if (norm <= T{0}) return;
      const auto& xv = input_value(n, 0);
      const T s = n.grad[0] / norm;
      for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += s * xv[i];
    }
  });
}

/// Mean over rows of a [R, K] matrix -> [K].
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  if (x.value().rank() != 2) throw ShapeError("mean_rows expects a rank-2 tensor");
  const auto rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out(Shape{cols});
  const auto& xv = x.value();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (auto& v : out.values()) v /= static_cast<T>(rows);
  return make_op<T>(std::move(out), {x}, [rows, cols](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) (*g)[r * cols + c] += n.grad[c] / static_cast<T>(rows);
  });
}

/// Per-sample mean over all but the leading dimension: [N, ...] -> [N].
template <typename T>
Var<T> mean_per_sample(const Var<T>& x) {
  const auto n_samples = x.dim(0);
  const auto per = static_cast<std::int64_t>(x.value().size()) / n_samples;
  Tensor<T> out(Shape{n_samples});
  const auto& xv = x.value();
  for (std::int64_t s = 0; s < n_samples; ++s) {
    T acc{0};
    for (std::int64_t i = 0; i < per; ++i) acc += xv[s * per + i];
    out[s] = acc / static_cast<T>(per);
  }
  return make_op<T>(std::move(out), {x}, [n_samples, per](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::int64_t s = 0; s < n_samples; ++s) {
        const T go = n.grad[s] / static_cast<T>(per);
        for (std::int64_t i = 0; i < per; ++i) (*g)[s * per + i] += go;
      }
  });
}

/// Dot product with a constant weight vector, for weighted per-sample sums.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, std::vector<T> weights) {
  if (weights.size() != x.value().size()) throw ShapeError("weighted_sum: weight count mismatch");
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.value()[i];
  return make_op<T>(Tensor<T>::scalar(acc), {x}, [w = std::move(weights)](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += n.grad[0] * w[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
  });
}

/// Swaps the two leading dimensions of a tensor of rank >= 2.
template <typename T>
Var<T> transpose01(const Var<T>& x) {
  if (x.value().rank() < 2) throw ShapeError("transpose01 expects rank >= 2");
  const auto a = x.dim(0), b = x.dim(1);
  const auto inner = static_cast<std::int64_t>(x.value().size()) / (a * b);
  Shape shape = x.shape();
  std::swap(shape[0], shape[1]);
  Tensor<T> out(shape);
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < a; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      std::copy_n(xv.data() + (i * b + j) * inner, inner, out.data() + (j * a + i) * inner);
  return make_op<T>(std::move(out), {x}, [a, b, inner](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::int64_t i = 0; i < a; ++i)
        for (std::int64_t j = 0; j < b; ++j) {
          const T* src = n.grad.data() + (j * a + i) * inner;
          T* dst = g->data() + (i * b + j) * inner;
          for (std::int64_t k = 0; k < inner; ++k) dst[k] += src[k];
        }
  });
}

/// Concatenates rank-4 tensors along the channel dimension.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 4 || b.value().rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.value().data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.value().data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
  }
  return make_op<T>(std::move(out), {a, b}, [n, ca, cb, hw](Node<T>& node) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto* g = input_grad(node, k);
      if (!g) continue;
      const auto c = k == 0 ? ca : cb;
      const auto off = k == 0 ? 0 : ca;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = node.grad.data() + (s * (ca + cb) + off) * hw;
        T* dst = g->data() + s * c * hw;
        for (std::int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Channels [start, start+count) of a rank-4 tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count) {
  if (x.value().rank() != 4 || start < 0 || start + count > x.dim(1))
    throw ShapeError("slice_channels out of range");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, count, x.dim(2), x.dim(3)});
  for (std::int64_t s = 0; s < n; ++s)
    std::copy_n(x.value().data() + (s * c + start) * hw, count * hw, out.data() + s * count * hw);
  return make_op<T>(std::move(out), {x}, [n, c, hw, start, count](Node<T>& node) {
    if (auto* g = input_grad(node, 0))
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = node.grad.data() + s * count * hw;
        T* dst = g->data() + (s * c + start) * hw;
        for (std::int64_t i = 0; i < count * hw; ++i) dst[i] += src[i];
      }
  });
}

/// Adds a per-(sample, channel) offset v[N, C] to x[N, C, H, W].
template <typename T>
Var<T> add_channel_offset(const Var<T>& x, const Var<T>& v) {
  if (x.value().rank() != 4 || v.value().rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1))
    throw ShapeError("add_channel_offset: incompatible shapes");
  const auto nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out = x.value();
  for (std::int64_t i = 0; i < nc; ++i)
    for (std::int64_t p = 0; p < hw; ++p) out[i * hw + p] += v.value()[i];
  return make_op<T>(std::move(out), {x, v}, [nc, hw](Node<T>& n) {
    if (auto* g = input_grad(n, 0)) *g += n.grad;
    if (auto* g = input_grad(n, 1))
      for (std::int64_t i = 0; i < nc; ++i) {
        T acc{0};
        for (std::int64_t p = 0; p < hw; ++p) acc += n.grad[i * hw + p];
        (*g)[i] += acc;
      }
  });
}

/// Multiplies each sample of x[N, ...] by a constant factor.
template <typename T>
Var<T> scale_per_sample(const Var<T>& x, std::vector<T> factors) {
  const auto n = x.dim(0);
  if (static_cast<std::int64_t>(factors.size()) != n) throw ShapeError("scale_per_sample: factor count");
  const auto per = static_cast<std::int64_t>(x.value().size()) / n;
  Tensor<T> out = x.value();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t i = 0; i < per; ++i) out[s * per + i] *= factors[s];
  return make_op<T>(std::move(out), {x}, [f = std::move(factors), per](Node<T>& node) {
    if (auto* g = input_grad(node, 0))
      for (std::size_t s = 0; s < f.size(); ++s)
        for (std::int64_t i = 0; i < per; ++i) (*g)[s * per + i] += node.grad[s * per + i] * f[s];
  });
}

// ---------------------------------------------------------------------------
// Spatial resampling

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
  if (x.value().rank() != 4 || factor < 1) throw ShapeError("upsample_nearest expects [N,C,H,W]");
  const auto nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h * factor, ow = w * factor;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < nc; ++i)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        out[(i * oh + y) * ow + xx] = xv[(i * h + y / factor) * w + xx / factor];
  return make_op<T>(std::move(out), {x}, [nc, h, w, oh, ow, factor](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::int64_t i = 0; i < nc; ++i)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx)
            (*g)[(i * h + y / factor) * w + xx / factor] += n.grad[(i * oh + y) * ow + xx];
  });
}

/// 2x2 average pooling, stride 2; odd trailing rows/columns are dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  if (x.value().rank() != 4) throw ShapeError("avg_pool2 expects [N,C,H,W]");
  const auto nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < nc; ++i)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const T* p = xv.data() + (i * h + 2 * y) * w + 2 * xx;
        out[(i * oh + y) * ow + xx] = T{0.25} * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return make_op<T>(std::move(out), {x}, [nc, h, w, oh, ow](Node<T>& n) {
    if (auto* g = input_grad(n, 0))
      for (std::int64_t i = 0; i < nc; ++i)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            const T go = T{0.25} * n.grad[(i * oh + y) * ow + xx];
            T* p = g->data() + (i * h + 2 * y) * w + 2 * xx;
            p[0] += go;
            p[1] += go;
            p[w] += go;
            p[w + 1] += go;
          }
  });
}

/// Separable "valid" filtering of every channel with a fixed 1-D kernel
/// (applied along rows, then columns). Output is (H-k+1) x (W-k+1).
template <typename T>
Var<T> filter_valid(const Var<T>& x, std::vector<T> kernel) {
  if (x.value().rank() != 4) throw ShapeError("filter_valid expects [N,C,H,W]");
  const auto k = static_cast<std::int64_t>(kernel.size());
  const auto nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k || w < k) throw ShapeError("filter_valid: image smaller than window");
  const auto oh = h - k + 1, ow = w - k + 1;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  std::vector<T> tmp(static_cast<std::size_t>(h * ow));
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < nc; ++i) {
    const T* src = xv.data() + i * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        T acc{0};
        for (std::int64_t t = 0; t < k; ++t) acc += kernel[t] * src[y * w + xx + t];
        tmp[y * ow + xx] = acc;
      }
    T* dst = out.data() + i * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        T acc{0};
        for (std::int64_t t = 0; t < k; ++t) acc += kernel[t] * tmp[(y + t) * ow + xx];
        dst[y * ow + xx] = acc;
      }
  }
  return make_op<T>(std::move(out), {x}, [kernel = std::move(kernel), k, nc, h, w, oh, ow](Node<T>& n) {
    auto* g = input_grad(n, 0);
    if (!g) return;
    std::vector<T> tmp(static_cast<std::size_t>(h * ow));
    for (std::int64_t i = 0; i < nc; ++i) {
      std::fill(tmp.begin(), tmp.end(), T{0});
      const T* go = n.grad.data() + i * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const T v = go[y * ow + xx];
          for (std::int64_t t = 0; t < k; ++t) tmp[(y + t) * ow + xx] += kernel[t] * v;
        }
      T* dst = g->data() + i * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const T v = tmp[y * ow + xx];
          for (std::int64_t t = 0; t < k; ++t) dst[y * w + xx + t] += kernel[t] * v;
        }
    }
  });
}

}  // namespace eovae::ops
