#pragma once

// Differentiable layer primitives: convolution, dense, group normalization.
// Matrix products go through Eigen.

#include <Eigen/Core>

#include "eovae/core/ops.hpp"

namespace eovae::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t cin, h, w, k, stride, pad, oh, ow;
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const auto ohw = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * ohw;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          const auto iy = y * g.stride - g.pad + ky;
          T* dst = row + y * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, T{0});
            continue;
          }
          const T* src = img + (c * g.h + iy) * g.w;
          if (g.stride == 1) {
            const auto x0 = kx - g.pad;
            for (std::int64_t x = 0; x < g.ow; ++x) {
              const auto ix = x + x0;
              dst[x] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
            }
          } else {
            for (std::int64_t x = 0; x < g.ow; ++x) {
              const auto ix = x * g.stride - g.pad + kx;
              dst[x] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const auto ohw = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * ohw;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          const auto iy = y * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (c * g.h + iy) * g.w;
          const T* src = row + y * g.ow;
          for (std::int64_t x = 0; x < g.ow; ++x) {
            const auto ix = x * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[x];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution. x: [N, Cin, H, W], weight: [Cout, Cin, k, k],
/// bias: [Cout] (pass an empty Var for none). Weight and bias may be
/// produced by other ops (e.g. a hypernetwork); gradients flow into them.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1, int pad = 0) {
  using namespace detail;
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3] || ws[1] != xs[1])
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  const bool has_bias = bias.value().size() > 0;
  if (has_bias && (bias.value().rank() != 1 || bias.dim(0) != ws[0]))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  ConvGeometry g{xs[1], xs[2], xs[3], ws[2], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: output would be empty");
  const auto n = xs[0], cout = ws[0], ohw = g.oh * g.ow, kdim = g.cin * g.k * g.k;

  Tensor<T> out(Shape{n, cout, g.oh, g.ow});
  ConstMapMat<T> wm(weight.value().data(), cout, kdim);
  std::vector<T> cols(g.direct() ? 0 : static_cast<std::size_t>(kdim * ohw));
  for (std::int64_t s = 0; s < n; ++s) {
    const T* img = x.value().data() + s * g.cin * g.h * g.w;
    MapMat<T> om(out.data() + s * cout * ohw, cout, ohw);
    if (g.direct()) {
      om.noalias() = wm * ConstMapMat<T>(img, kdim, ohw);
    } else {
      im2col(img, g, cols.data());
      om.noalias() = wm * ConstMapMat<T>(cols.data(), kdim, ohw);
    }
    if (has_bias)
      for (std::int64_t c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), std::move(inputs), [g, n, cout, ohw, kdim, has_bias](Node<T>& node) {
    const auto& xv = input_value(node, 0);
    const auto& wv = input_value(node, 1);
    auto* gx = input_grad(node, 0);
    auto* gw = input_grad(node, 1);
    auto* gb = has_bias ? input_grad(node, 2) : nullptr;
    ConstMapMat<T> wm(wv.data(), cout, kdim);
    std::vector<T> cols(g.direct() ? 0 : static_cast<std::size_t>(kdim * ohw));
    std::vector<T> dcols(g.direct() || !gx ? 0 : static_cast<std::size_t>(kdim * ohw));
    for (std::int64_t s = 0; s < n; ++s) {
      ConstMapMat<T> go(node.grad.data() + s * cout * ohw, cout, ohw);
      const T* img = xv.data() + s * g.cin * g.h * g.w;
      if (gw) {
        MapMat<T> gwm(gw->data(), cout, kdim);
        if (g.direct()) {
          gwm.noalias() += go * ConstMapMat<T>(img, kdim, ohw).transpose();
        } else {
          im2col(img, g, cols.data());
          gwm.noalias() += go * ConstMapMat<T>(cols.data(), kdim, ohw).transpose();
        }
      }
      if (gb)
        for (std::int64_t c = 0; c < cout; ++c) (*gb)[c] += go.row(c).sum();
      if (gx) {
        T* gimg = gx->data() + s * g.cin * g.h * g.w;
        if (g.direct()) {
          MapMat<T>(gimg, kdim, ohw).noalias() += wm.transpose() * go;
        } else {
          MapMat<T>(dcols.data(), kdim, ohw).noalias() = wm.transpose() * go;
          col2im_add(dcols.data(), g, gimg);
        }
      }
    }
  });
}

/// Dense layer: x [B, in] -> [B, out] with weight [out, in] and bias [out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  using namespace detail;
  if (x.value().rank() != 2 || weight.value().rank() != 2 || weight.dim(1) != x.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const auto b = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  const bool has_bias = bias.value().size() > 0;
  Tensor<T> out(Shape{b, outd});
  MapMat<T> om(out.data(), b, outd);
  om.noalias() = ConstMapMat<T>(x.value().data(), b, in) * ConstMapMat<T>(weight.value().data(), outd, in).transpose();
  if (has_bias)
    for (std::int64_t r = 0; r < b; ++r)
      for (std::int64_t c = 0; c < outd; ++c) out[r * outd + c] += bias.value()[c];
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), std::move(inputs), [b, in, outd, has_bias](Node<T>& node) {
    ConstMapMat<T> go(node.grad.data(), b, outd);
    if (auto* gx = input_grad(node, 0))
      MapMat<T>(gx->data(), b, in).noalias() += go * ConstMapMat<T>(input_value(node, 1).data(), outd, in);
    if (auto* gw = input_grad(node, 1))
      MapMat<T>(gw->data(), outd, in).noalias() += go.transpose() * ConstMapMat<T>(input_value(node, 0).data(), b, in);
    if (has_bias)
      if (auto* gb = input_grad(node, 2))
        for (std::int64_t r = 0; r < b; ++r)
          for (std::int64_t c = 0; c < outd; ++c) (*gb)[c] += node.grad[r * outd + c];
  });
}

/// Group normalization over [N, C, H, W] with per-channel affine gamma/beta.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps = T{1e-6}) {
  if (x.value().rank() != 4 || x.dim(1) % groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(x.dim(1)) + " not divisible by groups " +
                     std::to_string(groups));
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto cpg = c / groups, gsize = cpg * hw;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * groups));
  const auto& xv = x.value();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const auto base = (s * c + gi * cpg) * hw;
      T mean{0};
      for (std::int64_t i = 0; i < gsize; ++i) mean += xv[base + i];
      mean /= static_cast<T>(gsize);
      T var{0};
      for (std::int64_t i = 0; i < gsize; ++i) {
        const T d = xv[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(gsize);
      const T r = T{1} / std::sqrt(var + eps);
      (*rstd)[s * groups + gi] = r;
      for (std::int64_t ch = 0; ch < cpg; ++ch) {
        const auto cc = gi * cpg + ch;
        const T ga = gamma.value()[cc], be = beta.value()[cc];
        for (std::int64_t p = 0; p < hw; ++p) {
          const auto idx = base + ch * hw + p;
          const T xh = (xv[idx] - mean) * r;
          (*xhat)[idx] = xh;
          out[idx] = xh * ga + be;
        }
      }
    }
  return make_op<T>(std::move(out), {x, gamma, beta}, [xhat, rstd, n, c, hw, cpg, gsize, groups](Node<T>& node) {
    const auto& gv = input_value(node, 1);
    auto* gx = input_grad(node, 0);
    auto* gg = input_grad(node, 1);
    auto* gbeta = input_grad(node, 2);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t gi = 0; gi < groups; ++gi) {
        const auto base = (s * c + gi * cpg) * hw;
        T sum_dxh{0}, sum_dxh_xh{0};
        for (std::int64_t ch = 0; ch < cpg; ++ch) {
          const auto cc = gi * cpg + ch;
          T dg{0}, db{0};
          for (std::int64_t p = 0; p < hw; ++p) {
            const auto idx = base + ch * hw + p;
            const T dy = node.grad[idx];
            const T xh = (*xhat)[idx];
            dg += dy * xh;
            db += dy;
            const T dxh = dy * gv[cc];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
          if (gg) (*gg)[cc] += dg;
          if (gbeta) (*gbeta)[cc] += db;
        }
        if (!gx) continue;
        const T r = (*rstd)[s * groups + gi];
        const T m1 = sum_dxh / static_cast<T>(gsize), m2 = sum_dxh_xh / static_cast<T>(gsize);
        for (std::int64_t ch = 0; ch < cpg; ++ch) {
          const auto cc = gi * cpg + ch;
          for (std::int64_t p = 0; p < hw; ++p) {
            const auto idx = base + ch * hw + p;
            const T dxh = node.grad[idx] * gv[cc];
            (*gx)[idx] += r * (dxh - m1 - (*xhat)[idx] * m2);
          }
        }
      }
  });
}

}  // namespace eovae::ops
