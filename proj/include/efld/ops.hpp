#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "efld/tensor.hpp"

namespace efld {

enum class LayerKind { conv, depthwise, linear };
enum class Padding { same, valid };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::depthwise: return "depthwise";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

/// Weights and bias of one layer.
///   conv      weights (kH, kW, Cin, Cout), bias (Cout)
///   depthwise weights (kH, kW, C),        bias (C)
///   linear    weights (Din, Dout),        bias (Dout)
template <typename Scalar>
struct LayerParams {
  LayerKind kind = LayerKind::conv;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;

  Index count() const { return weights.size() + bias.size(); }

  static LayerParams zeros_like(const LayerParams& other) {
    return {other.kind, Tensor<Scalar>(other.weights.shape()), Tensor<Scalar>(other.bias.shape())};
  }

  template <typename To>
  LayerParams<To> cast() const {
    return {kind, weights.template cast<To>(), bias.template cast<To>()};
  }
};

/// Spatial bookkeeping shared by conv and depthwise kernels.
struct ConvGeometry {
  Index batch = 0, in_h = 0, in_w = 0, channels = 0;
  Index k_h = 0, k_w = 0, stride = 1;
  Index out_h = 0, out_w = 0, pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(const Shape& input, Index k_h, Index k_w, Index stride,
                                  Padding padding, const char* op) {
  if (input.size() != 4) {
    throw ShapeError(std::string(op) + ": expected rank-4 input, got " + shape_string(input));
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError(std::string(op) + ": stride must be 1 or 2, got " + std::to_string(stride));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_h = input[1];
  g.in_w = input[2];
  g.channels = input[3];
  g.k_h = k_h;
  g.k_w = k_w;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_h = (g.in_h + stride - 1) / stride;
    g.out_w = (g.in_w + stride - 1) / stride;
    // Extra padding pixel goes to the bottom/right.
    g.pad_top = std::max<Index>((g.out_h - 1) * stride + k_h - g.in_h, 0) / 2;
    g.pad_left = std::max<Index>((g.out_w - 1) * stride + k_w - g.in_w, 0) / 2;
  } else {
    if (k_h > g.in_h || k_w > g.in_w) {
      throw ShapeError(std::string(op) + ": kernel " + std::to_string(k_h) + "x" +
                       std::to_string(k_w) + " exceeds input " + shape_string(input) +
                       " under valid padding");
    }
    g.out_h = (g.in_h - k_h) / stride + 1;
    g.out_w = (g.in_w - k_w) / stride + 1;
  }
  return g;
}

namespace detail {

/// Unfold receptive fields into rows: (B*Ho*Wo) x (kH*kW*C).
template <typename Scalar>
typename Tensor<Scalar>::RowMatrix im2col(const Tensor<Scalar>& input, const ConvGeometry& g) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const Index c = g.channels;
  RowMatrix col = RowMatrix::Zero(g.batch * g.out_h * g.out_w, g.k_h * g.k_w * c);
  const Scalar* in = input.ptr();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        Scalar* row = col.data() + ((b * g.out_h + oy) * g.out_w + ox) * col.cols();
        for (Index ky = 0; ky < g.k_h; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.in_w) continue;
            std::copy_n(in + ((b * g.in_h + iy) * g.in_w + ix) * c, c, row + (ky * g.k_w + kx) * c);
          }
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
void col2im_add(const typename Tensor<Scalar>::RowMatrix& col, const ConvGeometry& g,
                Tensor<Scalar>& grad_input) {
  const Index c = g.channels;
  Scalar* out = grad_input.ptr();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const Scalar* row = col.data() + ((b * g.out_h + oy) * g.out_w + ox) * col.cols();
        for (Index ky = 0; ky < g.k_h; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.in_w) continue;
            Scalar* dst = out + ((b * g.in_h + iy) * g.in_w + ix) * c;
            const Scalar* src = row + (ky * g.k_w + kx) * c;
            for (Index ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

}  // namespace detail

template <typename Scalar>
void check_conv_params(const Tensor<Scalar>& input, const LayerParams<Scalar>& p) {
  const auto& w = p.weights.shape();
  if (w.size() != 4 || input.rank() != 4 || w[2] != input.dim(3) || p.bias.size() != w[3]) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " incompatible with weights " +
                     shape_string(w) + " / bias " + shape_string(p.bias.shape()));
  }
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const LayerParams<Scalar>& p, Index stride,
                      Padding padding) {
  check_conv_params(input, p);
  const auto& w = p.weights.shape();
  const ConvGeometry g = conv_geometry(input.shape(), w[0], w[1], stride, padding, "conv2d");
  const Index cout = w[3];
  typename Tensor<Scalar>::ConstMatrixMap weights(p.weights.ptr(), w[0] * w[1] * w[2], cout);
  Tensor<Scalar> out({g.batch, g.out_h, g.out_w, cout});
  if (detail::is_pointwise(g)) {
    out.matrix().noalias() = input.matrix() * weights;
  } else {
    out.matrix().noalias() = detail::im2col(input, g) * weights;
  }
  out.matrix().rowwise() += p.bias.data().transpose();
  return out;
}

/// Gradients of conv2d. grad_input is accumulated into (must be pre-shaped like input).
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& input, const LayerParams<Scalar>& p, Index stride,
                     Padding padding, const Tensor<Scalar>& grad_out, Tensor<Scalar>* grad_input,
                     LayerParams<Scalar>& grad_params) {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  const auto& w = p.weights.shape();
  const ConvGeometry g = conv_geometry(input.shape(), w[0], w[1], stride, padding, "conv2d");
  const Index cout = w[3];
  typename Tensor<Scalar>::ConstMatrixMap weights(p.weights.ptr(), w[0] * w[1] * w[2], cout);
  typename Tensor<Scalar>::MatrixMap grad_weights(grad_params.weights.ptr(), w[0] * w[1] * w[2], cout);
  const auto dy = grad_out.matrix();
  grad_params.bias.data() += dy.colwise().sum().transpose();
  if (detail::is_pointwise(g)) {
    grad_weights.noalias() += input.matrix().transpose() * dy;
    if (grad_input) grad_input->matrix().noalias() += dy * weights.transpose();
    return;
  }
  const RowMatrix col = detail::im2col(input, g);
  grad_weights.noalias() += col.transpose() * dy;
  if (grad_input) {
    const RowMatrix dcol = dy * weights.transpose();
    detail::col2im_add<Scalar>(dcol, g, *grad_input);
  }
}

template <typename Scalar>
void check_depthwise_params(const Tensor<Scalar>& input, const LayerParams<Scalar>& p) {
  const auto& w = p.weights.shape();
  if (w.size() != 3 || input.rank() != 4 || w[2] != input.dim(3) || p.bias.size() != w[2]) {
    throw ShapeError("depthwise_conv2d: input " + shape_string(input.shape()) +
                     " incompatible with weights " + shape_string(w) + " / bias " +
                     shape_string(p.bias.shape()));
  }
}

template <typename Scalar>
Tensor<Scalar> depthwise_conv2d(const Tensor<Scalar>& input, const LayerParams<Scalar>& p,
                                Index stride, Padding padding) {
  check_depthwise_params(input, p);
  const auto& w = p.weights.shape();
  const ConvGeometry g = conv_geometry(input.shape(), w[0], w[1], stride, padding, "depthwise_conv2d");
  const Index c = g.channels;
  Tensor<Scalar> out({g.batch, g.out_h, g.out_w, c});
  const Scalar* in = input.ptr();
  const Scalar* wt = p.weights.ptr();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        Scalar* dst = out.ptr() + ((b * g.out_h + oy) * g.out_w + ox) * c;
        std::copy_n(p.bias.ptr(), c, dst);
        for (Index ky = 0; ky < g.k_h; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.in_w) continue;
            const Scalar* src = in + ((b * g.in_h + iy) * g.in_w + ix) * c;
            const Scalar* k = wt + (ky * g.k_w + kx) * c;
            for (Index ch = 0; ch < c; ++ch) dst[ch] += src[ch] * k[ch];
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
void depthwise_conv2d_backward(const Tensor<Scalar>& input, const LayerParams<Scalar>& p,
                               Index stride, Padding padding, const Tensor<Scalar>& grad_out,
                               Tensor<Scalar>* grad_input, LayerParams<Scalar>& grad_params) {
  const auto& w = p.weights.shape();
  const ConvGeometry g = conv_geometry(input.shape(), w[0], w[1], stride, padding, "depthwise_conv2d");
  const Index c = g.channels;
  const Scalar* in = input.ptr();
  const Scalar* wt = p.weights.ptr();
  Scalar* gw = grad_params.weights.ptr();
  Scalar* gb = grad_params.bias.ptr();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const Scalar* dy = grad_out.ptr() + ((b * g.out_h + oy) * g.out_w + ox) * c;
        for (Index ch = 0; ch < c; ++ch) gb[ch] += dy[ch];
        for (Index ky = 0; ky < g.k_h; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.in_w) continue;
            const Index in_off = ((b * g.in_h + iy) * g.in_w + ix) * c;
            const Index k_off = (ky * g.k_w + kx) * c;
            for (Index ch = 0; ch < c; ++ch) gw[k_off + ch] += dy[ch] * in[in_off + ch];
            if (grad_input) {
              Scalar* dx = grad_input->ptr() + in_off;
              for (Index ch = 0; ch < c; ++ch) dx[ch] += dy[ch] * wt[k_off + ch];
            }
          }
        }
      }
    }
  }
}

/// Depthwise (3x3 or any, given stride) followed by a 1x1 pointwise conv.
template <typename Scalar>
Tensor<Scalar> separable_conv2d(const Tensor<Scalar>& input, const LayerParams<Scalar>& depthwise,
                                const LayerParams<Scalar>& pointwise, Index stride) {
  return conv2d(depthwise_conv2d(input, depthwise, stride, Padding::same), pointwise, 1, Padding::same);
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const LayerParams<Scalar>& p) {
  const auto& w = p.weights.shape();
  if (input.rank() != 2 || w.size() != 2 || input.dim(1) != w[0] || p.bias.size() != w[1]) {
    throw ShapeError("linear: input " + shape_string(input.shape()) + " incompatible with weights " +
                     shape_string(w) + " / bias " + shape_string(p.bias.shape()));
  }
  Tensor<Scalar> out({input.dim(0), w[1]});
  out.matrix().noalias() = input.matrix() * p.weights.matrix();
  out.matrix().rowwise() += p.bias.data().transpose();
  return out;
}

template <typename Scalar>
void linear_backward(const Tensor<Scalar>& input, const LayerParams<Scalar>& p,
                     const Tensor<Scalar>& grad_out, Tensor<Scalar>* grad_input,
                     LayerParams<Scalar>& grad_params) {
  const auto dy = grad_out.matrix();
  grad_params.weights.matrix().noalias() += input.matrix().transpose() * dy;
  grad_params.bias.data() += dy.colwise().sum().transpose();
  if (grad_input) grad_input->matrix().noalias() += dy * p.weights.matrix().transpose();
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  return Tensor<Scalar>(input.shape(), input.data().cwiseMax(Scalar(0)));
}

/// Concatenate along the last axis, in argument order.
template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no operands");
  Shape shape = parts.front()->shape();
  Index channels = 0;
  for (const auto* t : parts) {
    const Shape& s = t->shape();
    if (s.size() != shape.size() || !std::equal(s.begin(), s.end() - 1, shape.begin())) {
      throw ShapeError("concat_channels: operand " + shape_string(s) + " does not match " +
                       shape_string(shape) + " outside the channel axis");
    }
    channels += s.back();
  }
  shape.back() = channels;
  Tensor<Scalar> out(shape);
  Index offset = 0;
  for (const auto* t : parts) {
    out.matrix().middleCols(offset, t->shape().back()) = t->matrix();
    offset += t->shape().back();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Tensor<Scalar>* parts[] = {&a, &b};
  return concat_channels<Scalar>(std::span<const Tensor<Scalar>* const>(parts));
}

/// Inverse of concat_channels: channel slice [offset, offset + count).
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& input, Index offset, Index count) {
  if (input.empty() || offset < 0 || count < 0 || offset + count > input.shape().back()) {
    throw ShapeError("slice_channels: range [" + std::to_string(offset) + "," +
                     std::to_string(offset + count) + ") outside " + shape_string(input.shape()));
  }
  Shape shape = input.shape();
  shape.back() = count;
  Tensor<Scalar> out(shape);
  out.matrix() = input.matrix().middleCols(offset, count);
  return out;
}

}  // namespace efld
