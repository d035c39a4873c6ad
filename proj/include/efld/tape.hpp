#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "efld/ops.hpp"

namespace efld {

/// Gradients produced by GradTape::backward.
template <typename Scalar>
class Gradients {
 public:
  using Var = std::size_t;

  /// Gradient with respect to a recorded value; zeros if nothing flowed into it.
  Tensor<Scalar> wrt(Var v) const {
    if (values_[v]) return *values_[v];
    return Tensor<Scalar>(shapes_[v]);
  }

  /// Gradient with respect to a layer's parameters, or nullptr if the layer was not used.
  const LayerParams<Scalar>* find(const LayerParams<Scalar>& params) const {
    auto it = params_.find(&params);
    return it == params_.end() ? nullptr : &it->second;
  }

 private:
  template <typename>
  friend class GradTape;

  std::vector<std::optional<Tensor<Scalar>>> values_;
  std::vector<Shape> shapes_;
  std::unordered_map<const LayerParams<Scalar>*, LayerParams<Scalar>> params_;
};

/// Records executed ops with the values backward needs. Backward runs the ops
/// in reverse order; gradients of values used more than once add up.
///
/// A tape is single-owner. Referenced LayerParams must outlive it and stay
/// unmodified until backward returns.
template <typename Scalar>
class GradTape {
 public:
  using Var = std::size_t;
  using T = Tensor<Scalar>;

  enum class Op { input, conv, depthwise, linear, relu, concat, reshape };

  struct Node {
    Op op;
    std::vector<Var> inputs;
    const LayerParams<Scalar>* params = nullptr;
    Index stride = 1;
    Padding padding = Padding::same;
    std::string name;
    bool needs_grad = true;
  };

  /// Leaf value. Leaves recorded with needs_grad = false receive no gradient.
  Var input(T value, std::string name = "input", bool needs_grad = true) {
    return push({Op::input, {}, nullptr, 1, Padding::same, std::move(name), needs_grad}, std::move(value));
  }

  Var conv2d(Var x, const LayerParams<Scalar>& p, Index stride, Padding padding, std::string name = {}) {
    return push({Op::conv, {x}, &p, stride, padding, std::move(name)},
                efld::conv2d(value(x), p, stride, padding));
  }

  Var depthwise_conv2d(Var x, const LayerParams<Scalar>& p, Index stride, Padding padding,
                       std::string name = {}) {
    return push({Op::depthwise, {x}, &p, stride, padding, std::move(name)},
                efld::depthwise_conv2d(value(x), p, stride, padding));
  }

  Var separable_conv2d(Var x, const LayerParams<Scalar>& depthwise, const LayerParams<Scalar>& pointwise,
                       Index stride) {
    return conv2d(depthwise_conv2d(x, depthwise, stride, Padding::same), pointwise, 1, Padding::same);
  }

  Var linear(Var x, const LayerParams<Scalar>& p, std::string name = {}) {
    return push({Op::linear, {x}, &p, 1, Padding::same, std::move(name)}, efld::linear(value(x), p));
  }

  Var relu(Var x) { return push({Op::relu, {x}, nullptr, 1, Padding::same, {}}, efld::relu(value(x))); }

  Var concat(std::span<const Var> parts, std::string name = {}) {
    std::vector<const T*> ptrs;
    for (Var v : parts) ptrs.push_back(&value(v));
    return push({Op::concat, {parts.begin(), parts.end()}, nullptr, 1, Padding::same, std::move(name)},
                concat_channels<Scalar>(std::span<const T* const>(ptrs)));
  }

  Var concat(Var a, Var b, std::string name = {}) {
    const Var parts[] = {a, b};
    return concat(std::span<const Var>(parts), std::move(name));
  }

  Var reshape(Var x, Shape shape) {
    return push({Op::reshape, {x}, nullptr, 1, Padding::same, {}}, value(x).reshaped(std::move(shape)));
  }

  const T& value(Var v) const { return values_.at(v); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const Node& node(Var v) const { return nodes_.at(v); }

  /// Reverse-mode sweep seeded with dLoss/dv for each listed output.
  Gradients<Scalar> backward(std::span<const std::pair<Var, T>> seeds) const {
    if (nodes_.empty()) throw UsageError("backward: tape is empty (run a forward pass first)");
    Gradients<Scalar> g;
    g.values_.resize(nodes_.size());
    g.shapes_.reserve(nodes_.size());
    for (const T& v : values_) g.shapes_.push_back(v.shape());
    for (const auto& [var, grad] : seeds) {
      if (grad.shape() != values_.at(var).shape()) {
        throw ShapeError("backward: seed " + shape_string(grad.shape()) + " does not match value " +
                         shape_string(values_[var].shape()));
      }
      accumulate(g, var, grad);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!g.values_[i]) continue;
      const Node& n = nodes_[i];
      const T& dy = *g.values_[i];
      switch (n.op) {
        case Op::input: break;
        case Op::conv: {
          T* dx = input_grad(g, n.inputs[0]);
          conv2d_backward(value(n.inputs[0]), *n.params, n.stride, n.padding, dy, dx, param_grad(g, n.params));
          break;
        }
        case Op::depthwise: {
          T* dx = input_grad(g, n.inputs[0]);
          depthwise_conv2d_backward(value(n.inputs[0]), *n.params, n.stride, n.padding, dy, dx,
                                    param_grad(g, n.params));
          break;
        }
        case Op::linear: {
          T* dx = input_grad(g, n.inputs[0]);
          linear_backward(value(n.inputs[0]), *n.params, dy, dx, param_grad(g, n.params));
          break;
        }
        case Op::relu: {
          if (T* dx = input_grad(g, n.inputs[0])) {
            dx->data().array() += (values_[i].data().array() > Scalar(0)).select(dy.data().array(), Scalar(0));
          }
          break;
        }
        case Op::concat: {
          Index offset = 0;
          for (Var in : n.inputs) {
            const Index c = values_[in].shape().back();
            if (T* dx = input_grad(g, in)) dx->matrix() += dy.matrix().middleCols(offset, c);
            offset += c;
          }
          break;
        }
        case Op::reshape: {
          if (T* dx = input_grad(g, n.inputs[0])) dx->data() += dy.data();
          break;
        }
      }
    }
    return g;
  }

  Gradients<Scalar> backward(Var output, const T& seed) const {
    const std::pair<Var, T> seeds[] = {{output, seed}};
    return backward(std::span<const std::pair<Var, T>>(seeds));
  }

 private:
  Var push(Node node, T value) {
    nodes_.push_back(std::move(node));
    values_.push_back(std::move(value));
    return nodes_.size() - 1;
  }

  void accumulate(Gradients<Scalar>& g, Var v, const T& grad) const {
    if (g.values_[v]) {
      g.values_[v]->data() += grad.data();
    } else {
      g.values_[v] = grad;
    }
  }

  T* input_grad(Gradients<Scalar>& g, Var v) const {
    if (!nodes_[v].needs_grad) return nullptr;
    if (!g.values_[v]) g.values_[v] = T(values_[v].shape());
    return &*g.values_[v];
  }

  LayerParams<Scalar>& param_grad(Gradients<Scalar>& g, const LayerParams<Scalar>* p) const {
    auto it = g.params_.find(p);
    if (it == g.params_.end()) it = g.params_.emplace(p, LayerParams<Scalar>::zeros_like(*p)).first;
    return it->second;
  }

  std::vector<Node> nodes_;
  std::vector<T> values_;
};

}  // namespace efld
