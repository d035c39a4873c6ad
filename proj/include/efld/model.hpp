#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "efld/config.hpp"
#include "efld/rng.hpp"
#include "efld/tape.hpp"

namespace efld {

/// Static description of one parameterized layer as the architecture calls it.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  Index kernel = 1;        // square kernel; unused for linear
  Index out = 0;           // Cout or Dout; depthwise keeps its channel count
  Index stride = 1;
  Padding padding = Padding::same;
  bool relu = false;
};

/// The EFLD wiring, written once against an executor. An executor provides
///   Value layer(Value x, const LayerSpec&)
///   Value concat(const std::vector<Value>&, const std::string& site)
///   Value flatten(Value)
/// and decides what a Value is (shapes, tape variables, int8 tensors, ...).
namespace arch {

inline std::string eosa_name(std::size_t module) { return "eosa" + std::to_string(module + 1); }

template <class Exec>
typename Exec::Value eosa(Exec& ex, const ModelConfig& config, std::size_t module, typename Exec::Value x) {
  const EosaConfig& m = config.eosa.at(module);
  const std::string base = eosa_name(module);
  std::vector<typename Exec::Value> parts;
  if (m.extra_conv == ExtraConvKind::conventional) {
    parts.push_back(ex.layer(x, {base + ".extra", LayerKind::conv, 3, m.f_conv, 2, Padding::same, true}));
  } else {
    auto dw = ex.layer(x, {base + ".extra.dw", LayerKind::depthwise, 3, 0, 2, Padding::same, false});
    parts.push_back(ex.layer(dw, {base + ".extra.pw", LayerKind::conv, 1, m.f_conv, 1, Padding::same, true}));
  }
  auto h = x;
  for (Index j = 0; j < m.n_osa; ++j) {
    h = ex.layer(h, {base + ".osa.l" + std::to_string(j), LayerKind::conv, 3, m.f_osa, j == 0 ? 2 : 1,
                     Padding::same, true});
    parts.push_back(h);
  }
  return ex.concat(parts, base + ".out");
}

template <class Exec>
typename Exec::Value decoder(Exec& ex, const ModelConfig& config, typename Exec::Value x) {
  auto pw = ex.layer(x, {"decoder.pw", LayerKind::conv, 1, config.decoder_dim, 1, Padding::valid, true});
  auto dw = ex.layer(pw, {"decoder.dw", LayerKind::depthwise, config.feature_size(), 0, 1, Padding::valid, false});
  return ex.flatten(dw);
}

template <class Exec>
typename Exec::Value backbone(Exec& ex, const ModelConfig& config, typename Exec::Value x) {
  for (std::size_t i = 0; i < config.eosa.size(); ++i) x = eosa(ex, config, i, x);
  return decoder(ex, config, x);
}

inline std::string head_prefix(const HeadConfig& head) { return "head." + head.format.name; }

template <class Exec>
typename Exec::Value head(Exec& ex, const ModelConfig& config, const HeadConfig& head, typename Exec::Value v) {
  const std::string base = head_prefix(head);
  if (config.head_kind == HeadKind::efld) {
    for (Index j = 0; j < head.n_head; ++j) {
      const std::string id = std::to_string(j);
      auto h = ex.layer(v, {base + ".b" + id, LayerKind::linear, 1, head.f_head, 1, Padding::valid, true});
      v = ex.concat({v, h}, base + ".c" + id);
    }
  }
  return ex.layer(v, {base + ".out", LayerKind::linear, 1, head.out_dim(), 1, Padding::valid, false});
}

}  // namespace arch

/// Per-layer static information: shapes, MACs and parameter counts.
struct LayerInfo {
  LayerSpec spec;
  Shape in_shape;   // without batch: (H, W, C) or (D)
  Shape out_shape;
  Shape weight_shape;
  Index macs = 0;
  Index params = 0;
  Index fan_in = 0;
};

/// Shape-propagating executor; its Value is a per-sample shape.
class ShapeExecutor {
 public:
  using Value = Shape;

  Value layer(const Value& x, const LayerSpec& spec);
  Value concat(const std::vector<Value>& parts, const std::string& site);
  Value flatten(const Value& x);

  const std::vector<LayerInfo>& layers() const { return layers_; }
  /// Quantization sites in execution order: each layer output and each concat.
  const std::vector<std::string>& sites() const { return sites_; }

 private:
  std::vector<LayerInfo> layers_;
  std::vector<std::string> sites_;
};

/// Walks the full architecture (backbone, decoder, every configured head).
ShapeExecutor trace_architecture(const ModelConfig& config);

template <typename Scalar>
struct NamedLayer {
  std::string name;
  LayerParams<Scalar> params;
};

/// Instantiated parameters, addressable by hierarchical layer name
/// (weights "<layer>.w", bias "<layer>.b").
template <typename Scalar>
class Model {
 public:
  Model(ModelConfig config, std::vector<NamedLayer<Scalar>> layers)
      : config_(std::move(config)), layers_(std::move(layers)) {
    index_.reserve(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!index_.emplace(layers_[i].name, i).second) {
        throw ConfigError("model: duplicate layer name '" + layers_[i].name + "'");
      }
    }
  }

  Model(const Model& other) : Model(other.config_, other.layers_) {}
  Model(Model&&) noexcept = default;
  Model& operator=(Model other) {
    config_ = std::move(other.config_);
    layers_ = std::move(other.layers_);
    index_ = std::move(other.index_);
    return *this;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<NamedLayer<Scalar>>& layers() { return layers_; }
  const std::vector<NamedLayer<Scalar>>& layers() const { return layers_; }

  bool has_layer(const std::string& name) const { return index_.count(name) != 0; }

  const LayerParams<Scalar>& layer(const std::string& name) const { return layers_[position(name)].params; }
  LayerParams<Scalar>& layer(const std::string& name) { return layers_[position(name)].params; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.params.count();
    return n;
  }

  /// Backbone, decoder and only the listed heads.
  Model pruned(const std::vector<std::string>& keep_heads) const {
    if (keep_heads.empty()) throw UsageError("prune: keep at least one head");
    ModelConfig config = config_.with_heads(keep_heads);
    std::vector<NamedLayer<Scalar>> kept;
    for (const auto& l : layers_) {
      if (!l.name.starts_with("head.")) {
        kept.push_back(l);
        continue;
      }
      for (const auto& h : keep_heads) {
        if (l.name.starts_with("head." + h + ".")) kept.push_back(l);
      }
    }
    return Model(std::move(config), std::move(kept));
  }

  template <typename To>
  Model<To> cast() const {
    std::vector<NamedLayer<To>> out;
    for (const auto& l : layers_) out.push_back({l.name, l.params.template cast<To>()});
    return Model<To>(config_, std::move(out));
  }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("model: no layer named '" + name + "'");
    return it->second;
  }

  ModelConfig config_;
  std::vector<NamedLayer<Scalar>> layers_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initialization: weights uniform in +-sqrt(6 / fan_in), biases zero.
template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const ShapeExecutor trace = trace_architecture(config);
  Rng rng(seed);
  std::vector<NamedLayer<Scalar>> layers;
  for (const LayerInfo& info : trace.layers()) {
    LayerParams<Scalar> p;
    p.kind = info.spec.kind;
    p.weights = Tensor<Scalar>(info.weight_shape);
    p.bias = Tensor<Scalar>({info.weight_shape.back()});
    const double bound = std::sqrt(6.0 / double(info.fan_in));
    for (Index i = 0; i < p.weights.size(); ++i) p.weights[i] = Scalar(uniform(rng, -bound, bound));
    layers.push_back({info.spec.name, std::move(p)});
  }
  return Model<Scalar>(config, std::move(layers));
}

/// Callback receiving each quantization site's float value during a forward pass.
template <typename Scalar>
using SiteObserver = std::function<void(const std::string& site, const Tensor<Scalar>& value)>;

/// Executor that records the float forward pass on a GradTape.
template <typename Scalar>
class TapeExecutor {
 public:
  using Value = typename GradTape<Scalar>::Var;

  TapeExecutor(const Model<Scalar>& model, GradTape<Scalar>& tape, const SiteObserver<Scalar>* observer = nullptr)
      : model_(model), tape_(tape), observer_(observer) {}

  Value layer(Value x, const LayerSpec& spec) {
    const LayerParams<Scalar>& p = model_.layer(spec.name);
    Value y;
    switch (spec.kind) {
      case LayerKind::conv: y = tape_.conv2d(x, p, spec.stride, spec.padding, spec.name); break;
      case LayerKind::depthwise: y = tape_.depthwise_conv2d(x, p, spec.stride, spec.padding, spec.name); break;
      case LayerKind::linear: y = tape_.linear(x, p, spec.name); break;
    }
    if (spec.relu) y = tape_.relu(y);
    observe(spec.name, y);
    return y;
  }

  Value concat(const std::vector<Value>& parts, const std::string& site) {
    Value y = tape_.concat(std::span<const Value>(parts), site);
    observe(site, y);
    return y;
  }

  Value flatten(Value x) {
    const Shape& s = tape_.value(x).shape();
    return tape_.reshape(x, {s[0], shape_size(s) / s[0]});
  }

 private:
  void observe(const std::string& site, Value v) {
    if (observer_ && *observer_) (*observer_)(site, tape_.value(v));
  }

  const Model<Scalar>& model_;
  GradTape<Scalar>& tape_;
  const SiteObserver<Scalar>* observer_;
};

/// A recorded forward pass: backbone and decoder once, then each requested head.
template <typename Scalar>
struct ForwardPass {
  using Var = typename GradTape<Scalar>::Var;

  GradTape<Scalar> tape;
  Var input = 0;
  Var features = 0;
  std::map<std::string, Var> heads;

  const Tensor<Scalar>& output(const std::string& format) const {
    auto it = heads.find(format);
    if (it == heads.end()) throw UsageError("forward pass did not run head '" + format + "'");
    return tape.value(it->second);
  }
};

template <typename Scalar>
void check_images(const ModelConfig& config, const Tensor<Scalar>& images) {
  const Index s = config.input_size;
  if (images.rank() != 4 || images.dim(1) != s || images.dim(2) != s || images.dim(3) != 3) {
    throw ShapeError("model_forward: expected images [B," + std::to_string(s) + "," + std::to_string(s) +
                     ",3], got " + shape_string(images.shape()));
  }
}

template <typename Scalar>
ForwardPass<Scalar> forward_pass(const Model<Scalar>& model, Tensor<Scalar> images,
                                 const std::vector<std::string>& formats, bool input_needs_grad = false,
                                 const SiteObserver<Scalar>* observer = nullptr) {
  const ModelConfig& config = model.config();
  check_images(config, images);
  std::vector<const HeadConfig*> heads;
  for (const auto& f : formats) heads.push_back(&config.head(f));
  ForwardPass<Scalar> pass;
  TapeExecutor<Scalar> ex(model, pass.tape, observer);
  pass.input = pass.tape.input(std::move(images), "input", input_needs_grad);
  if (observer && *observer) (*observer)("input", pass.tape.value(pass.input));
  pass.features = arch::backbone(ex, config, pass.input);
  for (const HeadConfig* h : heads) pass.heads[h->format.name] = arch::head(ex, config, *h, pass.features);
  return pass;
}

/// Landmark predictions per requested format, each [B, 2K] in normalized crop coordinates.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> model_forward(const Model<Scalar>& model, const Tensor<Scalar>& images,
                                                    const std::vector<std::string>& formats) {
  const ForwardPass<Scalar> pass = forward_pass(model, images, formats);
  std::map<std::string, Tensor<Scalar>> out;
  for (const auto& [name, var] : pass.heads) out.emplace(name, pass.tape.value(var));
  return out;
}

/// Runs a single EOSA module (0-based index) of the model on x.
template <typename Scalar>
Tensor<Scalar> eosa_forward(const Model<Scalar>& model, std::size_t module, const Tensor<Scalar>& x) {
  GradTape<Scalar> tape;
  TapeExecutor<Scalar> ex(model, tape);
  return tape.value(arch::eosa(ex, model.config(), module, tape.input(x, "input", false)));
}

template <typename Scalar>
Tensor<Scalar> decoder_forward(const Model<Scalar>& model, const Tensor<Scalar>& x) {
  const Index fs = model.config().feature_size();
  if (x.rank() != 4 || x.dim(1) != fs || x.dim(2) != fs) {
    throw ShapeError("decoder_forward: expected spatial " + std::to_string(fs) + "x" + std::to_string(fs) +
                     " input, got " + shape_string(x.shape()));
  }
  GradTape<Scalar> tape;
  TapeExecutor<Scalar> ex(model, tape);
  return tape.value(arch::decoder(ex, model.config(), tape.input(x, "input", false)));
}

template <typename Scalar>
Tensor<Scalar> head_forward(const Model<Scalar>& model, const std::string& format, const Tensor<Scalar>& v) {
  GradTape<Scalar> tape;
  TapeExecutor<Scalar> ex(model, tape);
  const ModelConfig& config = model.config();
  return tape.value(arch::head(ex, config, config.head(format), tape.input(v, "input", false)));
}

}  // namespace efld
