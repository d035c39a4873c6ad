#include "efld/model.hpp"

namespace efld {

ShapeExecutor::Value ShapeExecutor::layer(const Value& x, const LayerSpec& spec) {
  LayerInfo info;
  info.spec = spec;
  info.in_shape = x;
  const Index k = spec.kernel;
  if (spec.kind == LayerKind::linear) {
    if (x.size() != 1) throw ShapeError(spec.name + ": linear layer needs a vector input, got " + shape_string(x));
    info.weight_shape = {x[0], spec.out};
    info.out_shape = {spec.out};
    info.fan_in = x[0];
    info.macs = x[0] * spec.out;
  } else {
    if (x.size() != 3) throw ShapeError(spec.name + ": conv layer needs an (H,W,C) input, got " + shape_string(x));
    const ConvGeometry g = conv_geometry({1, x[0], x[1], x[2]}, k, k, spec.stride, spec.padding, spec.name.c_str());
    const Index cin = x[2];
    if (spec.kind == LayerKind::conv) {
      info.weight_shape = {k, k, cin, spec.out};
      info.out_shape = {g.out_h, g.out_w, spec.out};
      info.fan_in = k * k * cin;
      info.macs = k * k * cin * spec.out * g.out_h * g.out_w;
    } else {
      info.weight_shape = {k, k, cin};
      info.out_shape = {g.out_h, g.out_w, cin};
      info.fan_in = k * k;
      info.macs = k * k * cin * g.out_h * g.out_w;
    }
  }
  info.params = shape_size(info.weight_shape) + info.weight_shape.back();
  Value out = info.out_shape;
  sites_.push_back(spec.name);
  layers_.push_back(std::move(info));
  return out;
}

ShapeExecutor::Value ShapeExecutor::concat(const std::vector<Value>& parts, const std::string& site) {
  Value out = parts.at(0);
  out.back() = 0;
  for (const auto& p : parts) {
    if (p.size() != out.size() || !std::equal(p.begin(), p.end() - 1, out.begin())) {
      throw ShapeError(site + ": concat operands disagree outside the channel axis");
    }
    out.back() += p.back();
  }
  sites_.push_back(site);
  return out;
}

ShapeExecutor::Value ShapeExecutor::flatten(const Value& x) { return {shape_size(x)}; }

ShapeExecutor trace_architecture(const ModelConfig& config) {
  ShapeExecutor ex;
  const Shape features = arch::backbone(ex, config, Shape{config.input_size, config.input_size, 3});
  for (const auto& h : config.heads) arch::head(ex, config, h, features);
  return ex;
}

}  // namespace efld
