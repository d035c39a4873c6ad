#include "efld/quant.hpp"

#include <algorithm>
#include <limits>

#include "efld/log.hpp"

namespace efld {

QuantParams range_params(double lo, double hi, const std::string& site) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  double scale = (hi - lo) / 255.0;
  if (!(scale >= min_scale)) {
    warn("calibration: site '" + site + "' has a constant range; scale floored to 1e-8");
    scale = min_scale;
  }
  const double zp = std::clamp(std::round(-128.0 - lo / scale), -128.0, 127.0);
  return {scale, std::int32_t(zp)};
}

std::map<std::string, QuantParams> Calibration::params() const {
  std::map<std::string, QuantParams> out;
  for (const auto& [site, r] : ranges) out.emplace(site, range_params(r.first, r.second, site));
  return out;
}

Calibration calibrate(const Model<float>& model, const std::vector<const Sample*>& samples, Index batch_size) {
  if (samples.empty()) throw UsageError("calibrate: calibration set is empty");
  Calibration cal;
  const SiteObserver<float> observer = [&](const std::string& site, const Tensorf& value) {
    const float lo = value.data().minCoeff(), hi = value.data().maxCoeff();
    auto [it, fresh] = cal.ranges.try_emplace(site, lo, hi);
    if (!fresh) {
      it->second.first = std::min(it->second.first, double(lo));
      it->second.second = std::max(it->second.second, double(hi));
    }
  };
  const Index size = model.config().input_size;
  for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + std::size_t(batch_size));
    const std::vector<const Sample*> chunk(samples.begin() + std::ptrdiff_t(start),
                                           samples.begin() + std::ptrdiff_t(end));
    forward_pass(model, stack_images(chunk, size), model.config().head_names(), false, &observer);
  }
  return cal;
}

Calibration calibrate(const Model<float>& model, const Dataset& dataset, Index batch_size) {
  std::vector<const Sample*> samples;
  for (const Sample& s : dataset.samples) samples.push_back(&s);
  return calibrate(model, samples, batch_size);
}

QuantizedModel::QuantizedModel(ModelConfig config, std::vector<QuantLayer> layers,
                               std::map<std::string, QuantParams> sites)
    : config_(std::move(config)), layers_(std::move(layers)), sites_(std::move(sites)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!index_.emplace(layers_[i].name, i).second) {
      throw ConfigError("quantized model: duplicate layer '" + layers_[i].name + "'");
    }
  }
}

const QuantLayer& QuantizedModel::layer(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("quantized model: no layer named '" + name + "'");
  return layers_[it->second];
}

const QuantParams& QuantizedModel::site(const std::string& name) const {
  auto it = sites_.find(name);
  if (it == sites_.end()) throw ValidationError("quantized model: no calibration for site '" + name + "'");
  return it->second;
}

Index QuantizedModel::weight_bytes() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.weights.size();
  return n;
}

Index QuantizedModel::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.count();
  return n;
}

QuantizedModel QuantizedModel::pruned(const std::vector<std::string>& keep_heads) const {
  if (keep_heads.empty()) throw UsageError("prune: keep at least one head");
  ModelConfig config = config_.with_heads(keep_heads);
  auto kept = [&](const std::string& name) {
    if (!name.starts_with("head.")) return true;
    return std::any_of(keep_heads.begin(), keep_heads.end(),
                       [&](const std::string& h) { return name.starts_with("head." + h + "."); });
  };
  std::vector<QuantLayer> layers;
  for (const auto& l : layers_) {
    if (kept(l.name)) layers.push_back(l);
  }
  std::map<std::string, QuantParams> sites;
  for (const auto& [name, qp] : sites_) {
    if (kept(name)) sites.emplace(name, qp);
  }
  return QuantizedModel(std::move(config), std::move(layers), std::move(sites));
}

namespace {

// Executor whose values are site names; records which site feeds each layer.
struct SiteExecutor {
  using Value = std::string;
  std::map<std::string, std::string> inputs;

  Value layer(const Value& x, const LayerSpec& spec) {
    inputs[spec.name] = x;
    return spec.name;
  }
  Value concat(const std::vector<Value>&, const std::string& site) { return site; }
  Value flatten(const Value& x) { return x; }
};

}  // namespace

std::map<std::string, std::string> layer_input_sites(const ModelConfig& config) {
  SiteExecutor ex;
  const std::string features = arch::backbone(ex, config, std::string("input"));
  for (const HeadConfig& h : config.heads) arch::head(ex, config, h, features);
  return ex.inputs;
}

QuantizedModel quantize_model(const Model<float>& model, const std::map<std::string, QuantParams>& sites) {
  const ModelConfig& config = model.config();
  const auto inputs = layer_input_sites(config);
  std::vector<std::string> needed = trace_architecture(config).sites();
  needed.insert(needed.begin(), "input");
  std::map<std::string, QuantParams> kept;
  for (const std::string& site : needed) {
    auto it = sites.find(site);
    if (it == sites.end()) throw ValidationError("quantize_model: calibration does not cover site '" + site + "'");
    kept.emplace(site, it->second);
  }
  std::vector<QuantLayer> layers;
  for (const auto& l : model.layers()) {
    QuantLayer q;
    q.name = l.name;
    q.kind = l.params.kind;
    q.input_site = inputs.at(l.name);
    const double max_abs = l.params.weights.empty() ? 0.0 : double(l.params.weights.data().cwiseAbs().maxCoeff());
    q.weight_scale = std::max(max_abs / 127.0, min_scale);
    q.weights = Tensor8(l.params.weights.shape());
    for (Index i = 0; i < q.weights.size(); ++i) {
      q.weights[i] = saturate_int8(double(l.params.weights[i]) / q.weight_scale);
    }
    const double bias_scale = sites.at(q.input_site).scale * q.weight_scale;
    q.bias = Tensor32(l.params.bias.shape());
    for (Index i = 0; i < q.bias.size(); ++i) {
      const double v = std::round(double(l.params.bias[i]) / bias_scale);
      q.bias[i] = std::int32_t(std::clamp(v, double(std::numeric_limits<std::int32_t>::min()),
                                          double(std::numeric_limits<std::int32_t>::max())));
    }
    layers.push_back(std::move(q));
  }
  return QuantizedModel(config, std::move(layers), std::move(kept));
}

namespace {

struct QValue {
  Tensor8 q;
  QuantParams qp;
};

// Requantizes int32 accumulators at real scale `acc_scale` onto `out`.
Tensor8 requantize(const Tensor32& acc, double acc_scale, const QuantParams& out, bool relu) {
  const double m = acc_scale / out.scale;
  Tensor8 y(acc.shape());
  const std::int8_t floor = relu ? std::int8_t(std::clamp(out.zero_point, -128, 127)) : std::int8_t(-128);
  for (Index i = 0; i < acc.size(); ++i) {
    const std::int8_t v = saturate_int8(double(acc[i]) * m + double(out.zero_point));
    y[i] = std::max(v, floor);
  }
  return y;
}

Tensor32 centered(const QValue& x) {
  Tensor32 c(x.q.shape());
  c.data() = x.q.data().cast<std::int32_t>().array() - x.qp.zero_point;
  return c;
}

class QuantExecutor {
 public:
  using Value = QValue;

  explicit QuantExecutor(const QuantizedModel& model) : model_(model) {}

  Value layer(const Value& x, const LayerSpec& spec) {
    const QuantLayer& l = model_.layer(spec.name);
    LayerParams<std::int32_t> p;
    p.kind = l.kind;
    p.weights = l.weights.cast<std::int32_t>();
    p.bias = l.bias;
    const Tensor32 in = centered(x);
    Tensor32 acc;
    switch (spec.kind) {
      case LayerKind::conv: acc = conv2d(in, p, spec.stride, spec.padding); break;
      case LayerKind::depthwise: acc = depthwise_conv2d(in, p, spec.stride, spec.padding); break;
      case LayerKind::linear: acc = linear(in, p); break;
    }
    const QuantParams& out = model_.site(spec.name);
    return {requantize(acc, x.qp.scale * l.weight_scale, out, spec.relu), out};
  }

  Value concat(const std::vector<Value>& parts, const std::string& site) {
    const QuantParams& out = model_.site(site);
    std::vector<Tensor8> rescaled;
    rescaled.reserve(parts.size());
    for (const Value& v : parts) {
      if (v.qp == out) {
        rescaled.push_back(v.q);
      } else {
        rescaled.push_back(requantize(centered(v), v.qp.scale, out, false));
      }
    }
    std::vector<const Tensor8*> ptrs;
    for (const auto& t : rescaled) ptrs.push_back(&t);
    return {concat_channels<std::int8_t>(std::span<const Tensor8* const>(ptrs)), out};
  }

  Value flatten(const Value& x) {
    const Shape& s = x.q.shape();
    return {x.q.reshaped({s[0], shape_size(s) / s[0]}), x.qp};
  }

 private:
  const QuantizedModel& model_;
};

}  // namespace

std::map<std::string, Tensorf> quantized_forward(const QuantizedModel& model, const Tensorf& images,
                                                 const std::vector<std::string>& formats) {
  const ModelConfig& config = model.config();
  check_images(config, images);
  std::vector<const HeadConfig*> heads;
  for (const auto& f : formats) heads.push_back(&config.head(f));
  const QuantParams& in_qp = model.site("input");
  QValue x{Tensor8(images.shape()), in_qp};
  for (Index i = 0; i < images.size(); ++i) x.q[i] = quantize_value(double(images[i]), in_qp);
  QuantExecutor ex(model);
  const QValue features = arch::backbone(ex, config, x);
  std::map<std::string, Tensorf> out;
  for (const HeadConfig* h : heads) {
    const QValue y = arch::head(ex, config, *h, features);
    Tensorf real(y.q.shape());
    for (Index i = 0; i < real.size(); ++i) real[i] = float(dequantize_value(y.q[i], y.qp));
    out.emplace(h->format.name, std::move(real));
  }
  return out;
}

Tensorf quantized_predict(const QuantizedModel& model, const std::vector<const Sample*>& samples,
                          const std::string& format, Index batch_size) {
  const ModelConfig& mc = model.config();
  Tensorf out({Index(samples.size()), mc.head(format).out_dim()});
  for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + std::size_t(batch_size));
    const std::vector<const Sample*> chunk(samples.begin() + std::ptrdiff_t(start),
                                           samples.begin() + std::ptrdiff_t(end));
    const auto result = quantized_forward(model, stack_images(chunk, mc.input_size), {format});
    out.matrix().middleRows(Index(start), Index(end - start)) = result.at(format).matrix();
  }
  return out;
}

}  // namespace efld
