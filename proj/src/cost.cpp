#include "efld/cost.hpp"

#include <json.hpp>

#include <cstdio>

#include "efld/container.hpp"

namespace efld {

CostReport count_cost(const ModelConfig& config, const std::vector<std::string>& heads, Index input_size) {
  ModelConfig c = heads.empty() ? config : config.with_heads(heads);
  if (input_size > 0) c.input_size = input_size;
  c.validate();
  CostReport r;
  const ShapeExecutor trace = trace_architecture(c);
  for (const LayerInfo& info : trace.layers()) {
    const Index weights = shape_size(info.weight_shape);
    r.layers.push_back({info.spec.name, info.spec.kind, info.out_shape, info.macs, info.params, weights});
    r.macs += info.macs;
    r.params += info.params;
    r.weights += weights;
  }
  r.biases = r.params - r.weights;

  // Container sizes come from encoding a zero-weight model with the same layout.
  const Model<float> zero = build_model<float>(c, 0);
  r.container_float_bytes = Index(encode(zero).size());
  std::map<std::string, QuantParams> sites{{"input", {}}};
  for (const auto& s : trace.sites()) sites.emplace(s, QuantParams{});
  r.container_int8_bytes = Index(encode(quantize_model(zero, sites)).size());
  return r;
}

ModelConfig apply_variant(const ModelConfig& config, const std::string& variant) {
  if (variant == "default") return config;
  if (variant == "conv-backbone") return config.with_conventional_backbone();
  if (variant == "pfld-head") return config.with_plain_head();
  throw UsageError("unknown variant '" + variant + "' (expected default, conv-backbone or pfld-head)");
}

std::string CostReport::json() const {
  nlohmann::ordered_json j;
  j["macs"] = macs;
  j["flops"] = 2 * macs;
  j["mflops"] = mflops();
  j["params"] = params;
  j["weights"] = weights;
  j["biases"] = biases;
  j["payload_bytes"] = {{"int8", payload_bytes(1)}, {"float32", payload_bytes(4)}, {"float64", payload_bytes(8)}};
  j["container_bytes"] = {{"int8", container_int8_bytes}, {"float32", container_float_bytes}};
  j["container_mb"] = {{"int8", double(container_int8_bytes) / 1e6}, {"float32", double(container_float_bytes) / 1e6}};
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const LayerCost& l : this->layers) {
    layers.push_back({{"name", l.name}, {"kind", to_string(l.kind)}, {"out_shape", l.out_shape},
                      {"macs", l.macs}, {"params", l.params}});
  }
  j["layers"] = std::move(layers);
  return j.dump(2);
}

std::string CostReport::text() const {
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-22s %-10s %-16s %12s %10s\n", "layer", "kind", "output", "MACs", "params");
  out += buf;
  for (const LayerCost& l : layers) {
    std::snprintf(buf, sizeof buf, "%-22s %-10s %-16s %12lld %10lld\n", l.name.c_str(), to_string(l.kind),
                  shape_string(l.out_shape).c_str(), static_cast<long long>(l.macs), static_cast<long long>(l.params));
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "total MACs %lld\nMFLOPs %.2f\nparameters %lld\nint8 payload %lld bytes\n"
                "float32 payload %lld bytes\nint8 container %lld bytes (%.3f MB)\nfloat32 container %lld bytes (%.3f MB)\n",
                static_cast<long long>(macs), mflops(), static_cast<long long>(params),
                static_cast<long long>(payload_bytes(1)), static_cast<long long>(payload_bytes(4)),
                static_cast<long long>(container_int8_bytes), double(container_int8_bytes) / 1e6,
                static_cast<long long>(container_float_bytes), double(container_float_bytes) / 1e6);
  return out + buf;
}

}  // namespace efld
