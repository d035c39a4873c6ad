#pragma once

#include <string>
#include <vector>

#include "efld/config.hpp"
#include "efld/ops.hpp"

namespace efld {

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::conv;
  Shape out_shape;
  Index macs = 0;
  Index params = 0;
  Index weights = 0;
};

/// Static cost of a config: MACs count conv, depthwise and linear layers only.
struct CostReport {
  std::vector<LayerCost> layers;
  Index macs = 0;
  Index params = 0;
  Index weights = 0;  // params minus biases
  Index biases = 0;
  Index container_float_bytes = 0;  // full float32 container
  Index container_int8_bytes = 0;   // full int8 container (weights int8, biases int32, sites)

  double flops() const { return 2.0 * double(macs); }
  double mflops() const { return flops() / 1e6; }
  /// Nominal payload of params at the given width (1 = int8, 4 = float32, 8 = float64).
  Index payload_bytes(Index width) const { return params * width; }

  std::string json() const;
  std::string text() const;
};

/// `heads` restricts the head set (all configured heads when empty); a
/// positive `input_size` overrides the config's.
CostReport count_cost(const ModelConfig& config, const std::vector<std::string>& heads = {}, Index input_size = 0);

/// Named architecture variants: "default", "conv-backbone", "pfld-head".
ModelConfig apply_variant(const ModelConfig& config, const std::string& variant);

}  // namespace efld
