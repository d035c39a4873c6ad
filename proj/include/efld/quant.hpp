#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "efld/dataset.hpp"
#include "efld/model.hpp"

namespace efld {

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

using Tensor8 = Tensor<std::int8_t>;
using Tensor32 = Tensor<std::int32_t>;

/// Round half away from zero, saturated to int8.
inline std::int8_t saturate_int8(double v) {
  return std::int8_t(std::clamp(std::round(v), -128.0, 127.0));
}

/// clamp(round(x / scale) + zero_point, -128, 127).
inline std::int8_t quantize_value(double x, const QuantParams& qp) {
  return saturate_int8(std::round(x / qp.scale) + double(qp.zero_point));
}

inline double dequantize_value(std::int32_t q, const QuantParams& qp) { return double(q - qp.zero_point) * qp.scale; }

inline constexpr double min_scale = 1e-8;

/// Asymmetric parameters mapping [lo, hi] (widened to contain 0) onto [-128, 127].
QuantParams range_params(double lo, double hi, const std::string& site = {});

/// Global min/max per activation site ("input", every layer output, every concat).
struct Calibration {
  std::map<std::string, std::pair<double, double>> ranges;

  std::map<std::string, QuantParams> params() const;
};

/// Float forward passes over every sample, running all of the model's heads.
Calibration calibrate(const Model<float>& model, const std::vector<const Sample*>& samples, Index batch_size = 64);
Calibration calibrate(const Model<float>& model, const Dataset& dataset, Index batch_size = 64);

struct QuantLayer {
  std::string name;
  LayerKind kind = LayerKind::conv;
  Tensor8 weights;          // symmetric, zero point 0
  double weight_scale = 1.0;
  Tensor32 bias;            // scale = input scale * weight scale, zero point 0
  std::string input_site;

  Index count() const { return weights.size() + bias.size(); }
};

class QuantizedModel {
 public:
  QuantizedModel(ModelConfig config, std::vector<QuantLayer> layers, std::map<std::string, QuantParams> sites);

  const ModelConfig& config() const { return config_; }
  const std::vector<QuantLayer>& layers() const { return layers_; }
  const QuantLayer& layer(const std::string& name) const;
  const std::map<std::string, QuantParams>& sites() const { return sites_; }
  const QuantParams& site(const std::string& name) const;

  /// int8 weight bytes (equals the float model's weight count).
  Index weight_bytes() const;
  Index parameter_count() const;

  /// Backbone, decoder, and only the listed heads (with their sites).
  QuantizedModel pruned(const std::vector<std::string>& keep_heads) const;

 private:
  ModelConfig config_;
  std::vector<QuantLayer> layers_;
  std::map<std::string, QuantParams> sites_;
  std::map<std::string, std::size_t> index_;
};

/// Layer name -> name of the site that feeds it, from the architecture wiring.
std::map<std::string, std::string> layer_input_sites(const ModelConfig& config);

/// Per-tensor symmetric weights (max|w| / 127), int32 biases at s_in * s_w.
QuantizedModel quantize_model(const Model<float>& model, const std::map<std::string, QuantParams>& sites);

/// Integer-only inference: int8 operands, int32 accumulation, requantization by
/// a double multiplier rounded half away from zero. Head outputs are dequantized.
std::map<std::string, Tensorf> quantized_forward(const QuantizedModel& model, const Tensorf& images,
                                                 const std::vector<std::string>& formats);

/// Quantized predictions for samples (resized to the model input), [N, 2K].
Tensorf quantized_predict(const QuantizedModel& model, const std::vector<const Sample*>& samples,
                          const std::string& format, Index batch_size = 64);

}  // namespace efld
