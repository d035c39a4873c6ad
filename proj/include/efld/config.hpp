#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efld/formats.hpp"

namespace efld {

enum class ExtraConvKind { conventional, separable };
enum class HeadKind { efld, pfld_plain };

/// One EOSA module: an extra conv branch plus an OSA chain, both stride 2.
struct EosaConfig {
  Index f_osa = 4;
  Index n_osa = 2;
  Index f_conv = 8;
  ExtraConvKind extra_conv = ExtraConvKind::conventional;

  Index out_channels() const { return f_conv + n_osa * f_osa; }
  friend bool operator==(const EosaConfig&, const EosaConfig&) = default;
};

struct HeadConfig {
  LandmarkFormat format;
  Index n_head = 3;
  Index f_head = 32;

  Index out_dim() const { return 2 * format.points; }
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct ModelConfig {
  Index input_size = 128;
  std::vector<EosaConfig> eosa;
  Index decoder_dim = 256;
  std::vector<HeadConfig> heads;
  HeadKind head_kind = HeadKind::efld;

  /// Four EOSA modules (4,2)/(8,3)/(16,3)/(16,3), F_conv 8/8/16/32, decoder 256,
  /// one 3x32 head per listed format.
  static ModelConfig default_config(const std::vector<std::string>& formats = {"p51"},
                                    const FormatRegistry& registry = FormatRegistry::builtin());

  /// Channel widths halved (decoder 128, head blocks 16) at the given input size.
  static ModelConfig reduced(Index input_size, const std::vector<std::string>& formats = {"p51"},
                             const FormatRegistry& registry = FormatRegistry::builtin());

  /// Ablation: conventional 3x3 extra conv in every module.
  ModelConfig with_conventional_backbone() const;
  /// Ablation: single linear layer from the feature vector to the landmarks.
  ModelConfig with_plain_head() const;
  /// Same architecture restricted to the named heads, in the given order.
  ModelConfig with_heads(const std::vector<std::string>& names) const;

  const HeadConfig& head(const std::string& name) const;
  bool has_head(const std::string& name) const;
  std::vector<std::string> head_names() const;

  /// Spatial size of the backbone's final feature map.
  Index feature_size() const;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  Index epochs = 1500;
  Index batch_size = 512;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// YAML text of a model config (deterministic; stored verbatim in containers).
std::string to_text(const ModelConfig& config);
std::string to_text(const TrainConfig& config);

/// Parse a config document. Model keys at top level; training keys under `train:`.
ModelConfig parse_model_config(const std::string& text);
TrainConfig parse_train_config(const std::string& text);

/// Reads a config file; the names "default" and "reduced" select built-in configs.
std::string read_config_source(const std::string& path_or_name);

}  // namespace efld
