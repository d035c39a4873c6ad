#include "efld/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace efld {

namespace {

const char* to_string(ExtraConvKind kind) {
  return kind == ExtraConvKind::conventional ? "conventional" : "separable";
}

const char* to_string(HeadKind kind) { return kind == HeadKind::efld ? "efld" : "pfld-plain"; }

HeadConfig make_head(const std::string& name, const FormatRegistry& registry, Index n_head, Index f_head) {
  return HeadConfig{registry.at(name), n_head, f_head};
}

// Strict field access: unknown keys are rejected by check_keys.
void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "' (line " + std::to_string(kv.first.Mark().line + 1) + ")");
    }
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, T fallback, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + "." + key + ": invalid value '" + YAML::Dump(v) + "' (line " +
                      std::to_string(v.Mark().line + 1) + ")");
  }
}

YAML::Node load_yaml(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
}

}  // namespace

ModelConfig ModelConfig::default_config(const std::vector<std::string>& formats, const FormatRegistry& registry) {
  ModelConfig c;
  c.input_size = 128;
  c.eosa = {{4, 2, 8, ExtraConvKind::conventional},
            {8, 3, 8, ExtraConvKind::separable},
            {16, 3, 16, ExtraConvKind::separable},
            {16, 3, 32, ExtraConvKind::separable}};
  c.decoder_dim = 256;
  for (const auto& f : formats) c.heads.push_back(make_head(f, registry, 3, 32));
  c.validate();
  return c;
}

ModelConfig ModelConfig::reduced(Index input_size, const std::vector<std::string>& formats,
                                 const FormatRegistry& registry) {
  ModelConfig c;
  c.input_size = input_size;
  c.eosa = {{2, 2, 4, ExtraConvKind::conventional},
            {4, 3, 4, ExtraConvKind::separable},
            {8, 3, 8, ExtraConvKind::separable},
            {8, 3, 16, ExtraConvKind::separable}};
  c.decoder_dim = 128;
  for (const auto& f : formats) c.heads.push_back(make_head(f, registry, 3, 16));
  c.validate();
  return c;
}

ModelConfig ModelConfig::with_conventional_backbone() const {
  ModelConfig c = *this;
  for (auto& m : c.eosa) m.extra_conv = ExtraConvKind::conventional;
  return c;
}

ModelConfig ModelConfig::with_plain_head() const {
  ModelConfig c = *this;
  c.head_kind = HeadKind::pfld_plain;
  return c;
}

ModelConfig ModelConfig::with_heads(const std::vector<std::string>& names) const {
  ModelConfig c = *this;
  c.heads.clear();
  for (const auto& n : names) {
    if (!has_head(n)) throw UsageError("unknown head '" + n + "'");
    c.heads.push_back(head(n));
  }
  c.validate();
  return c;
}

const HeadConfig& ModelConfig::head(const std::string& name) const {
  for (const auto& h : heads) {
    if (h.format.name == name) return h;
  }
  std::string known;
  for (const auto& h : heads) known += (known.empty() ? "" : ", ") + h.format.name;
  throw UsageError("model has no head '" + name + "' (available: " + known + ")");
}

bool ModelConfig::has_head(const std::string& name) const {
  for (const auto& h : heads) {
    if (h.format.name == name) return true;
  }
  return false;
}

std::vector<std::string> ModelConfig::head_names() const {
  std::vector<std::string> out;
  for (const auto& h : heads) out.push_back(h.format.name);
  return out;
}

Index ModelConfig::feature_size() const { return input_size >> eosa.size(); }

void ModelConfig::validate() const {
  if (eosa.empty()) throw ConfigError("model config: at least one EOSA module required");
  if (input_size < 1 || input_size % (Index{1} << eosa.size()) != 0) {
    throw ConfigError("model config: input_size " + std::to_string(input_size) + " not divisible by 2^" +
                      std::to_string(eosa.size()));
  }
  for (std::size_t i = 0; i < eosa.size(); ++i) {
    const auto& m = eosa[i];
    if (m.f_osa < 1 || m.n_osa < 1 || m.f_conv < 1) {
      throw ConfigError("model config: EOSA module " + std::to_string(i + 1) + " needs f_osa, n_osa, f_conv >= 1");
    }
  }
  if (decoder_dim < 1) throw ConfigError("model config: decoder_dim must be >= 1");
  if (heads.empty()) throw ConfigError("model config: at least one head required");
  std::set<std::string> seen;
  for (const auto& h : heads) {
    h.format.validate();
    if (!seen.insert(h.format.name).second) throw ConfigError("model config: duplicate head '" + h.format.name + "'");
    if (h.n_head < 0 || h.f_head < 1) throw ConfigError("model config: head " + h.format.name + " needs n_head >= 0, f_head >= 1");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw ConfigError("train config: need 0 <= lr_min <= lr_max");
  if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train config: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train config: eps must be > 0");
}

std::string to_text(const ModelConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "input_size" << YAML::Value << c.input_size;
  out << YAML::Key << "decoder_dim" << YAML::Value << c.decoder_dim;
  out << YAML::Key << "head_kind" << YAML::Value << to_string(c.head_kind);
  out << YAML::Key << "eosa" << YAML::Value << YAML::BeginSeq;
  for (const auto& m : c.eosa) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "f_osa" << YAML::Value << m.f_osa;
    out << YAML::Key << "n_osa" << YAML::Value << m.n_osa;
    out << YAML::Key << "f_conv" << YAML::Value << m.f_conv;
    out << YAML::Key << "extra_conv" << YAML::Value << to_string(m.extra_conv);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "heads" << YAML::Value << YAML::BeginSeq;
  for (const auto& h : c.heads) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "format" << YAML::Value << h.format.name;
    out << YAML::Key << "points" << YAML::Value << h.format.points;
    out << YAML::Key << "interocular" << YAML::Value << YAML::Flow << YAML::BeginSeq
        << h.format.interocular.first << h.format.interocular.second << YAML::EndSeq;
    out << YAML::Key << "n_head" << YAML::Value << h.n_head;
    out << YAML::Key << "f_head" << YAML::Value << h.f_head;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string to_text(const TrainConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << c.epochs;
  out << YAML::Key << "batch_size" << YAML::Value << c.batch_size;
  out << YAML::Key << "lr_max" << YAML::Value << c.lr_max;
  out << YAML::Key << "lr_min" << YAML::Value << c.lr_min;
  out << YAML::Key << "weight_decay" << YAML::Value << c.weight_decay;
  out << YAML::Key << "beta1" << YAML::Value << c.beta1;
  out << YAML::Key << "beta2" << YAML::Value << c.beta2;
  out << YAML::Key << "eps" << YAML::Value << c.eps;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ModelConfig parse_model_config(const std::string& text) {
  const YAML::Node root = load_yaml(text);
  check_keys(root, {"input_size", "decoder_dim", "head_kind", "eosa", "heads", "train"}, "config");
  const FormatRegistry registry = FormatRegistry::builtin();
  ModelConfig c;
  c.input_size = get<Index>(root, "input_size", 128, "config");
  c.decoder_dim = get<Index>(root, "decoder_dim", 256, "config");
  const auto head_kind = get<std::string>(root, "head_kind", "efld", "config");
  if (head_kind == "efld") {
    c.head_kind = HeadKind::efld;
  } else if (head_kind == "pfld-plain") {
    c.head_kind = HeadKind::pfld_plain;
  } else {
    throw ConfigError("config.head_kind: expected efld or pfld-plain, got '" + head_kind + "'");
  }
  const YAML::Node eosa = root["eosa"];
  if (!eosa || !eosa.IsSequence()) throw ConfigError("config.eosa: expected a list of modules");
  for (std::size_t i = 0; i < eosa.size(); ++i) {
    const std::string where = "config.eosa[" + std::to_string(i) + "]";
    check_keys(eosa[i], {"f_osa", "n_osa", "f_conv", "extra_conv"}, where);
    EosaConfig m;
    m.f_osa = get<Index>(eosa[i], "f_osa", 0, where);
    m.n_osa = get<Index>(eosa[i], "n_osa", 0, where);
    m.f_conv = get<Index>(eosa[i], "f_conv", 0, where);
    const auto kind = get<std::string>(eosa[i], "extra_conv", "separable", where);
    if (kind == "conventional") {
      m.extra_conv = ExtraConvKind::conventional;
    } else if (kind == "separable") {
      m.extra_conv = ExtraConvKind::separable;
    } else {
      throw ConfigError(where + ".extra_conv: expected conventional or separable, got '" + kind + "'");
    }
    c.eosa.push_back(m);
  }
  const YAML::Node heads = root["heads"];
  if (!heads || !heads.IsSequence()) throw ConfigError("config.heads: expected a list of heads");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::string where = "config.heads[" + std::to_string(i) + "]";
    check_keys(heads[i], {"format", "points", "interocular", "n_head", "f_head"}, where);
    HeadConfig h;
    const auto name = get<std::string>(heads[i], "format", "", where);
    if (registry.contains(name)) h.format = registry.at(name);
    h.format.name = name;
    h.format.points = get<Index>(heads[i], "points", h.format.points, where);
    if (heads[i]["interocular"]) {
      const auto pair = get<std::vector<Index>>(heads[i], "interocular", {}, where);
      if (pair.size() != 2) throw ConfigError(where + ".interocular: expected two indices");
      h.format.interocular = {pair[0], pair[1]};
    }
    h.n_head = get<Index>(heads[i], "n_head", 3, where);
    h.f_head = get<Index>(heads[i], "f_head", 32, where);
    c.heads.push_back(h);
  }
  c.validate();
  return c;
}

TrainConfig parse_train_config(const std::string& text) {
  const YAML::Node root = load_yaml(text);
  TrainConfig c;
  if (!root.IsMap() || !root["train"]) return c;
  const YAML::Node t = root["train"];
  const std::string where = "config.train";
  check_keys(t, {"epochs", "batch_size", "lr_max", "lr_min", "weight_decay", "beta1", "beta2", "eps", "seed"}, where);
  c.epochs = get<Index>(t, "epochs", c.epochs, where);
  c.batch_size = get<Index>(t, "batch_size", c.batch_size, where);
  c.lr_max = get<double>(t, "lr_max", c.lr_max, where);
  c.lr_min = get<double>(t, "lr_min", c.lr_min, where);
  c.weight_decay = get<double>(t, "weight_decay", c.weight_decay, where);
  c.beta1 = get<double>(t, "beta1", c.beta1, where);
  c.beta2 = get<double>(t, "beta2", c.beta2, where);
  c.eps = get<double>(t, "eps", c.eps, where);
  c.seed = get<std::uint64_t>(t, "seed", c.seed, where);
  c.validate();
  return c;
}

std::string read_config_source(const std::string& path_or_name) {
  if (path_or_name == "default") return to_text(ModelConfig::default_config());
  if (path_or_name == "reduced") return to_text(ModelConfig::reduced(32));
  std::ifstream in(path_or_name);
  if (!in) throw IoError("cannot read config file '" + path_or_name + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace efld
