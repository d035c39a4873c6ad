#include "efld/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace efld {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) throw CorruptionError(std::string("container truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct PendingTensor {
  TensorEntry entry;
  std::string payload;
};

template <typename Scalar>
std::string raw_bytes(const Tensor<Scalar>& t) {
  std::string out;
  out.reserve(std::size_t(t.size()) * sizeof(Scalar));
  for (Index i = 0; i < t.size(); ++i) put(out, t[i]);
  return out;
}

std::vector<std::uint32_t> dims_of(const Shape& s) {
  std::vector<std::uint32_t> d;
  for (Index v : s) d.push_back(std::uint32_t(v));
  return d;
}

bool quantized_dtype(DType d) { return d != DType::f32; }

std::string assemble(ContainerFlags flags, const ModelConfig& config, std::vector<PendingTensor> tensors) {
  const std::string text = to_text(config);
  std::string header;
  header.append("EFLD", 4);
  put(header, container_version);
  put(header, std::uint16_t(flags));
  put(header, std::uint32_t(text.size()));
  header += text;
  put(header, std::uint32_t(tensors.size()));
  std::size_t table_size = 0;
  for (const auto& t : tensors) {
    table_size += 2 + t.entry.name.size() + 1 + 1 + 4 * t.entry.dims.size() + 8 + 8;
    if (quantized_dtype(t.entry.dtype)) table_size += 8 + 4;
  }
  std::uint64_t offset = header.size() + table_size;
  std::string table, payload;
  for (auto& t : tensors) {
    t.entry.offset = offset;
    t.entry.length = t.payload.size();
    offset += t.payload.size();
    put(table, std::uint16_t(t.entry.name.size()));
    table += t.entry.name;
    put(table, std::uint8_t(t.entry.dtype));
    put(table, std::uint8_t(t.entry.dims.size()));
    for (std::uint32_t d : t.entry.dims) put(table, d);
    if (quantized_dtype(t.entry.dtype)) {
      put(table, t.entry.scale);
      put(table, t.entry.zero_point);
    }
    put(table, t.entry.offset);
    put(table, t.entry.length);
    payload += t.payload;
  }
  return header + table + payload;
}

std::vector<std::string> resolve_heads(const ModelConfig& config, const std::vector<std::string>& keep_heads) {
  if (keep_heads.empty()) return config.head_names();
  for (const auto& h : keep_heads) config.head(h);  // usage error listing available heads
  return keep_heads;
}

Shape shape_of(const TensorEntry& e) {
  Shape s;
  for (std::uint32_t d : e.dims) s.push_back(Index(d));
  return s;
}

template <typename Scalar>
Tensor<Scalar> read_tensor(const std::string& bytes, const TensorEntry& e, const Shape& expected) {
  const Shape shape = shape_of(e);
  if (shape != expected) {
    throw FormatError("container tensor '" + e.name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(expected));
  }
  if (e.length != std::uint64_t(shape_size(shape)) * sizeof(Scalar)) {
    throw CorruptionError("container tensor '" + e.name + "' has " + std::to_string(e.length) +
                          " payload bytes, expected " + std::to_string(shape_size(shape) * Index(sizeof(Scalar))));
  }
  Tensor<Scalar> t(shape);
  Reader r(bytes);
  r.text(e.offset, "payload offset");
  for (Index i = 0; i < t.size(); ++i) t[i] = r.get<Scalar>("tensor payload");
  return t;
}

}  // namespace

std::string encode(const Model<float>& model, const std::vector<std::string>& keep_heads) {
  const Model<float> kept = model.pruned(resolve_heads(model.config(), keep_heads));
  std::vector<PendingTensor> tensors;
  for (const auto& l : kept.layers()) {
    tensors.push_back({{l.name + ".w", DType::f32, dims_of(l.params.weights.shape())}, raw_bytes(l.params.weights)});
    tensors.push_back({{l.name + ".b", DType::f32, dims_of(l.params.bias.shape())}, raw_bytes(l.params.bias)});
  }
  return assemble(ContainerFlags::float32, kept.config(), std::move(tensors));
}

std::string encode(const QuantizedModel& model, const std::vector<std::string>& keep_heads) {
  const QuantizedModel kept = model.pruned(resolve_heads(model.config(), keep_heads));
  std::vector<PendingTensor> tensors;
  for (const auto& l : kept.layers()) {
    const double bias_scale = kept.site(l.input_site).scale * l.weight_scale;
    tensors.push_back({{l.name + ".w", DType::int8, dims_of(l.weights.shape()), l.weight_scale, 0},
                       raw_bytes(l.weights)});
    tensors.push_back({{l.name + ".b", DType::int32, dims_of(l.bias.shape()), bias_scale, 0}, raw_bytes(l.bias)});
  }
  std::vector<std::string> sites{"input"};
  const ShapeExecutor trace = trace_architecture(kept.config());
  sites.insert(sites.end(), trace.sites().begin(), trace.sites().end());
  for (const auto& s : sites) {
    const QuantParams& qp = kept.site(s);
    tensors.push_back({{s, DType::site, {}, qp.scale, qp.zero_point}, {}});
  }
  return assemble(ContainerFlags::int8, kept.config(), std::move(tensors));
}

ContainerInfo inspect(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "EFLD") != 0) throw FormatError("not an EFLD container (bad magic)");
  Reader r(bytes);
  r.text(4, "magic");
  ContainerInfo info;
  info.file_size = bytes.size();
  info.version = r.get<std::uint16_t>("version");
  if (info.version != container_version) {
    throw FormatError("unsupported container version " + std::to_string(info.version) + " (expected " +
                      std::to_string(container_version) + ")");
  }
  const auto flags = r.get<std::uint16_t>("flags");
  if (flags > 1) throw FormatError("unknown container flags " + std::to_string(flags));
  info.flags = ContainerFlags(flags);
  info.config_text = r.text(r.get<std::uint32_t>("config length"), "config");
  const auto count = r.get<std::uint32_t>("tensor count");
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    e.name = r.text(r.get<std::uint16_t>("tensor name length"), "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 3) throw FormatError("tensor '" + e.name + "' has unknown dtype " + std::to_string(dtype));
    e.dtype = DType(dtype);
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t k = 0; k < rank; ++k) e.dims.push_back(r.get<std::uint32_t>("dims"));
    if (quantized_dtype(e.dtype)) {
      e.scale = r.get<double>("scale");
      e.zero_point = r.get<std::int32_t>("zero point");
    }
    e.offset = r.get<std::uint64_t>("offset");
    e.length = r.get<std::uint64_t>("length");
    if (i > 0 && e.offset != expected_offset) {
      throw CorruptionError("tensor '" + e.name + "' payload offset " + std::to_string(e.offset) +
                            " overlaps or leaves a gap (expected " + std::to_string(expected_offset) + ")");
    }
    if (e.offset > bytes.size() || e.length > bytes.size() - e.offset) {
      throw CorruptionError("tensor '" + e.name + "' payload is truncated (needs bytes up to " +
                            std::to_string(e.offset + e.length) + ", file has " + std::to_string(bytes.size()) + ")");
    }
    expected_offset = e.offset + e.length;
    info.tensors.push_back(std::move(e));
  }
  if (!info.tensors.empty() && expected_offset != bytes.size()) {
    throw CorruptionError("container has " + std::to_string(bytes.size() - expected_offset) +
                          " trailing bytes after the last tensor");
  }
  return info;
}

AnyModel decode(const std::string& bytes) {
  const ContainerInfo info = inspect(bytes);
  ModelConfig config;
  try {
    config = parse_model_config(info.config_text);
  } catch (const Error& e) {
    throw FormatError(std::string("container config is invalid: ") + e.what());
  }
  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& e : info.tensors) {
    if (!by_name.emplace(e.name, &e).second) throw FormatError("container repeats tensor '" + e.name + "'");
  }
  auto entry = [&](const std::string& name, DType dtype) -> const TensorEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("container is missing tensor '" + name + "'");
    if (it->second->dtype != dtype) throw FormatError("container tensor '" + name + "' has the wrong dtype");
    return *it->second;
  };
  const ShapeExecutor trace = trace_architecture(config);
  std::size_t expected_tensors = 2 * trace.layers().size();
  if (info.flags == ContainerFlags::float32) {
    std::vector<NamedLayer<float>> layers;
    for (const LayerInfo& l : trace.layers()) {
      LayerParams<float> p;
      p.kind = l.spec.kind;
      p.weights = read_tensor<float>(bytes, entry(l.spec.name + ".w", DType::f32), l.weight_shape);
      p.bias = read_tensor<float>(bytes, entry(l.spec.name + ".b", DType::f32), {l.weight_shape.back()});
      layers.push_back({l.spec.name, std::move(p)});
    }
    if (info.tensors.size() != expected_tensors) throw FormatError("container has unexpected extra tensors");
    return Model<float>(config, std::move(layers));
  }
  std::map<std::string, QuantParams> sites;
  std::vector<std::string> site_names{"input"};
  for (const auto& s : trace.sites()) site_names.push_back(s);
  for (const auto& s : site_names) {
    const TensorEntry& e = entry(s, DType::site);
    if (!(e.scale > 0.0) || e.zero_point < -128 || e.zero_point > 127) {
      throw CorruptionError("site '" + s + "' has invalid quantization parameters");
    }
    sites.emplace(s, QuantParams{e.scale, e.zero_point});
  }
  expected_tensors += site_names.size();
  const auto inputs = layer_input_sites(config);
  std::vector<QuantLayer> layers;
  for (const LayerInfo& l : trace.layers()) {
    QuantLayer q;
    q.name = l.spec.name;
    q.kind = l.spec.kind;
    q.input_site = inputs.at(q.name);
    const TensorEntry& w = entry(q.name + ".w", DType::int8);
    q.weights = read_tensor<std::int8_t>(bytes, w, l.weight_shape);
    q.weight_scale = w.scale;
    if (!(w.scale > 0.0)) throw CorruptionError("tensor '" + w.name + "' has a nonpositive scale");
    q.bias = read_tensor<std::int32_t>(bytes, entry(q.name + ".b", DType::int32), {l.weight_shape.back()});
    layers.push_back(std::move(q));
  }
  if (info.tensors.size() != expected_tensors) throw FormatError("container has unexpected extra tensors");
  return QuantizedModel(config, std::move(layers), std::move(sites));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void save_model(const Model<float>& model, const std::filesystem::path& path,
                const std::vector<std::string>& keep_heads) {
  write_file_atomic(path, encode(model, keep_heads));
}

void save_model(const QuantizedModel& model, const std::filesystem::path& path,
                const std::vector<std::string>& keep_heads) {
  write_file_atomic(path, encode(model, keep_heads));
}

void save_model(const AnyModel& model, const std::filesystem::path& path, const std::vector<std::string>& keep_heads) {
  std::visit([&](const auto& m) { save_model(m, path, keep_heads); }, model);
}

AnyModel load_model(const std::filesystem::path& path) {
  try {
    return decode(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
}

}  // namespace efld
