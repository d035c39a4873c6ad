#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "efld/quant.hpp"

namespace efld {

inline constexpr std::uint16_t container_version = 1;

enum class ContainerFlags : std::uint16_t { float32 = 0, int8 = 1 };
enum class DType : std::uint8_t { f32 = 0, int8 = 1, int32 = 2, site = 3 };

/// One row of the tensor table as stored.
struct TensorEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  double scale = 0.0;           // int8 / int32 / site only
  std::int32_t zero_point = 0;  // int8 / int32 / site only
  std::uint64_t offset = 0;     // absolute, from the start of the file
  std::uint64_t length = 0;     // bytes
};

struct ContainerInfo {
  std::uint16_t version = 0;
  ContainerFlags flags = ContainerFlags::float32;
  std::string config_text;
  std::vector<TensorEntry> tensors;
  std::uint64_t file_size = 0;
};

using AnyModel = std::variant<Model<float>, QuantizedModel>;

/// Serializes with only the listed heads (all heads when empty).
std::string encode(const Model<float>& model, const std::vector<std::string>& keep_heads = {});
std::string encode(const QuantizedModel& model, const std::vector<std::string>& keep_heads = {});

AnyModel decode(const std::string& bytes);
/// Parses header and tensor table without materializing a model.
ContainerInfo inspect(const std::string& bytes);

/// Atomic write (temporary file, then rename).
void save_model(const Model<float>& model, const std::filesystem::path& path,
                const std::vector<std::string>& keep_heads = {});
void save_model(const QuantizedModel& model, const std::filesystem::path& path,
                const std::vector<std::string>& keep_heads = {});
void save_model(const AnyModel& model, const std::filesystem::path& path,
                const std::vector<std::string>& keep_heads = {});

AnyModel load_model(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace efld
