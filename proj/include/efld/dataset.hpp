#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "efld/formats.hpp"

namespace efld {

/// One face crop with whichever landmark annotations it carries. Missing
/// formats are absent from the map; coordinates are interleaved (x, y) in [0, 1].
struct Sample {
  std::string image_path;  // relative to the dataset directory
  Tensorf image;           // (S, S, 3), values in [0, 1]
  std::map<std::string, std::vector<double>> annotations;

  bool has(const std::string& format) const { return annotations.count(format) != 0; }
};

struct Dataset {
  std::vector<Sample> samples;
  FormatRegistry formats = FormatRegistry::builtin();

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Side length shared by all images (0 when empty).
  Index image_size() const;
  /// Format names that annotate at least one sample, sorted.
  std::vector<std::string> annotated_formats() const;
  /// Checks shape agreement, annotation lengths and coordinate ranges.
  void validate() const;
};

/// Reads DIR/annotations.jsonl and the images it references.
Dataset load_dataset(const std::filesystem::path& dir, const FormatRegistry& formats = FormatRegistry::builtin());

/// Writes DIR/images/NNNNNN.ppm and DIR/annotations.jsonl. Coordinates are
/// written in shortest round-trip decimal form.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Seeded shuffle of several datasets merged into one index space.
class BatchStream {
 public:
  BatchStream(std::vector<const Dataset*> datasets, Index batch_size, std::uint64_t seed);

  Index size() const { return Index(samples_.size()); }
  Index batch_size() const { return batch_size_; }
  Index batches_per_epoch() const { return (size() + batch_size_ - 1) / batch_size_; }

  /// Fisher-Yates permutation of the merged samples under seed mixed with
  /// epoch, cut into consecutive batches (the last one may be short).
  std::vector<std::vector<const Sample*>> batches(Index epoch) const;

 private:
  std::vector<const Sample*> samples_;
  Index batch_size_;
  std::uint64_t seed_;
};

/// Stacks sample images into a (B, S, S, 3) batch, resizing to `size` when needed.
Tensorf stack_images(const std::vector<const Sample*>& batch, Index size);

}  // namespace efld
