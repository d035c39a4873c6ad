#include "efld/dataset.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "efld/image.hpp"
#include "efld/rng.hpp"

namespace efld {

using nlohmann::json;

Index Dataset::image_size() const { return samples.empty() ? 0 : samples.front().image.dim(0); }

std::vector<std::string> Dataset::annotated_formats() const {
  std::set<std::string> names;
  for (const auto& s : samples) {
    for (const auto& [name, coords] : s.annotations) names.insert(name);
  }
  return {names.begin(), names.end()};
}

void Dataset::validate() const {
  const Index size = image_size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.image.rank() != 3 || s.image.dim(0) != size || s.image.dim(1) != size || s.image.dim(2) != 3) {
      throw ValidationError("sample " + std::to_string(i) + " (" + s.image_path + "): image " +
                            shape_string(s.image.shape()) + " differs from dataset size " + std::to_string(size));
    }
    for (const auto& [name, coords] : s.annotations) {
      const LandmarkFormat& f = formats.at(name);
      if (Index(coords.size()) != 2 * f.points) {
        throw ValidationError("sample " + std::to_string(i) + ": " + name + " annotation has " +
                              std::to_string(coords.size()) + " coordinates, expected " + std::to_string(2 * f.points));
      }
      for (double v : coords) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
          throw ValidationError("sample " + std::to_string(i) + ": " + name + " coordinate " + std::to_string(v) +
                                " outside [0, 1]");
        }
      }
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir, const FormatRegistry& formats) {
  const auto index = dir / "annotations.jsonl";
  std::ifstream in(index);
  if (!in) throw IoError("cannot open " + index.string());
  Dataset ds;
  ds.formats = formats;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!record.is_object()) throw ParseError("record is not an object", line_no);
    if (!record.contains("image") || !record["image"].is_string()) {
      throw ParseError("record lacks the \"image\" field", line_no);
    }
    if (!record.contains("annotations") || !record["annotations"].is_object()) {
      throw ParseError("record lacks the \"annotations\" field holding the points", line_no);
    }
    Sample s;
    s.image_path = record["image"].get<std::string>();
    for (const auto& [name, points] : record["annotations"].items()) {
      if (!formats.contains(name)) throw ValidationError("line " + std::to_string(line_no) + ": unregistered format '" + name + "'");
      if (!points.is_array()) throw ParseError("annotation '" + name + "' is not a list of points", line_no);
      std::vector<double> coords;
      coords.reserve(points.size() * 2);
      for (const auto& p : points) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
          throw ParseError("annotation '" + name + "' has a point that is not [x, y]", line_no);
        }
        coords.push_back(p[0].get<double>());
        coords.push_back(p[1].get<double>());
      }
      const LandmarkFormat& f = formats.at(name);
      if (Index(coords.size()) != 2 * f.points) {
        throw ParseError("annotation '" + name + "' has " + std::to_string(points.size()) + " points, expected " +
                         std::to_string(f.points), line_no);
      }
      for (double v : coords) {
        if (v < 0.0 || v > 1.0) {
          throw ValidationError("line " + std::to_string(line_no) + ": coordinate " + std::to_string(v) + " outside [0, 1]");
        }
      }
      s.annotations.emplace(name, std::move(coords));
    }
    s.image = read_image(dir / s.image_path);
    if (s.image.dim(0) != s.image.dim(1)) {
      throw ValidationError("line " + std::to_string(line_no) + ": image " + s.image_path + " is not square");
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir / "images");
  const auto index = dir / "annotations.jsonl";
  const auto tmp = dir / "annotations.jsonl.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      const Sample& s = dataset.samples[i];
      char name[32];
      std::snprintf(name, sizeof name, "images/%06zu.ppm", i);
      write_image(s.image, dir / name);
      json annotations = json::object();
      for (const auto& [format, coords] : s.annotations) {
        json points = json::array();
        for (std::size_t k = 0; k + 1 < coords.size(); k += 2) points.push_back({coords[k], coords[k + 1]});
        annotations[format] = std::move(points);
      }
      out << json{{"image", name}, {"annotations", std::move(annotations)}}.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, index);
}

BatchStream::BatchStream(std::vector<const Dataset*> datasets, Index batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw UsageError("batch stream: batch size must be >= 1");
  for (const Dataset* d : datasets) {
    for (const Sample& s : d->samples) samples_.push_back(&s);
  }
  if (samples_.empty()) throw UsageError("batch stream: merged dataset is empty");
}

std::vector<std::vector<const Sample*>> BatchStream::batches(Index epoch) const {
  std::vector<const Sample*> order = samples_;
  Rng rng(mix_seed(seed_, std::uint64_t(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[below(rng, i)]);
  std::vector<std::vector<const Sample*>> out;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size_)) {
    const std::size_t end = std::min(order.size(), start + std::size_t(batch_size_));
    out.emplace_back(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
  }
  return out;
}

Tensorf stack_images(const std::vector<const Sample*>& batch, Index size) {
  Tensorf out({Index(batch.size()), size, size, 3});
  const Index stride = size * size * 3;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensorf& img = batch[b]->image;
    const Tensorf resized = (img.dim(0) == size && img.dim(1) == size) ? img : resize_bilinear(img, size, size);
    out.data().segment(Index(b) * stride, stride) = resized.data();
  }
  return out;
}

}  // namespace efld
