#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "efld/tensor.hpp"

namespace efld {

/// A named landmark layout: point count and the two points whose distance
/// normalizes errors (inter-ocular distance).
struct LandmarkFormat {
  std::string name;
  Index points = 0;
  std::pair<Index, Index> interocular{0, 1};

  void validate() const;
  friend bool operator==(const LandmarkFormat&, const LandmarkFormat&) = default;
};

class FormatRegistry {
 public:
  /// p51 (eye centres 34/35), p68 (outer eye corners 36/45), p98 (outer eye corners 60/72).
  static FormatRegistry builtin();

  /// Adds a format, replacing any existing format of the same name.
  void add(LandmarkFormat format);

  bool contains(const std::string& name) const { return formats_.count(name) != 0; }
  const LandmarkFormat& at(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, LandmarkFormat> formats_;
};

/// Euclidean distance between a format's two inter-ocular points of an
/// interleaved (x0, y0, x1, y1, ...) coordinate list. Throws
/// DegenerateAnnotation below 1e-6.
template <typename Vec>
double interocular_distance(const Vec& coords, const LandmarkFormat& format) {
  if (Index(coords.size()) != 2 * format.points) {
    throw ShapeError("interocular_distance: expected " + std::to_string(2 * format.points) +
                     " coordinates for " + format.name + ", got " + std::to_string(coords.size()));
  }
  const auto [l, r] = format.interocular;
  const double dx = double(coords[2 * l]) - double(coords[2 * r]);
  const double dy = double(coords[2 * l + 1]) - double(coords[2 * r + 1]);
  const double d = std::sqrt(dx * dx + dy * dy);
  if (!(d >= 1e-6)) {
    throw DegenerateAnnotation("interocular distance " + std::to_string(d) + " below 1e-6 for format " +
                               format.name);
  }
  return d;
}

}  // namespace efld
