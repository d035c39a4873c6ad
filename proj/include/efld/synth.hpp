#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efld/dataset.hpp"

namespace efld {

struct SynthSpec {
  Index count = 0;
  Index image_size = 128;
  std::uint64_t seed = 0;
  std::vector<std::string> formats{"p51"};
  /// Sample i carries only formats[i % n]; otherwise every sample carries all formats.
  bool round_robin = false;
  /// Standard deviation of additive Gaussian pixel noise, before 8-bit quantization.
  double noise = 0.02;
};

/// Renders parametric faces under random similarity transforms. Landmarks of
/// every format come from one dense template, so shared keypoints agree exactly.
Dataset generate_synthetic(const SynthSpec& spec);

namespace synth {

enum class Curve {
  jaw,
  brow_left_upper, brow_left_lower, brow_right_upper, brow_right_lower,
  nose_bridge, nose_base,
  eye_left, eye_right,    // image-left and image-right eyes
  pupil_left, pupil_right,
  mouth_outer, mouth_inner, mouth_center,
};

/// A template keypoint: position t in [0, 1] along a curve.
struct Keypoint {
  Curve curve;
  double t = 0.0;
};

/// Template keypoints of a built-in layout (p51, p68, p98), in index order.
std::vector<Keypoint> layout(const std::string& format);

/// Position in the face frame (origin at the face centre, y down, head radii 0.30 x 0.36).
std::pair<double, double> face_point(const Keypoint& k);

/// Face-frame geometry the renderer uses.
inline constexpr double eye_x = 0.11, eye_y = -0.06, eye_radius = 0.035;
inline constexpr double skin_red = 0.85, eye_red = 0.10;

}  // namespace synth
}  // namespace efld
