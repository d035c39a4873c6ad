#pragma once

#include <string>
#include <utility>
#include <vector>

#include "efld/formats.hpp"

namespace efld {

struct EvalReport {
  std::string format;
  std::vector<double> nme;  // per sample, fractions (not x100)
  double nme_mean = 0.0;
  double threshold = 0.1;
  double failure_rate = 0.0;
  double auc = 0.0;
  double pixel_accuracy = 0.0;  // NaN when no image size was given
  Index count = 0;
  Index skipped = 0;  // degenerate ground truth

  /// JSON object; NME and AUC are reported x100.
  std::string json() const;
};

/// Fraction of samples with NME > threshold (NME == threshold counts as success).
double failure_rate(const std::vector<double>& nme, double threshold);

/// Empirical CED(e) = fraction of samples with NME <= e.
double ced(const std::vector<double>& nme, double e);

/// (1/threshold) * integral over [0, threshold] of CED, integrated exactly as a step function.
double ced_auc(const std::vector<double>& nme, double threshold);

/// Corner points of the CED step function on [0, threshold], for plotting.
std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& nme, double threshold);
std::string ced_csv(const std::vector<double>& nme, double threshold);

/// Fraction of points within `radius` pixels (Euclidean, inclusive) after
/// scaling normalized coordinates by image_size.
double pixel_accuracy(const Tensord& pred, const Tensord& gt, double image_size, double radius = 5.0);

/// Per-sample inter-ocular NME for [N, 2K] predictions and ground truth.
/// Samples with degenerate ground truth yield NaN.
std::vector<double> per_sample_nme(const Tensord& pred, const Tensord& gt, const LandmarkFormat& format);

/// Pass image_size <= 0 to skip the pixel accuracy.
EvalReport evaluate(const Tensord& pred, const Tensord& gt, const LandmarkFormat& format, double threshold = 0.1,
                    double image_size = 0.0, double radius = 5.0);

/// accuracy / (time * complexity * power * size).
double competition_score(double accuracy, double time_ms, double gflops, double power, double size_mb);

}  // namespace efld
