#include "efld/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "efld/log.hpp"

namespace efld {

double failure_rate(const std::vector<double>& nme, double threshold) {
  if (nme.empty()) throw UsageError("failure_rate: empty NME list");
  const auto fails = std::count_if(nme.begin(), nme.end(), [&](double v) { return v > threshold; });
  return double(fails) / double(nme.size());
}

double ced(const std::vector<double>& nme, double e) {
  if (nme.empty()) throw UsageError("ced: empty NME list");
  const auto ok = std::count_if(nme.begin(), nme.end(), [&](double v) { return v <= e; });
  return double(ok) / double(nme.size());
}

double ced_auc(const std::vector<double>& nme, double threshold) {
  if (nme.empty()) throw UsageError("ced_auc: empty NME list");
  if (!(threshold > 0.0)) throw UsageError("ced_auc: threshold must be positive");
  // Each sample with NME v <= threshold contributes 1/N over [v, threshold].
  double area = 0.0;
  for (double v : nme) {
    if (v <= threshold) area += threshold - std::max(v, 0.0);
  }
  return area / (threshold * double(nme.size()));
}

std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& nme, double threshold) {
  std::vector<double> sorted = nme;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> pts{{0.0, ced(nme, 0.0)}};
  for (double v : sorted) {
    if (v <= 0.0 || v > threshold) continue;
    if (pts.back().first != v) pts.emplace_back(v, ced(nme, v));
    else pts.back().second = ced(nme, v);
  }
  if (pts.back().first != threshold) pts.emplace_back(threshold, ced(nme, threshold));
  return pts;
}

std::string ced_csv(const std::vector<double>& nme, double threshold) {
  std::string out = "error,fraction\n";
  char buf[64];
  for (const auto& [e, f] : ced_curve(nme, threshold)) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", e, f);
    out += buf;
  }
  return out;
}

double pixel_accuracy(const Tensord& pred, const Tensord& gt, double image_size, double radius) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("pixel_accuracy: prediction " + shape_string(pred.shape()) + " vs ground truth " +
                     shape_string(gt.shape()));
  }
  const Index points = pred.size() / 2;
  if (points == 0) return 1.0;
  Index correct = 0;
  for (Index p = 0; p < points; ++p) {
    const double dx = (pred[2 * p] - gt[2 * p]) * image_size;
    const double dy = (pred[2 * p + 1] - gt[2 * p + 1]) * image_size;
    if (std::sqrt(dx * dx + dy * dy) <= radius) ++correct;
  }
  return double(correct) / double(points);
}

std::vector<double> per_sample_nme(const Tensord& pred, const Tensord& gt, const LandmarkFormat& format) {
  if (pred.shape() != gt.shape() || pred.rank() != 2 || pred.dim(1) != 2 * format.points) {
    throw ShapeError("evaluate: predictions " + shape_string(pred.shape()) + " and ground truth " +
                     shape_string(gt.shape()) + " must be [N," + std::to_string(2 * format.points) + "]");
  }
  std::vector<double> out;
  for (Index b = 0; b < pred.dim(0); ++b) {
    double d;
    try {
      d = interocular_distance(gt.matrix().row(b), format);
    } catch (const DegenerateAnnotation&) {
      out.push_back(std::nan(""));
      continue;
    }
    double sum = 0.0;
    for (Index k = 0; k < format.points; ++k) {
      sum += std::hypot(pred.matrix()(b, 2 * k) - gt.matrix()(b, 2 * k),
                        pred.matrix()(b, 2 * k + 1) - gt.matrix()(b, 2 * k + 1));
    }
    out.push_back(sum / (double(format.points) * d));
  }
  return out;
}

EvalReport evaluate(const Tensord& pred, const Tensord& gt, const LandmarkFormat& format, double threshold,
                    double image_size, double radius) {
  if (pred.size() == 0 || (pred.rank() == 2 && pred.dim(0) == 0)) throw UsageError("evaluate: no samples");
  EvalReport r;
  r.format = format.name;
  r.threshold = threshold;
  for (double v : per_sample_nme(pred, gt, format)) {
    if (std::isnan(v)) {
      ++r.skipped;
    } else {
      r.nme.push_back(v);
    }
  }
  if (r.skipped) warn("evaluate: skipped " + std::to_string(r.skipped) + " samples with degenerate ground truth");
  if (r.nme.empty()) throw UsageError("evaluate: no samples with valid ground truth");
  r.count = Index(r.nme.size());
  double sum = 0.0;
  for (double v : r.nme) sum += v;
  r.nme_mean = sum / double(r.count);
  r.failure_rate = failure_rate(r.nme, threshold);
  r.auc = ced_auc(r.nme, threshold);
  r.pixel_accuracy = image_size > 0.0 ? pixel_accuracy(pred, gt, image_size, radius) : std::nan("");
  return r;
}

std::string EvalReport::json() const {
  nlohmann::ordered_json j;
  j["format"] = format;
  j["count"] = count;
  j["skipped"] = skipped;
  j["nme"] = nme_mean * 100.0;
  j["threshold"] = threshold;
  j["failure_rate"] = failure_rate;
  j["ced_auc"] = auc * 100.0;
  if (std::isnan(pixel_accuracy)) {
    j["pixel_accuracy"] = nullptr;
  } else {
    j["pixel_accuracy"] = pixel_accuracy;
  }
  j["per_sample_nme"] = nme;
  return j.dump(2);
}

double competition_score(double accuracy, double time_ms, double gflops, double power, double size_mb) {
  for (double v : {time_ms, gflops, power, size_mb}) {
    if (!(v > 0.0)) throw UsageError("competition_score: time, complexity, power and size must be positive");
  }
  return accuracy / (time_ms * gflops * power * size_mb);
}

}  // namespace efld
