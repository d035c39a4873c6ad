#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "efld/dataset.hpp"
#include "efld/log.hpp"
#include "efld/model.hpp"

namespace efld {

/// Batch-mean NME: per sample (1/K) sum_k |p_k - g_k| / interocular(g).
/// Samples with a degenerate inter-ocular distance get weight 0 and a warning.
/// When `grad` is given it receives dLoss/dpred (subgradient 0 where p_k == g_k).
template <typename Scalar>
double nme_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt, const LandmarkFormat& format,
                Tensor<Scalar>* grad = nullptr, std::vector<double>* per_sample = nullptr) {
  const Index k = format.points;
  if (pred.shape() != gt.shape() || pred.rank() != 2 || pred.dim(1) != 2 * k) {
    throw ShapeError("nme_loss: prediction " + shape_string(pred.shape()) + " and target " +
                     shape_string(gt.shape()) + " must both be [B," + std::to_string(2 * k) + "] for " + format.name);
  }
  const Index batch = pred.dim(0);
  std::vector<double> nme(std::size_t(batch), 0.0), inv_d(std::size_t(batch), 0.0);
  Index used = 0;
  for (Index b = 0; b < batch; ++b) {
    const auto row = gt.matrix().row(b);
    try {
      inv_d[std::size_t(b)] = 1.0 / interocular_distance(row, format);
    } catch (const DegenerateAnnotation& e) {
      warn(std::string("nme_loss: skipping sample ") + std::to_string(b) + ": " + e.what());
      nme[std::size_t(b)] = std::nan("");
      continue;
    }
    double sum = 0.0;
    for (Index p = 0; p < k; ++p) {
      const double dx = double(pred.matrix()(b, 2 * p)) - double(gt.matrix()(b, 2 * p));
      const double dy = double(pred.matrix()(b, 2 * p + 1)) - double(gt.matrix()(b, 2 * p + 1));
      sum += std::sqrt(dx * dx + dy * dy);
    }
    nme[std::size_t(b)] = sum * inv_d[std::size_t(b)] / double(k);
    ++used;
  }
  double total = 0.0;
  for (Index b = 0; b < batch; ++b) {
    if (inv_d[std::size_t(b)] > 0.0) total += nme[std::size_t(b)];
  }
  const double loss = used ? total / double(used) : 0.0;
  if (grad) {
    *grad = Tensor<Scalar>(pred.shape());
    for (Index b = 0; b < batch && used; ++b) {
      if (inv_d[std::size_t(b)] == 0.0) continue;
      const double w = inv_d[std::size_t(b)] / (double(k) * double(used));
      for (Index p = 0; p < k; ++p) {
        const double dx = double(pred.matrix()(b, 2 * p)) - double(gt.matrix()(b, 2 * p));
        const double dy = double(pred.matrix()(b, 2 * p + 1)) - double(gt.matrix()(b, 2 * p + 1));
        const double n = std::sqrt(dx * dx + dy * dy);
        if (n == 0.0) continue;
        grad->matrix()(b, 2 * p) = Scalar(w * dx / n);
        grad->matrix()(b, 2 * p + 1) = Scalar(w * dy / n);
      }
    }
  }
  if (per_sample) *per_sample = std::move(nme);
  return loss;
}

struct HeadLoss {
  double loss = 0.0;  // mean NME over the annotated samples, 0 when none
  Index count = 0;    // annotated, non-degenerate samples
};

struct MultiHeadLoss {
  double total = 0.0;
  std::map<std::string, HeadLoss> heads;
};

/// Sum over heads of each head's mean NME over the samples annotated in its
/// format. Rows of samples lacking a format get exactly zero gradient.
template <typename Scalar>
MultiHeadLoss masked_multihead_loss(const std::map<std::string, Tensor<Scalar>>& predictions,
                                    const std::vector<const Sample*>& batch, const FormatRegistry& formats,
                                    std::map<std::string, Tensor<Scalar>>* grads = nullptr) {
  MultiHeadLoss out;
  for (const auto& [name, pred] : predictions) {
    const LandmarkFormat& f = formats.at(name);
    if (pred.rank() != 2 || pred.dim(0) != Index(batch.size())) {
      throw ShapeError("masked_multihead_loss: head " + name + " output " + shape_string(pred.shape()) +
                       " does not match batch of " + std::to_string(batch.size()));
    }
    std::vector<Index> rows;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b]->has(name)) rows.push_back(Index(b));
    }
    HeadLoss& h = out.heads[name];
    if (grads) (*grads)[name] = Tensor<Scalar>(pred.shape());
    if (rows.empty()) continue;
    Tensor<Scalar> p({Index(rows.size()), 2 * f.points}), g({Index(rows.size()), 2 * f.points});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      p.matrix().row(Index(r)) = pred.matrix().row(rows[r]);
      const auto& coords = batch[std::size_t(rows[r])]->annotations.at(name);
      for (Index c = 0; c < 2 * f.points; ++c) g.matrix()(Index(r), c) = Scalar(coords[std::size_t(c)]);
    }
    Tensor<Scalar> dp;
    std::vector<double> per_sample;
    h.loss = nme_loss(p, g, f, grads ? &dp : nullptr, &per_sample);
    for (double v : per_sample) h.count += std::isnan(v) ? 0 : 1;
    out.total += h.loss;
    if (grads) {
      for (std::size_t r = 0; r < rows.size(); ++r) (*grads)[name].matrix().row(rows[r]) = dp.matrix().row(Index(r));
    }
  }
  return out;
}

/// lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2.
inline double cosine_lr(Index t, Index total, double lr_max, double lr_min) {
  if (total <= 0) throw UsageError("cosine_lr: total steps must be positive");
  if (t < 0 || t > total) throw UsageError("cosine_lr: step " + std::to_string(t) + " outside [0, " +
                                           std::to_string(total) + "]");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * double(t) / double(total)));
}

template <typename Scalar>
struct AdamState {
  LayerParams<Scalar> m, v;
};

/// Per-parameter AdamW moments and the shared step counter.
template <typename Scalar>
struct OptimizerState {
  std::map<std::string, AdamState<Scalar>> moments;
  Index step = 0;
};

namespace detail {
template <typename Scalar>
void adamw_update(Tensor<Scalar>& theta, const Tensor<Scalar>& g, Tensor<Scalar>& m, Tensor<Scalar>& v, double lr,
                  double c1, double c2, const TrainConfig& cfg) {
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  m.data() = b1 * m.data() + (Scalar(1) - b1) * g.data();
  v.data() = b2 * v.data() + (Scalar(1) - b2) * g.data().cwiseProduct(g.data());
  const auto mhat = m.data().array() / Scalar(c1);
  const auto vhat = v.data().array() / Scalar(c2);
  theta.data().array() -= Scalar(lr) * (mhat / (vhat.sqrt() + Scalar(cfg.eps)) + Scalar(cfg.weight_decay) * theta.data().array());
}
}  // namespace detail

/// One AdamW step over every layer of the model. Layers missing from `grads`
/// are treated as having zero gradient. Non-finite gradients abort naming the layer.
template <typename Scalar>
void adamw_step(Model<Scalar>& model, const std::map<std::string, const LayerParams<Scalar>*>& grads,
                OptimizerState<Scalar>& state, double lr, const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (g && !(g->weights.all_finite() && g->bias.all_finite())) {
      throw TrainingError("adamw_step: non-finite gradient for parameter '" + name + "'");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (auto& layer : model.layers()) {
    auto it = state.moments.find(layer.name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(layer.name, AdamState<Scalar>{LayerParams<Scalar>::zeros_like(layer.params),
                                                               LayerParams<Scalar>::zeros_like(layer.params)}).first;
    }
    auto git = grads.find(layer.name);
    const LayerParams<Scalar>* g = git == grads.end() ? nullptr : git->second;
    const LayerParams<Scalar> zeros = g ? LayerParams<Scalar>{} : LayerParams<Scalar>::zeros_like(layer.params);
    if (!g) g = &zeros;
    detail::adamw_update(layer.params.weights, g->weights, it->second.m.weights, it->second.v.weights, lr, c1, c2, cfg);
    detail::adamw_update(layer.params.bias, g->bias, it->second.m.bias, it->second.v.bias, lr, c1, c2, cfg);
  }
}

struct EpochLog {
  Index epoch = 0;
  double lr = 0.0;          // learning rate of the epoch's first step
  double loss_total = 0.0;  // mean over steps of the masked multi-head loss
  std::map<std::string, double> loss;  // sample-weighted mean NME per head
  std::map<std::string, Index> count;  // contributing samples per head
};

struct TrainLog {
  std::vector<std::string> formats;
  std::vector<EpochLog> epochs;

  /// CSV with header epoch,lr,loss_total,loss_<f>...,n_<f>...
  std::string csv() const;
};

struct TrainOptions {
  /// Called after every epoch; returning false stops training early.
  std::function<bool(const EpochLog&)> on_epoch;
};

/// Cross-format training over the merged datasets. Images are resized to the
/// model input once up front. Deterministic for a fixed seed.
TrainLog train(Model<float>& model, const std::vector<const Dataset*>& datasets, const TrainConfig& config,
               const TrainOptions& options = {});

/// Float predictions for every sample, [N, 2K], in normalized coordinates.
Tensorf predict(const Model<float>& model, const std::vector<const Sample*>& samples, const std::string& format,
                Index batch_size = 64);

/// Ground-truth matrix [N, 2K] for samples annotated in `format` (others skipped).
std::vector<const Sample*> annotated(const Dataset& dataset, const std::string& format);
Tensorf ground_truth(const std::vector<const Sample*>& samples, const std::string& format);

}  // namespace efld
