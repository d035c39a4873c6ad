#include "efld/train.hpp"

#include <cstdio>
#include <set>
#include <unordered_map>

#include "efld/image.hpp"

namespace efld {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string TrainLog::csv() const {
  std::string out = "epoch,lr,loss_total";
  for (const auto& f : formats) out += ",loss_" + f;
  for (const auto& f : formats) out += ",n_" + f;
  out += '\n';
  for (const EpochLog& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt_double(e.lr) + "," + fmt_double(e.loss_total);
    for (const auto& f : formats) out += "," + fmt_double(e.loss.count(f) ? e.loss.at(f) : 0.0);
    for (const auto& f : formats) out += "," + std::to_string(e.count.count(f) ? e.count.at(f) : 0);
    out += '\n';
  }
  return out;
}

TrainLog train(Model<float>& model, const std::vector<const Dataset*>& datasets, const TrainConfig& config,
               const TrainOptions& options) {
  config.validate();
  const ModelConfig& mc = model.config();
  const Index size = mc.input_size;
  FormatRegistry formats;
  std::set<std::string> present;
  std::unordered_map<const Sample*, Tensorf> resized;
  for (const Dataset* d : datasets) {
    for (const auto& name : d->formats.names()) formats.add(d->formats.at(name));
    for (const Sample& s : d->samples) {
      for (const auto& [f, c] : s.annotations) present.insert(f);
      const bool fits = s.image.dim(0) == size && s.image.dim(1) == size;
      if (!fits) resized.emplace(&s, resize_bilinear(s.image, size, size));
    }
  }
  for (const auto& f : present) {
    if (!mc.has_head(f)) {
      throw UsageError("train: data carries format '" + f + "' but the model has no such head");
    }
  }
  const BatchStream stream(datasets, config.batch_size, config.seed);
  const Index steps_per_epoch = stream.batches_per_epoch();
  const Index total_steps = config.epochs * steps_per_epoch;

  TrainLog log;
  log.formats = mc.head_names();
  OptimizerState<float> state;
  const Index pixels = size * size * 3;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog e;
    e.epoch = epoch;
    std::map<std::string, double> nme_sum;
    Index step_in_epoch = 0;
    for (const auto& batch : stream.batches(epoch)) {
      const Index step = epoch * steps_per_epoch + step_in_epoch;
      const double lr = cosine_lr(step, total_steps, config.lr_max, config.lr_min);
      if (step_in_epoch == 0) e.lr = lr;

      Tensorf images({Index(batch.size()), size, size, 3});
      std::vector<std::string> active;
      std::set<std::string> active_set;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        auto it = resized.find(batch[b]);
        const Tensorf& img = it == resized.end() ? batch[b]->image : it->second;
        images.data().segment(Index(b) * pixels, pixels) = img.data();
        for (const auto& [f, c] : batch[b]->annotations) active_set.insert(f);
      }
      for (const auto& f : log.formats) {
        if (active_set.count(f)) active.push_back(f);
      }

      ForwardPass<float> pass = forward_pass(model, std::move(images), active);
      std::map<std::string, Tensorf> predictions;
      for (const auto& [f, var] : pass.heads) predictions.emplace(f, pass.tape.value(var));
      std::map<std::string, Tensorf> dpred;
      const MultiHeadLoss loss = masked_multihead_loss(predictions, batch, formats, &dpred);
      if (!std::isfinite(loss.total)) {
        throw TrainingError("train: loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      std::vector<std::pair<std::size_t, Tensorf>> seeds;
      for (const auto& [f, var] : pass.heads) seeds.emplace_back(var, std::move(dpred.at(f)));
      const Gradients<float> grads = pass.tape.backward(std::span<const std::pair<std::size_t, Tensorf>>(seeds));
      std::map<std::string, const LayerParams<float>*> by_name;
      for (const auto& layer : model.layers()) by_name[layer.name] = grads.find(layer.params);
      adamw_step(model, by_name, state, lr, config);

      e.loss_total += loss.total;
      for (const auto& [f, h] : loss.heads) {
        nme_sum[f] += h.loss * double(h.count);
        e.count[f] += h.count;
      }
      ++step_in_epoch;
    }
    e.loss_total /= double(step_in_epoch);
    for (const auto& f : log.formats) {
      e.loss[f] = e.count[f] ? nme_sum[f] / double(e.count[f]) : 0.0;
    }
    log.epochs.push_back(e);
    efld::log(LogLevel::debug, "epoch " + std::to_string(epoch) + " loss " + fmt_double(e.loss_total));
    if (options.on_epoch && !options.on_epoch(log.epochs.back())) break;
  }
  return log;
}

std::vector<const Sample*> annotated(const Dataset& dataset, const std::string& format) {
  std::vector<const Sample*> out;
  for (const Sample& s : dataset.samples) {
    if (s.has(format)) out.push_back(&s);
  }
  return out;
}

Tensorf ground_truth(const std::vector<const Sample*>& samples, const std::string& format) {
  if (samples.empty()) return Tensorf({0, 0});
  const Index width = Index(samples.front()->annotations.at(format).size());
  Tensorf out({Index(samples.size()), width});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& c = samples[i]->annotations.at(format);
    for (Index j = 0; j < width; ++j) out.matrix()(Index(i), j) = float(c[std::size_t(j)]);
  }
  return out;
}

Tensorf predict(const Model<float>& model, const std::vector<const Sample*>& samples, const std::string& format,
                Index batch_size) {
  const ModelConfig& mc = model.config();
  const Index width = mc.head(format).out_dim();
  Tensorf out({Index(samples.size()), width});
  for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + std::size_t(batch_size));
    const std::vector<const Sample*> chunk(samples.begin() + std::ptrdiff_t(start), samples.begin() + std::ptrdiff_t(end));
    const auto result = model_forward(model, stack_images(chunk, mc.input_size), {format});
    out.matrix().middleRows(Index(start), Index(end - start)) = result.at(format).matrix();
  }
  return out;
}

}  // namespace efld
