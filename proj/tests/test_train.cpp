#include <gtest/gtest.h>

#include <cmath>

#include "efld/synth.hpp"
#include "efld/train.hpp"
#include "test_util.hpp"

using namespace efld;
using efld::testing::random_tensor;
using efld::testing::relative_error;

namespace {

const LandmarkFormat three{"t3", 3, {0, 1}};

Dataset mixed_data(Index count, Index size, std::uint64_t seed, bool round_robin = true) {
  SynthSpec spec;
  spec.count = count;
  spec.image_size = size;
  spec.seed = seed;
  spec.formats = {"p51", "p68", "p98"};
  spec.round_robin = round_robin;
  return generate_synthetic(spec);
}

Tensord truth(const std::vector<const Sample*>& batch, const std::string& format) {
  const auto& first = batch.front()->annotations.at(format);
  Tensord out({Index(batch.size()), Index(first.size())});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& c = batch[b]->annotations.at(format);
    for (std::size_t j = 0; j < c.size(); ++j) out.matrix()(Index(b), Index(j)) = c[j];
  }
  return out;
}

std::vector<const Sample*> pointers(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& s : d.samples) out.push_back(&s);
  return out;
}

}  // namespace

TEST(NmeLoss, ExactPredictionIsZero) {
  const Tensord gt({1, 6}, {0.0, 0.0, 10.0, 0.0, 5.0, 5.0});
  EXPECT_EQ(nme_loss(gt, gt, three), 0.0);
}

TEST(NmeLoss, HandComputedExample) {
  const Tensord gt({1, 6}, {0.0, 0.0, 10.0, 0.0, 5.0, 5.0});
  const Tensord pred({1, 6}, {0.0, 0.0, 10.0, 0.0, 5.0, 6.0});
  EXPECT_NEAR(nme_loss(pred, gt, three), 1.0 / 30.0, 1e-15);
}

TEST(NmeLoss, SimilarityInvariant) {
  const Tensord gt = random_tensor({4, 6}, 1), pred = random_tensor({4, 6}, 2);
  const double base = nme_loss(pred, gt, three);
  const double c = std::cos(0.7), s = std::sin(0.7);
  Tensord gt2(gt.shape()), pred2(pred.shape());
  for (Index i = 0; i < gt.size(); i += 2) {
    gt2[i] = 2.5 * (c * gt[i] - s * gt[i + 1]) + 3.0;
    gt2[i + 1] = 2.5 * (s * gt[i] + c * gt[i + 1]) - 1.0;
    pred2[i] = 2.5 * (c * pred[i] - s * pred[i + 1]) + 3.0;
    pred2[i + 1] = 2.5 * (s * pred[i] + c * pred[i + 1]) - 1.0;
  }
  EXPECT_NEAR(nme_loss(pred2, gt2, three), base, 1e-12);
  Tensord gt3 = gt, pred3 = pred;
  gt3.data() *= 2.0;
  pred3.data() *= 2.0;
  EXPECT_NEAR(nme_loss(pred3, gt3, three), base, 1e-12);
}

TEST(NmeLoss, GradientMatchesFiniteDifferences) {
  const Tensord gt = random_tensor({3, 6}, 5);
  Tensord pred = random_tensor({3, 6}, 6);
  Tensord grad;
  nme_loss(pred, gt, three, &grad);
  for (Index i = 0; i < pred.size(); ++i) {
    const double numeric = efld::testing::central_difference(pred, i, [&] { return nme_loss(pred, gt, three); });
    EXPECT_LT(relative_error(grad[i], numeric), 1e-6) << i;
  }
}

TEST(NmeLoss, CoincidentPointHasZeroSubgradient) {
  const Tensord gt({1, 6}, {0.0, 0.0, 1.0, 0.0, 0.5, 0.5});
  const Tensord pred({1, 6}, {0.0, 0.0, 1.0, 0.1, 0.5, 0.5});
  Tensord grad;
  nme_loss(pred, gt, three, &grad);
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_EQ(grad[1], 0.0);
  EXPECT_NE(grad[3], 0.0);
}

TEST(NmeLoss, DegenerateSampleIsSkipped) {
  const LogLevel saved = log_level();
  log_level() = LogLevel::quiet;
  const Tensord gt({2, 6}, {0.0, 0.0, 10.0, 0.0, 5.0, 5.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0});
  const Tensord pred({2, 6}, {0.0, 0.0, 10.0, 0.0, 5.0, 6.0, 3.0, 3.0, 2.0, 2.0, 1.0, 1.0});
  Tensord grad;
  EXPECT_NEAR(nme_loss(pred, gt, three, &grad), 1.0 / 30.0, 1e-15);
  for (Index c = 0; c < 6; ++c) EXPECT_EQ(grad.matrix()(1, c), 0.0);
  log_level() = saved;
}

TEST(MaskedLoss, MissingFormatGivesZeroLossAndExactlyZeroGradients) {
  const Dataset data = mixed_data(6, 16, 3, false);
  std::vector<Sample> stripped(data.samples.begin(), data.samples.end());
  for (auto& s : stripped) s.annotations.erase("p98");
  std::vector<const Sample*> batch;
  for (const auto& s : stripped) batch.push_back(&s);

  const Model<double> model = build_model<double>(ModelConfig::reduced(16, {"p51", "p68", "p98"}), 4);
  ForwardPass<double> pass = forward_pass(model, stack_images(batch, 16).cast<double>(), {"p51", "p68", "p98"});
  std::map<std::string, Tensord> preds, grads;
  for (const auto& [f, v] : pass.heads) preds.emplace(f, pass.tape.value(v));
  const MultiHeadLoss loss = masked_multihead_loss(preds, batch, data.formats, &grads);
  EXPECT_EQ(loss.heads.at("p98").loss, 0.0);
  EXPECT_EQ(loss.heads.at("p98").count, 0);
  std::vector<std::pair<std::size_t, Tensord>> seeds;
  for (const auto& [f, v] : pass.heads) seeds.emplace_back(v, grads.at(f));
  const Gradients<double> g = pass.tape.backward(std::span<const std::pair<std::size_t, Tensord>>(seeds));
  int checked = 0;
  for (const auto& l : model.layers()) {
    if (!l.name.starts_with("head.p98.")) continue;
    const LayerParams<double>* pg = g.find(l.params);
    ASSERT_NE(pg, nullptr);
    EXPECT_TRUE((pg->weights.data().array() == 0.0).all()) << l.name;
    EXPECT_TRUE((pg->bias.data().array() == 0.0).all()) << l.name;
    ++checked;
  }
  EXPECT_EQ(checked, 4);
}

// A head's parameter gradient from a mixed batch equals the gradient from its
// annotated samples alone (up to batch-size dependent rounding in the forward GEMMs).
TEST(MaskedLoss, UnannotatedSamplesContributeNothingToHeadGradients) {
  const Dataset data = mixed_data(2, 16, 8, true);  // sample 0: p51, sample 1: p68
  const Model<double> model = build_model<double>(ModelConfig::reduced(16, {"p51", "p68", "p98"}), 2);
  auto head_grads = [&](const std::vector<const Sample*>& batch) {
    ForwardPass<double> pass = forward_pass(model, stack_images(batch, 16).cast<double>(), {"p51"});
    std::map<std::string, Tensord> preds{{"p51", pass.output("p51")}}, grads;
    masked_multihead_loss(preds, batch, data.formats, &grads);
    const Gradients<double> g = pass.tape.backward(pass.heads.at("p51"), grads.at("p51"));
    std::vector<Tensord> out;
    for (const auto& l : model.layers()) {
      if (l.name.starts_with("head.p51.")) out.push_back(g.find(l.params)->weights);
    }
    return out;
  };
  const auto mixed = head_grads({&data.samples[0], &data.samples[1]});
  const auto alone = head_grads({&data.samples[0]});
  ASSERT_EQ(mixed.size(), alone.size());
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    EXPECT_LT((mixed[i].data() - alone[i].data()).cwiseAbs().maxCoeff(), 1e-12) << i;
  }
}

TEST(MaskedLoss, NoMaskingSumsHeads) {
  const Dataset data = mixed_data(4, 16, 9, false);
  const auto batch = pointers(data);
  std::map<std::string, Tensord> preds;
  double expected = 0.0;
  for (const std::string f : {"p51", "p68", "p98"}) {
    const Tensord gt = truth(batch, f);
    Tensord p = gt;
    p.data().array() += 0.01;
    expected += nme_loss(p, gt, data.formats.at(f));
    preds.emplace(f, p);
  }
  EXPECT_NEAR(masked_multihead_loss(preds, batch, data.formats).total, expected, 1e-14);
}

TEST(MaskedLoss, SingleHeadReduction) {
  Dataset data = mixed_data(1, 16, 10, false);
  data.samples[0].annotations.erase("p68");
  data.samples[0].annotations.erase("p98");
  const auto batch = pointers(data);
  const Tensord gt = truth(batch, "p51");
  Tensord p = gt;
  p.data().array() -= 0.02;
  std::map<std::string, Tensord> preds{{"p51", p}, {"p68", Tensord({1, 136})}, {"p98", Tensord({1, 196})}};
  EXPECT_EQ(masked_multihead_loss(preds, batch, data.formats).total, nme_loss(p, gt, data.formats.at("p51")));
}

TEST(CosineLr, Examples) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 0.0), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 0.0), 5e-4, 1e-18);
  EXPECT_THROW(cosine_lr(0, 0, 1e-3, 0.0), UsageError);
  EXPECT_THROW(cosine_lr(101, 100, 1e-3, 0.0), UsageError);
}

namespace {

Model<double> scalar_model(double theta) {
  LayerParams<double> p;
  p.kind = LayerKind::linear;
  p.weights = Tensord({1, 1}, {theta});
  p.bias = Tensord({1}, {0.0});
  return Model<double>(ModelConfig::default_config(), {{"x", p}});
}

}  // namespace

TEST(AdamW, HandComputedFirstStep) {
  Model<double> m = scalar_model(1.0);
  LayerParams<double> g;
  g.weights = Tensord({1, 1}, {0.5});
  g.bias = Tensord({1}, {0.0});
  OptimizerState<double> state;
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  adamw_step(m, {{"x", &g}}, state, 0.1, cfg);
  EXPECT_NEAR(m.layer("x").weights[0], 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01), 1e-15);
  EXPECT_NEAR(m.layer("x").weights[0], 0.899, 1e-7);
  EXPECT_EQ(state.step, 1);
}

TEST(AdamW, ZeroGradientNoDecayIsIdentity) {
  Model<double> m = scalar_model(0.75);
  OptimizerState<double> state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(m, {}, state, 0.1, cfg);
  EXPECT_EQ(m.layer("x").weights[0], 0.75);
}

TEST(AdamW, DecayIsDecoupled) {
  Model<double> m = scalar_model(0.75);
  OptimizerState<double> state;
  TrainConfig cfg;
  cfg.weight_decay = 0.05;
  adamw_step(m, {}, state, 0.1, cfg);
  EXPECT_DOUBLE_EQ(m.layer("x").weights[0], 0.75 * (1.0 - 0.1 * 0.05));
}

TEST(AdamW, MatchesScalarReference) {
  Model<double> m = build_model<double>(ModelConfig::reduced(16), 1);
  Model<double> ref = m;
  OptimizerState<double> state;
  TrainConfig cfg;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> mv;
  for (int step = 1; step <= 3; ++step) {
    std::vector<LayerParams<double>> grads;
    grads.reserve(m.layers().size());
    std::map<std::string, const LayerParams<double>*> by_name;
    for (std::size_t i = 0; i < m.layers().size(); ++i) {
      const auto& l = m.layers()[i];
      LayerParams<double> g = LayerParams<double>::zeros_like(l.params);
      g.weights = random_tensor(l.params.weights.shape(), 100 * std::uint64_t(step) + i);
      g.bias = random_tensor(l.params.bias.shape(), 7 + 100 * std::uint64_t(step) + i);
      grads.push_back(std::move(g));
    }
    for (std::size_t i = 0; i < m.layers().size(); ++i) by_name[m.layers()[i].name] = &grads[i];
    const double lr = 0.01 * step;
    adamw_step(m, by_name, state, lr, cfg);
    for (std::size_t i = 0; i < ref.layers().size(); ++i) {
      auto& l = ref.layers()[i];
      auto& [mm, vv] = mv[l.name];
      const Index nw = l.params.weights.size(), n = l.params.count();
      mm.resize(std::size_t(n), 0.0);
      vv.resize(std::size_t(n), 0.0);
      for (Index j = 0; j < n; ++j) {
        double& theta = j < nw ? l.params.weights[j] : l.params.bias[j - nw];
        const double g = j < nw ? grads[i].weights[j] : grads[i].bias[j - nw];
        double& mj = mm[std::size_t(j)];
        double& vj = vv[std::size_t(j)];
        mj = cfg.beta1 * mj + (1 - cfg.beta1) * g;
        vj = cfg.beta2 * vj + (1 - cfg.beta2) * g * g;
        const double mhat = mj / (1 - std::pow(cfg.beta1, step));
        const double vhat = vj / (1 - std::pow(cfg.beta2, step));
        theta -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta);
      }
    }
  }
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    const auto& a = m.layers()[i].params;
    const auto& b = ref.layers()[i].params;
    EXPECT_LT((a.weights.data() - b.weights.data()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.bias.data() - b.bias.data()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  Model<double> m = scalar_model(1.0);
  LayerParams<double> g;
  g.weights = Tensord({1, 1}, {std::nan("")});
  g.bias = Tensord({1}, {0.0});
  OptimizerState<double> state;
  try {
    adamw_step(m, {{"x", &g}}, state, 0.1, TrainConfig{});
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
  EXPECT_EQ(m.layer("x").weights[0], 1.0);
}

TEST(Train, LogHeaderAndCounts) {
  const Dataset data = mixed_data(9, 16, 12);
  Model<float> model = build_model<float>(ModelConfig::reduced(16, {"p51", "p68", "p98"}), 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const TrainLog log = train(model, {&data}, cfg);
  const std::string csv = log.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,loss_total,loss_p51,loss_p68,loss_p98,n_p51,n_p68,n_p98");
  ASSERT_EQ(log.epochs.size(), 2u);
  for (const auto& e : log.epochs) {
    for (const auto& [f, n] : e.count) EXPECT_EQ(n, 3) << f;
  }
  EXPECT_DOUBLE_EQ(log.epochs[0].lr, cfg.lr_max);
}

TEST(Train, DeterministicGivenSeed) {
  const Dataset data = mixed_data(8, 16, 13);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  cfg.seed = 21;
  auto run = [&] {
    Model<float> model = build_model<float>(ModelConfig::reduced(16, {"p51", "p68", "p98"}), cfg.seed);
    const TrainLog log = train(model, {&data}, cfg);
    return std::make_pair(log.csv(), model);
  };
  const auto [log_a, model_a] = run();
  const auto [log_b, model_b] = run();
  EXPECT_EQ(log_a, log_b);
  for (std::size_t i = 0; i < model_a.layers().size(); ++i) {
    EXPECT_EQ(model_a.layers()[i].params.weights, model_b.layers()[i].params.weights);
  }
}

TEST(Train, RejectsDataWithoutMatchingHead) {
  const Dataset data = mixed_data(3, 16, 14);
  Model<float> model = build_model<float>(ModelConfig::reduced(16, {"p51"}), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(model, {&data}, cfg), UsageError);
}

// Smoothed (10-epoch mean) per-head losses fall over the first 50 epochs.
TEST(Train, MixedHeadsAllDecrease) {
  const Dataset data = mixed_data(24, 16, 15);
  Model<float> model = build_model<float>(ModelConfig::reduced(16, {"p51", "p68", "p98"}), 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.lr_max = 2e-3;
  const TrainLog log = train(model, {&data}, cfg);
  for (const std::string f : {"p51", "p68", "p98"}) {
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
      first += log.epochs[std::size_t(i)].loss.at(f);
      last += log.epochs[std::size_t(40 + i)].loss.at(f);
    }
    EXPECT_LT(last, first) << f;
  }
}

TEST(Train, PredictMatchesForward) {
  const Dataset data = mixed_data(5, 16, 16, false);
  const Model<float> model = build_model<float>(ModelConfig::reduced(16, {"p51", "p68"}), 5);
  const auto samples = annotated(data, "p68");
  const Tensorf p = predict(model, samples, "p68", 2);
  const Tensorf direct = model_forward(model, stack_images(samples, 16), {"p68"}).at("p68");
  EXPECT_LT((p.data() - direct.data()).cwiseAbs().maxCoeff(), 1e-6f);
}
