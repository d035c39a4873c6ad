#include <gtest/gtest.h>

#include <cmath>

#include "counting_oracle.hpp"
#include "efld/cost.hpp"
#include "efld/metrics.hpp"
#include "efld/model.hpp"
#include "reference_ops.hpp"
#include "test_util.hpp"

using namespace efld;

namespace {

const LandmarkFormat& p51() {
  static const FormatRegistry reg = FormatRegistry::builtin();
  return reg.at("p51");
}

}  // namespace

TEST(Metrics, FailureRateCounting) {
  EXPECT_NEAR(failure_rate({0.05, 0.15, 0.20}, 0.10), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(failure_rate({0.10}, 0.10), 0.0);  // equality is a success
}

TEST(Metrics, CedAucStepIntegral) {
  EXPECT_NEAR(ced_auc({0.05}, 0.10), 0.5, 1e-15);
  EXPECT_NEAR(ced_auc({0.0, 0.0}, 0.10), 1.0, 1e-15);
  EXPECT_EQ(ced_auc({0.2, 0.3}, 0.10), 0.0);
  // Two samples at 0.02 and 0.06: fraction 0 on [0,.02), 0.5 on [.02,.06), 1 on [.06,.1].
  EXPECT_NEAR(ced_auc({0.02, 0.06}, 0.10), (0.04 * 0.5 + 0.04 * 1.0) / 0.10, 1e-14);
}

TEST(Metrics, ComplementIdentityAtThreshold) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> nme;
    for (int i = 0; i < 1 + trial; ++i) nme.push_back(i % 5 == 0 ? 0.1 : uniform(rng, 0.0, 0.2));
    EXPECT_NEAR(failure_rate(nme, 0.1) + ced(nme, 0.1), 1.0, 1e-15);
  }
}

TEST(Metrics, AucNonincreasingInSampleError) {
  Rng rng(5);
  std::vector<double> nme;
  for (int i = 0; i < 20; ++i) nme.push_back(uniform(rng, 0.0, 0.15));
  for (int i = 0; i < 20; ++i) {
    std::vector<double> worse = nme;
    worse[i] += uniform(rng, 0.0, 0.05);
    EXPECT_LE(ced_auc(worse, 0.1), ced_auc(nme, 0.1) + 1e-15);
  }
}

TEST(Metrics, CedCurveAndCsv) {
  const auto curve = ced_curve({0.05, 0.15}, 0.1);
  ASSERT_FALSE(curve.empty());
  EXPECT_EQ(curve.front().first, 0.0);
  EXPECT_NEAR(curve.back().first, 0.1, 1e-15);
  EXPECT_NEAR(curve.back().second, 0.5, 1e-15);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].second, curve[i - 1].second);
  EXPECT_EQ(ced_csv({0.05}, 0.1).rfind("error,fraction\n", 0), 0u);
}

TEST(Metrics, PixelAccuracyBoundaryInclusive) {
  Tensord gt({1, 4}), pred({1, 4});
  gt.data() << 0.5, 0.5, 0.25, 0.25;
  pred = gt;
  EXPECT_EQ(pixel_accuracy(pred, gt, 128.0), 1.0);
  pred[0] += 3.0 / 128;  // (3, 4) px
  pred[1] += 4.0 / 128;
  pred[2] += 6.0 / 128;  // 6 px
  EXPECT_EQ(pixel_accuracy(pred, gt, 128.0), 0.5);
  pred[3] += 1.0 / 128;
  EXPECT_EQ(pixel_accuracy(pred, gt, 128.0, 6.0), 0.5);  // (6, 1) is outside radius 6
}

TEST(Metrics, EvaluatePerfectPredictor) {
  const Tensord gt = efld::testing::random_tensor({3, 102}, 6, 0.1, 0.9);
  const EvalReport r = evaluate(gt, gt, p51(), 0.1, 128.0);
  EXPECT_EQ(r.nme_mean, 0.0);
  EXPECT_EQ(r.failure_rate, 0.0);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.pixel_accuracy, 1.0);
  EXPECT_EQ(r.count, 3);
  EXPECT_NE(r.json().find("\"ced_auc\": 100.0"), std::string::npos) << r.json();
  EXPECT_TRUE(std::isnan(evaluate(gt, gt, p51()).pixel_accuracy));
}

TEST(Metrics, EvaluateRecomputableFromNmeList) {
  const Tensord gt = efld::testing::random_tensor({10, 102}, 7, 0.1, 0.9);
  Tensord pred = gt;
  Rng rng(8);
  for (Index i = 0; i < pred.size(); ++i) pred[i] += uniform(rng, -0.05, 0.05);
  const EvalReport r = evaluate(pred, gt, p51());
  ASSERT_EQ(r.nme.size(), 10u);
  EXPECT_EQ(r.failure_rate, failure_rate(r.nme, 0.1));
  EXPECT_EQ(r.auc, ced_auc(r.nme, 0.1));
  EXPECT_GE(r.failure_rate, 0.0);
  EXPECT_LE(r.auc, 1.0);
  EXPECT_THROW(evaluate(Tensord({0, 102}), Tensord({0, 102}), p51()), UsageError);
}

TEST(Metrics, CompetitionScore) {
  const double s = competition_score(18.47, 1.08, 0.02, 1.93, 0.17);
  EXPECT_NEAR(s, 18.47 / (1.08 * 0.02 * 1.93 * 0.17), 1e-9);
  EXPECT_NEAR(s, 2606.2, 0.05);
  EXPECT_LT(std::abs(s - 2741.92) / 2741.92, 0.06);
  EXPECT_EQ(competition_score(0.0, 1.0, 1.0, 1.0, 1.0), 0.0);
  EXPECT_NEAR(competition_score(18.47, 2.16, 0.02, 1.93, 0.17), s / 2, 1e-9);
  EXPECT_THROW(competition_score(1.0, 0.0, 1.0, 1.0, 1.0), UsageError);
  EXPECT_THROW(competition_score(1.0, 1.0, 1.0, -1.0, 1.0), UsageError);
}

TEST(Cost, DefaultConfigTotals) {
  const CostReport r = count_cost(ModelConfig::default_config({"p51"}));
  EXPECT_EQ(r.macs, 9562176);
  EXPECT_NEAR(r.mflops(), 19.12, 0.005);
  EXPECT_EQ(r.params, 130938);
  EXPECT_EQ(r.payload_bytes(1), 130938);
  EXPECT_EQ(r.payload_bytes(4), 4 * 130938);
  Index macs = 0, params = 0;
  for (const auto& l : r.layers) {
    macs += l.macs;
    params += l.params;
  }
  EXPECT_EQ(macs, r.macs);
  EXPECT_EQ(params, r.params);
  EXPECT_EQ(r.weights + r.biases, r.params);
  EXPECT_GT(r.container_int8_bytes, r.params);
  EXPECT_GT(r.container_float_bytes, 4 * r.params);
}

TEST(Cost, MatchesHandArithmetic) {
  const auto o = oracle::count(oracle::default_modules(), 128, 256, {51, 68, 98});
  const CostReport r = count_cost(ModelConfig::default_config({"p51", "p68", "p98"}));
  EXPECT_EQ(r.macs, o.macs);
  EXPECT_EQ(r.params, o.params);
  const auto small = oracle::count(oracle::default_modules(), 64, 256, {51});
  const CostReport rs = count_cost(ModelConfig::default_config({"p51"}), {}, 64);
  EXPECT_EQ(rs.macs, small.macs);
  EXPECT_EQ(rs.params, small.params);
}

TEST(Cost, Variants) {
  const ModelConfig base = ModelConfig::default_config({"p51"});
  const CostReport conv = count_cost(apply_variant(base, "conv-backbone"));
  EXPECT_EQ(conv.macs - 9562176, 2887680);
  EXPECT_NEAR(conv.mflops(), 24.90, 0.005);
  const CostReport plain = count_cost(apply_variant(base, "pfld-head"));
  const auto o = oracle::count(oracle::default_modules(), 128, 256, {51}, 3, 32, false);
  EXPECT_EQ(plain.macs, o.macs);
  EXPECT_EQ(plain.params, o.params);
  EXPECT_EQ(count_cost(apply_variant(base, "default")).macs, 9562176);
  EXPECT_THROW(apply_variant(base, "wide"), UsageError);
}

TEST(Cost, RemovingHeadSubtractsExactlyItsShare) {
  const ModelConfig c = ModelConfig::default_config({"p51", "p68", "p98"});
  const CostReport all = count_cost(c);
  for (const std::string drop : {"p51", "p68", "p98"}) {
    std::vector<std::string> keep;
    for (const std::string h : {"p51", "p68", "p98"}) {
      if (h != drop) keep.push_back(h);
    }
    Index macs = 0, params = 0;
    for (const auto& l : all.layers) {
      if (l.name.rfind("head." + drop + ".", 0) == 0) {
        macs += l.macs;
        params += l.params;
      }
    }
    const CostReport sub = count_cost(c, keep);
    EXPECT_GT(macs, 0);
    EXPECT_EQ(all.macs - sub.macs, macs) << drop;
    EXPECT_EQ(all.params - sub.params, params) << drop;
  }
}

TEST(Cost, LayerMacsEqualInstrumentedForward) {
  for (const ModelConfig& c : {ModelConfig::reduced(16, {"p51"}),
                               ModelConfig::reduced(16, {"p51"}).with_conventional_backbone()}) {
    const ShapeExecutor trace = trace_architecture(c);
    for (const LayerInfo& info : trace.layers()) {
      Shape in{1};
      in.insert(in.end(), info.in_shape.begin(), info.in_shape.end());
      const Tensord x = efld::testing::random_tensor(in, 1);
      const Tensord w = efld::testing::random_tensor(info.weight_shape, 2);
      const Tensord b = efld::testing::random_tensor({info.weight_shape.back()}, 3);
      reference::Counter counter;
      switch (info.spec.kind) {
        case LayerKind::conv:
          reference::conv2d(x, w, b, info.spec.stride, info.spec.padding, &counter);
          break;
        case LayerKind::depthwise:
          reference::depthwise_conv2d(x, w, b, info.spec.stride, info.spec.padding, &counter);
          break;
        case LayerKind::linear:
          reference::linear(x, w, b, &counter);
          break;
      }
      EXPECT_EQ(counter.multiplies, info.macs) << info.spec.name;
    }
  }
}

TEST(Cost, ReportFormats) {
  const CostReport r = count_cost(ModelConfig::default_config({"p51"}));
  EXPECT_NE(r.text().find("19.12"), std::string::npos);
  EXPECT_NE(r.json().find("\"macs\": 9562176"), std::string::npos) << r.json().substr(0, 300);
}
