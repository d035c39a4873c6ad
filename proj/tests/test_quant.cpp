#include <gtest/gtest.h>

#include "efld/log.hpp"
#include "efld/quant.hpp"
#include "efld/synth.hpp"
#include "efld/train.hpp"
#include "test_util.hpp"

using namespace efld;

namespace {

Dataset make_data(Index count, Index size, std::uint64_t seed) {
  SynthSpec spec;
  spec.count = count;
  spec.image_size = size;
  spec.seed = seed;
  spec.formats = {"p51", "p68"};
  return generate_synthetic(spec);
}

std::vector<const Sample*> all(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& s : d.samples) out.push_back(&s);
  return out;
}

}  // namespace

TEST(QuantValue, Examples) {
  const QuantParams qp{0.01, 0};
  EXPECT_EQ(quantize_value(0.5, qp), 50);
  EXPECT_NEAR(dequantize_value(50, qp), 0.5, 1e-15);
  EXPECT_EQ(quantize_value(0.0, qp), 0);
  EXPECT_EQ(dequantize_value(quantize_value(0.0, qp), qp), 0.0);
  EXPECT_EQ(quantize_value(10.0, qp), 127);
  EXPECT_EQ(quantize_value(-10.0, qp), -128);
}

TEST(QuantValue, RoundsHalfAwayFromZero) {
  const QuantParams qp{1.0, 0};
  EXPECT_EQ(quantize_value(2.5, qp), 3);
  EXPECT_EQ(quantize_value(-2.5, qp), -3);
  EXPECT_EQ(quantize_value(0.5, qp), 1);
  EXPECT_EQ(quantize_value(-0.5, qp), -1);
}

TEST(QuantValue, RoundTripWithinHalfScaleAndMonotone) {
  Rng rng(1);
  const QuantParams qp = range_params(-0.7, 2.3);
  const double lo = dequantize_value(-128, qp), hi = dequantize_value(127, qp);
  double prev_x = lo;
  int prev_q = -128;
  for (int i = 0; i < 100000; ++i) {
    const double x = uniform(rng, lo, hi);
    EXPECT_LE(std::abs(dequantize_value(quantize_value(x, qp), qp) - x), qp.scale / 2 + 1e-12);
    if (x >= prev_x) {
      EXPECT_GE(quantize_value(x, qp), prev_q);
    } else {
      EXPECT_LE(quantize_value(x, qp), prev_q);
    }
    prev_x = x;
    prev_q = quantize_value(x, qp);
  }
}

TEST(Calibration, RangeMapping) {
  const QuantParams a = range_params(0.0, 2.54);
  EXPECT_NEAR(a.scale, 2.54 / 255.0, 1e-15);
  EXPECT_NEAR(a.scale, 0.009961, 1e-6);
  EXPECT_EQ(a.zero_point, -128);
  const QuantParams b = range_params(-1.0, 1.0);
  EXPECT_LE(std::abs(b.zero_point), 1);
  const QuantParams c = range_params(0.5, 2.0);  // widened to include 0
  EXPECT_EQ(c.zero_point, -128);
  EXPECT_NEAR(c.scale, 2.0 / 255.0, 1e-15);
  const LogLevel saved = log_level();
  log_level() = LogLevel::quiet;
  EXPECT_EQ(range_params(0.0, 0.0).scale, min_scale);
  log_level() = saved;
}

TEST(Calibration, CoversEverySiteAndIsDeterministic) {
  const Dataset d = make_data(5, 16, 1);
  const Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51", "p68"}), 2);
  const Calibration a = calibrate(m, d, 2), b = calibrate(m, d, 3);
  EXPECT_EQ(a.params(), b.params());
  const ShapeExecutor trace = trace_architecture(m.config());
  EXPECT_EQ(a.ranges.size(), trace.sites().size() + 1);
  for (const auto& s : trace.sites()) EXPECT_TRUE(a.ranges.count(s)) << s;
  EXPECT_GE(a.ranges.at("eosa1.extra").first, 0.0);  // post-ReLU site
  EXPECT_THROW(calibrate(m, std::vector<const Sample*>{}), UsageError);
}

TEST(Quantize, LayerInputSites) {
  const auto in = layer_input_sites(ModelConfig::default_config({"p51"}));
  EXPECT_EQ(in.at("eosa1.extra"), "input");
  EXPECT_EQ(in.at("eosa1.osa.l1"), "eosa1.osa.l0");
  EXPECT_EQ(in.at("eosa2.extra.dw"), "eosa1.out");
  EXPECT_EQ(in.at("eosa2.extra.pw"), "eosa2.extra.dw");
  EXPECT_EQ(in.at("decoder.pw"), "eosa4.out");
  EXPECT_EQ(in.at("head.p51.b0"), "decoder.dw");
  EXPECT_EQ(in.at("head.p51.b1"), "head.p51.c0");
  EXPECT_EQ(in.at("head.p51.out"), "head.p51.c2");
}

TEST(Quantize, WeightScalesAndPayload) {
  const Dataset d = make_data(3, 16, 3);
  Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51"}), 4);
  m.layer("head.p51.out").weights.data().setConstant(0.5f);
  m.layer("head.p51.out").weights[0] = -1.27f;
  m.layer("head.p51.b0").weights.data().setZero();
  const QuantizedModel q = quantize_model(m, calibrate(m, d).params());
  const QuantLayer& out = q.layer("head.p51.out");
  EXPECT_NEAR(out.weight_scale, 0.01, 1e-9);
  EXPECT_EQ(out.weights[0], -127);
  EXPECT_EQ(out.weights[1], 50);
  const QuantLayer& zero = q.layer("head.p51.b0");
  EXPECT_EQ(zero.weight_scale, min_scale);
  EXPECT_TRUE((zero.weights.data().array() == 0).all());
  Index weights = 0;
  for (const auto& l : m.layers()) weights += l.params.weights.size();
  EXPECT_EQ(q.weight_bytes(), weights);
  EXPECT_EQ(q.parameter_count(), m.parameter_count());
}

TEST(Quantize, BiasesAtInputTimesWeightScale) {
  const Dataset d = make_data(3, 16, 5);
  Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51"}), 6);
  m.layer("decoder.pw").bias.data().setConstant(0.25f);
  const auto sites = calibrate(m, d).params();
  const QuantizedModel q = quantize_model(m, sites);
  const QuantLayer& l = q.layer("decoder.pw");
  const double s = sites.at("eosa4.out").scale * l.weight_scale;
  EXPECT_EQ(l.bias[0], std::int32_t(std::round(0.25 / s)));
}

TEST(Quantize, MissingSiteIsError) {
  const Dataset d = make_data(2, 16, 7);
  const Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51"}), 8);
  auto sites = calibrate(m, d).params();
  sites.erase("eosa2.out");
  EXPECT_THROW(quantize_model(m, sites), ValidationError);
}

TEST(QuantizedForward, ZeroModelGivesDequantizedZero) {
  const Dataset d = make_data(2, 16, 9);
  Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51"}), 10);
  for (auto& l : m.layers()) {
    l.params.weights.data().setZero();
    l.params.bias.data().setZero();
  }
  const LogLevel saved = log_level();
  log_level() = LogLevel::quiet;
  const QuantizedModel q = quantize_model(m, calibrate(m, d).params());
  log_level() = saved;
  const auto out = quantized_forward(q, stack_images(all(d), 16), {"p51"});
  const QuantParams& site = q.site("head.p51.out");
  for (Index i = 0; i < out.at("p51").size(); ++i) {
    EXPECT_EQ(out.at("p51")[i], float(dequantize_value(site.zero_point, site)));
  }
}

TEST(QuantizedForward, TracksFloatWithinThreeScales) {
  const Dataset calib = make_data(16, 32, 11), eval = make_data(16, 32, 12);
  const Model<float> m = build_model<float>(ModelConfig::reduced(32, {"p51", "p68"}), 13);
  const QuantizedModel q = quantize_model(m, calibrate(m, calib).params());
  for (const std::string f : {"p51", "p68"}) {
    const Tensorf fp = predict(m, all(eval), f);
    const Tensorf qp = quantized_predict(q, all(eval), f);
    const double mean = (fp.data() - qp.data()).cwiseAbs().mean();
    EXPECT_LT(mean, 3.0 * q.site("head." + f + ".out").scale) << f;
  }
}

TEST(QuantizedForward, BitDeterministic) {
  const Dataset d = make_data(4, 16, 14);
  const Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51", "p68"}), 15);
  const QuantizedModel q = quantize_model(m, calibrate(m, d).params());
  const Tensorf images = stack_images(all(d), 16);
  EXPECT_EQ(quantized_forward(q, images, {"p51", "p68"}), quantized_forward(q, images, {"p51", "p68"}));
}

TEST(QuantizedForward, PrunedHeadsUnchanged) {
  const Dataset d = make_data(4, 16, 16);
  const Model<float> m = build_model<float>(ModelConfig::reduced(16, {"p51", "p68"}), 17);
  const QuantizedModel q = quantize_model(m, calibrate(m, d).params());
  const QuantizedModel p = q.pruned({"p51"});
  EXPECT_FALSE(p.config().has_head("p68"));
  const Tensorf images = stack_images(all(d), 16);
  EXPECT_EQ(quantized_forward(q, images, {"p51"}).at("p51"), quantized_forward(p, images, {"p51"}).at("p51"));
}
