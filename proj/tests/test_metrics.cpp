#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpliif/config_io.hpp"
#include "fpliif/data.hpp"
#include "fpliif/errors.hpp"
#include "fpliif/metrics.hpp"
#include "fpliif/random.hpp"

using namespace fpliif;

namespace {

LabelMap random_map(Index h, Index w, int c, std::uint64_t seed) {
  Rng rng(seed);
  LabelMap l(h, w);
  for (Index i = 0; i < l.size(); ++i) l(i) = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(c));
  return l;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_width = 8;
  c.group_sizes = {1, 1, 1};
  c.rcmlp_dims = {16, 8};
  c.head_width = 16;
  c.head_depth = 2;
  c.num_classes = 8;
  c.input_resolution = 32;
  return c;
}

}  // namespace

TEST_CASE("confusion matrix counting") {
  const auto gt = random_map(6, 7, 4, 1);
  const auto same = confusion(gt, gt, 4);
  CHECK(same.total() == 42);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i != j) CHECK(same.counts(i, j) == 0);
    }

  const auto cm = confusion(LabelMap::Constant(3, 3, 1), LabelMap::Constant(3, 3, 2), 3);
  CHECK(cm.counts(2, 1) == 9);
  CHECK(cm.total() == 9);

  const auto pred = random_map(8, 8, 8, 2);
  const auto ref = random_map(8, 8, 8, 3);
  const auto c8 = confusion(pred, ref, 8);
  Eigen::Matrix<std::int64_t, 8, 8> loop = Eigen::Matrix<std::int64_t, 8, 8>::Zero();
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) ++loop(ref(y, x), pred(y, x));
  CHECK(c8.counts == loop);

  EdgeMask region = EdgeMask::Constant(8, 8, false);
  region.row(2).setConstant(true);
  CHECK(confusion(pred, ref, 8, &region).total() == 8);

  ConfusionMatrix merged(8);
  accumulate(merged, pred, ref);
  merged += c8;
  CHECK(merged.counts == 2 * loop);

  CHECK_THROWS_AS(confusion(pred, random_map(8, 7, 8, 1), 8), DimensionError);
  CHECK_THROWS_AS(confusion(pred, ref, 4), DataError);
}

TEST_CASE("F1 scores") {
  const auto gt = random_map(10, 10, 5, 4);
  const auto perfect = f1_scores(confusion(gt, gt, 5));
  CHECK(perfect.mean == 1.0);
  for (int c = 1; c < 5; ++c) CHECK(perfect.per_class[static_cast<std::size_t>(c)] == 1.0);
  CHECK(!perfect.per_class[0].has_value());

  const auto disjoint = f1_scores(confusion(LabelMap::Constant(4, 4, 1), LabelMap::Constant(4, 4, 2), 3));
  CHECK(disjoint.per_class[1] == 0.0);
  CHECK(disjoint.per_class[2] == 0.0);
  CHECK(disjoint.mean == 0.0);

  ConfusionMatrix hand(3);
  hand.counts << 0, 0, 0, 2, 6, 0, 0, 2, 0;  // class 1: TP 6, FN 2, FP 2
  const auto s = f1_scores(hand);
  CHECK(s.per_class[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.per_class[2] == 0.0);

  ConfusionMatrix absent(4);
  absent.counts(1, 1) = 5;
  const auto a = f1_scores(absent);
  CHECK(!a.per_class[2].has_value());
  CHECK(!a.per_class[3].has_value());
  CHECK(a.included == 1);
  CHECK(a.mean == 1.0);
  CHECK(f1_scores(absent, {}).included == 1);
}

TEST_CASE("IoU") {
  const auto gt = random_map(10, 10, 5, 4);
  CHECK(miou(confusion(gt, gt, 5)) == 1.0);

  LabelMap a = LabelMap::Zero(4, 4), b = LabelMap::Zero(4, 4);
  a.block(0, 0, 2, 2).setConstant(1);  // area 4
  b.block(0, 1, 2, 2).setConstant(1);  // area 4, overlap 2
  const auto s = iou_scores(confusion(b, a, 2));
  CHECK(s.per_class[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("F1 and IoU identity on random matrices") {
  Rng rng(99);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    ConfusionMatrix cm(6);
    for (Index i = 0; i < 36; ++i) cm.counts(i) = static_cast<std::int64_t>(rng() % 1000);
    const auto f = f1_scores(cm, {});
    const auto j = iou_scores(cm, {});
    for (int c = 0; c < 6; ++c) {
      const double iou = *j.per_class[static_cast<std::size_t>(c)];
      worst = std::max(worst, std::abs(*f.per_class[static_cast<std::size_t>(c)] - 2 * iou / (1 + iou)));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("argmax ties go to the lower class") {
  auto logits = TensorF::zeros({1, 3, 1, 2});
  logits.data()(2 * 1 + 1) = 1.0f;  // class 1 at pixel 1
  logits.data()(2 * 2 + 1) = 1.0f;  // class 2 ties
  const auto p = predict_labels(logits);
  CHECK(p[0](0, 0) == 0);
  CHECK(p[0](0, 1) == 1);
}

TEST_CASE("evaluate: pixel accounting and thread independence") {
  const auto model = build_model<float>(tiny_config(), 3);
  std::vector<SegSample> samples;
  for (std::uint64_t i = 0; i < 5; ++i) samples.push_back(synth_face(i, 48));
  EvalOptions o;
  o.out_res = 16;
  o.score_res = 40;
  o.batch_size = 2;
  const auto r = evaluate(model, samples, o);
  CHECK(r.all.total() == 5 * 40 * 40);
  CHECK(r.boundary.total() > 0);
  CHECK(r.boundary.total() < r.all.total());
  o.threads = 3;
  const auto r3 = evaluate(model, samples, o);
  CHECK(r3.all.counts == r.all.counts);
  CHECK(r3.boundary.counts == r.boundary.counts);
  o.boundary_radius = -1;
  CHECK(evaluate(model, samples, o).boundary.total() == 0);
}

TEST_CASE("FLOPs estimate") {
  ModelConfig def;
  ModelConfig fewer = def;
  fewer.group_sizes = {2, 6, 15};
  // One resblock at the 64 x 64 latent is two 3x3 convs 64 -> 64.
  const double one_conv = (flops_estimate(def, 256, 256).encoder_gflops -
                           flops_estimate(fewer, 256, 256).encoder_gflops) / 2;
  CHECK(one_conv == doctest::Approx(2.0 * 9 * 64 * 64 * 4096 / 1e9).epsilon(1e-12));
  CHECK(one_conv == doctest::Approx(0.302).epsilon(1e-3));

  double previous = 0.0;
  const double encoder = flops_estimate(def, 64, 64).encoder_gflops;
  for (Index r : {64, 96, 128, 192, 256, 512}) {
    const auto f = flops_estimate(def, r, r);
    CHECK(f.encoder_gflops == encoder);
    CHECK(f.total_gflops > previous);
    CHECK(f.total_gmacs == doctest::Approx(f.total_gflops / 2));
    previous = f.total_gflops;
  }
  const auto ens = flops_estimate(def, 256, 256, DecodeMode::kEnsemble);
  const auto bil = flops_estimate(def, 256, 256, DecodeMode::kBilinear);
  CHECK(ens.head_gflops == doctest::Approx(4 * bil.head_gflops));
  CHECK(!ens.convention.empty());
}

TEST_CASE("throughput benchmark") {
  const auto model = build_model<float>(tiny_config(), 4);
  const auto one = fps_benchmark(model, 32, 32, 0, 1);
  CHECK(std::isfinite(one.fps));
  CHECK(one.fps > 0);
  const auto slow = fps_benchmark(model, 64, 256, 1, 5);
  const auto fast = fps_benchmark(model, 64, 64, 1, 5);
  CHECK(fast.fps > slow.fps);
  const auto again = fps_benchmark(model, 64, 256, 1, 5);
  CHECK(std::abs(again.fps - slow.fps) <= 0.2 * slow.fps);
  CHECK_THROWS_AS(fps_benchmark(model, 32, 32, 0, 0), ParameterError);
}

TEST_CASE("multi-seed aggregation") {
  const std::vector<std::uint64_t> two{1, 3};
  const auto r = multi_seed_report([](std::uint64_t s) { return std::map<std::string, double>{{"x", double(s)}, {"k", 5.0}}; }, two);
  CHECK(r.at("x").mean == 2.0);
  CHECK(r.at("x").sd == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(r.at("k").sd == 0.0);
  const std::vector<std::uint64_t> one{1};
  CHECK_THROWS_AS(multi_seed_report([](std::uint64_t) { return std::map<std::string, double>{}; }, one), ParameterError);
}

TEST_CASE("report serialization") {
  EvalResult r{ConfusionMatrix(3), ConfusionMatrix(3)};
  r.all.counts << 5, 0, 0, 0, 4, 1, 0, 0, 3;
  r.boundary = r.all;
  const auto report = make_report(r, 1234);
  Json j = report;
  CHECK(j["params"] == 1234);
  CHECK(j["class_f1"][0].is_null());
  CHECK(j["mean_f1"].get<double>() == doctest::Approx(report.mean_f1));
  CHECK(j.contains("boundary_mean_f1"));
}
