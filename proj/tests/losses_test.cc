// Copyright 2026 The HNK Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hnk/losses.h"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "hnk/anchors.h"
#include "hnk/assign.h"
#include "hnk/errors.h"
#include "hnk/rng.h"

namespace hnk {
namespace {

Tensor RandomTensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(NumElements(shape)));
  for (double& x : v) x = rng.Uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// (C, N) probabilities with rows summing to one, plus a random one-hot target.
std::pair<Tensor, Tensor> RandomSegPair(int64_t c, int64_t n, Rng& rng) {
  std::vector<double> p(static_cast<size_t>(c * n)), g(static_cast<size_t>(c * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t k = 0; k < c; ++k) s += p[static_cast<size_t>(k * n + i)] = rng.Uniform(0.05, 1.0);
    for (int64_t k = 0; k < c; ++k) p[static_cast<size_t>(k * n + i)] /= s;
    g[static_cast<size_t>(rng.UniformInt(c) * n + i)] = 1.0;
  }
  return {Tensor({c, n}, p), Tensor({c, n}, g)};
}

TEST(FocalTest, ScalarExample) {
  const double got = FocalLoss(Tensor({1}, {0.9}), Tensor({1}, {1.0}), 0.25, 2.0).item();
  EXPECT_NEAR(got, -0.25 * 0.01 * std::log(0.9), 1e-15);
  EXPECT_NEAR(got, 2.634e-4, 5e-8);
}

TEST(FocalTest, NegativeTargetUsesComplement) {
  const double got = FocalLoss(Tensor({1}, {0.2}), Tensor({1}, {0.0}), 0.25, 2.0).item();
  EXPECT_NEAR(got, -0.75 * 0.04 * std::log(0.8), 1e-15);
}

TEST(FocalTest, ConfidentCorrectIsNearZero) {
  const Tensor t({4}, {1, 0, 1, 0});
  EXPECT_LT(FocalLoss(Tensor({4}, {1, 0, 1, 0}), t, 0.25, 2.0).item(), 1e-5);
}

TEST(FocalTest, GammaZeroHalfAlphaIsHalfCrossEntropy) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Tensor p = RandomTensor({6}, rng, 0.01, 0.99);
    std::vector<double> tv(6);
    for (double& x : tv) x = static_cast<double>(rng.UniformInt(2));
    double ce = 0.0;
    for (int i = 0; i < 6; ++i) ce -= tv[static_cast<size_t>(i)] > 0 ? std::log(p[i]) : std::log(1 - p[i]);
    ce /= 6;
    EXPECT_NEAR(FocalLoss(p, Tensor({6}, tv), 0.5, 0.0).item(), 0.5 * ce, 1e-14);
  }
}

TEST(FocalTest, ShapeMismatchRejected) {
  EXPECT_THROW(FocalLoss(Tensor({2}, {0.5, 0.5}), Tensor({3}, {0, 1, 0}), 0.25, 2.0), ValidationError);
}

TEST(SmoothL1Test, Examples) {
  const double d2 = 1.0 / 9.0;
  EXPECT_EQ(SmoothL1(Tensor({1}, {0.0}), d2).item(), 0.0);
  EXPECT_NEAR(SmoothL1(Tensor({1}, {d2}), d2).item(), 0.05555555555555556, 1e-15);
  EXPECT_NEAR(4.5 * d2 * d2, d2 - d2 / 2, 1e-15);
  EXPECT_NEAR(SmoothL1(Tensor({1}, {1.0}), d2).item(), 0.9444444444444444, 1e-15);
  // Mean over elements.
  EXPECT_NEAR(SmoothL1(Tensor({2}, {0.0, 1.0}), d2).item(), 0.4722222222222222, 1e-15);
}

TEST(SmoothL1Test, SlopeContinuousAtTransition) {
  const double d2 = 1.0 / 9.0;
  for (double x : {d2 - 1e-9, d2 + 1e-9}) {
    Tape tape;
    TapeScope scope(&tape);
    const Tensor v({1}, {x}, true);
    tape.Backward(SmoothL1(v, d2));
    EXPECT_NEAR(tape.Gradient(v)[0], 1.0, 1e-7);
  }
}

TEST(TverskyTest, ScalarExample) {
  const double got = TverskyLoss(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {1.0}), 0.7).item();
  EXPECT_NEAR(got, 1.0 - 0.5 / (0.5 + 0.7 * 0.5 + 1e-7), 1e-15);
  EXPECT_NEAR(got, 0.411765, 5e-7);
}

TEST(TverskyTest, PerfectPredictionIsZero) {
  const Tensor onehot({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(TverskyLoss(onehot, onehot, 0.7).item(), 0.0, 1e-6);
}

TEST(TverskyTest, HalfWeightIsSoftDice) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto [p, g] = RandomSegPair(3, 10, rng);
    double dice = 3.0;
    for (int c = 0; c < 3; ++c) {
      double inter = 0, sp = 0, sg = 0;
      for (int i = 0; i < 10; ++i) {
        inter += p[c * 10 + i] * g[c * 10 + i];
        sp += p[c * 10 + i];
        sg += g[c * 10 + i];
      }
      dice -= 2 * inter / (sp + sg + 2e-7);
    }
    EXPECT_NEAR(TverskyLoss(p, g, 0.5).item(), dice, 1e-12);
  }
}

TEST(SegFocalTest, Examples) {
  EXPECT_NEAR(SegFocalLoss(Tensor({2, 1}, {0.9, 0.1}), Tensor({2, 1}, {1, 0}), 0.25, 2.0).item(), 2.634e-4, 5e-8);
  const double third = 1.0 / 3.0;
  EXPECT_NEAR(SegFocalLoss(Tensor({3, 1}, {third, third, third}), Tensor({3, 1}, {0, 1, 0}), 1.0, 0.0).item(),
              1.0986122886681098, 1e-12);
  const Tensor onehot({3, 2}, {1, 0, 0, 1, 0, 0});
  EXPECT_LT(SegFocalLoss(onehot, onehot, 0.25, 2.0).item(), 1e-5);
}

TEST(SegLossTest, LambdaZeroIsTversky) {
  Rng rng(6);
  const auto [p, g] = RandomSegPair(3, 16, rng);
  LossWeights w;
  w.lambda_seg = 0.0;
  EXPECT_EQ(SegLoss(p, g, w).item(), TverskyLoss(p, g, w.phi).item());
  const Tensor onehot({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_LT(SegLoss(onehot, onehot, LossWeights{}).item(), 1e-5);
}

TEST(SegLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const auto [unused, g] = RandomSegPair(3, 16, rng);
  const Tensor logits = RandomTensor({3, 4, 4}, rng, -2, 2);
  const Tensor g3 = Reshape(g, {3, 4, 4});
  auto f = [&](const Tensor& x) { return SegLoss(SoftmaxChannel(x), g3, LossWeights{}); };
  EXPECT_LT(GradCheck(f, logits, 1e-5), 1e-4);
}

TEST(TotalLossTest, Arithmetic) {
  LossWeights w;
  EXPECT_EQ(TotalLoss(Tensor::Scalar(2), Tensor::Scalar(3), w).item(), 5.0);
  w.alpha = 2;
  w.beta = 0.5;
  EXPECT_EQ(TotalLoss(Tensor::Scalar(1), Tensor::Scalar(4), w).item(), 4.0);
  w.beta = 0;
  EXPECT_EQ(TotalLoss(Tensor::Scalar(1.5), Tensor::Scalar(4), w).item(), 3.0);
  EXPECT_EQ(TotalLoss(Tensor::Scalar(1.5), Tensor(), w).item(), 3.0);
  EXPECT_THROW(TotalLoss(Tensor(), Tensor(), w), ValidationError);
}

TEST(LossWeightsTest, NegativeRejected) {
  LossWeights w;
  w.phi = -0.1;
  EXPECT_THROW(w.Validate(), ValidationError);
}

struct DetFixture {
  std::vector<AnchorRef> anchors;
  std::vector<LabeledBox> gts;
  std::vector<Box> boxes;
  Assignment assignment;
};

DetFixture MakeDetFixture() {
  DetFixture f;
  AnchorConfig cfg;
  cfg.levels = {3, 4};
  f.anchors = GenerateGrid(cfg, 32, 32);
  f.gts = {{{3, 4, 17, 15}, 0}, {{18, 16, 30, 31}, 0}};
  for (const LabeledBox& b : f.gts) f.boxes.push_back(b.box);
  f.assignment = Assign(f.anchors, f.boxes);
  return f;
}

Tensor PerfectRows(const DetFixture& f) {
  const size_t n = f.anchors.size();
  std::vector<double> v(n * 6, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double* row = &v[i * 6];
    if (f.assignment.labels[i] == AnchorLabel::kPositive) {
      const size_t j = static_cast<size_t>(f.assignment.gt_index[i]);
      const RawPrediction r = RegressionTarget(f.boxes[j], f.anchors[i]);
      row[0] = r.rx;
      row[1] = r.ry;
      row[2] = r.rw;
      row[3] = r.rh;
      row[4] = 30;
      row[5] = 30;
    } else {
      row[4] = -30;
      row[5] = -30;
    }
  }
  return Tensor({static_cast<int64_t>(n), 6}, v);
}

TEST(DetectionLossTest, PerfectPredictionIsNearZero) {
  const DetFixture f = MakeDetFixture();
  ASSERT_GE(f.assignment.num_positive(), 2);
  const DetectionLoss d = ComputeDetectionLoss(PerfectRows(f), f.assignment, f.gts, f.anchors, LossWeights{});
  EXPECT_LT(d.total.item(), 1e-4);
  EXPECT_EQ(d.num_positive, f.assignment.num_positive());
}

TEST(DetectionLossTest, BreakdownSumsAndScalesLinearly) {
  const DetFixture f = MakeDetFixture();
  Rng rng(12);
  const Tensor rows = RandomTensor({static_cast<int64_t>(f.anchors.size()), 6}, rng, -1, 1);
  LossWeights w;
  const DetectionLoss a = ComputeDetectionLoss(rows, f.assignment, f.gts, f.anchors, w);
  EXPECT_NEAR(a.class_term + a.obj_term + a.box_term, a.total.item(), 1e-12);
  EXPECT_EQ(a.box_term, 4.0 * a.box_loss);
  w.alpha3 *= 2;
  const DetectionLoss b = ComputeDetectionLoss(rows, f.assignment, f.gts, f.anchors, w);
  EXPECT_EQ(b.box_term, 2 * a.box_term);
  EXPECT_EQ(b.class_term, a.class_term);
  EXPECT_EQ(b.obj_term, a.obj_term);
}

TEST(DetectionLossTest, EmptyGroundTruthOnlyObjectness) {
  AnchorConfig cfg;
  cfg.levels = {3};
  const std::vector<AnchorRef> anchors = GenerateGrid(cfg, 16, 16);
  const Assignment asg = Assign(anchors, {});
  Rng rng(13);
  const Tensor rows = RandomTensor({static_cast<int64_t>(anchors.size()), 6}, rng, -1, 1);
  const DetectionLoss d = ComputeDetectionLoss(rows, asg, {}, anchors, LossWeights{});
  EXPECT_EQ(d.box_loss, 0.0);
  EXPECT_EQ(d.class_loss, 0.0);
  EXPECT_GT(d.obj_loss, 0.0);
  EXPECT_NEAR(d.total.item(), d.obj_loss, 1e-15);
}

TEST(DetectionLossTest, GradientMatchesFiniteDifferences) {
  const DetFixture f = MakeDetFixture();
  Rng rng(14);
  const Tensor rows = RandomTensor({static_cast<int64_t>(f.anchors.size()), 6}, rng, -1.5, 1.5);
  auto loss = [&](const Tensor& x) {
    return ComputeDetectionLoss(x, f.assignment, f.gts, f.anchors, LossWeights{}).total;
  };
  EXPECT_LT(GradCheck(loss, rows, 1e-5), 1e-4);
}

TEST(LossPropertyTest, NonNegativeAndGradientsCheck) {
  Rng rng(15);
  for (int t = 0; t < 10; ++t) {
    const Tensor logits = RandomTensor({5}, rng, -3, 3);
    std::vector<double> tv(5);
    for (double& x : tv) x = static_cast<double>(rng.UniformInt(2));
    const Tensor target({5}, tv);
    auto focal = [&](const Tensor& x) { return FocalLoss(Sigmoid(x), target, 0.25, 2.0); };
    EXPECT_GE(focal(logits).item(), 0.0);
    EXPECT_LT(GradCheck(focal, logits, 1e-5), 1e-4);

    const Tensor x = RandomTensor({5}, rng, 0.0, 0.5);
    auto sl1 = [](const Tensor& v) { return SmoothL1(v, 1.0 / 9.0); };
    EXPECT_GE(sl1(x).item(), 0.0);
    EXPECT_LT(GradCheck(sl1, x, 1e-5), 1e-4);

    const auto [p, g] = RandomSegPair(3, 6, rng);
    const Tensor seg_logits = RandomTensor({3, 6}, rng, -2, 2);
    auto tv_loss = [&](const Tensor& v) { return TverskyLoss(SoftmaxChannel(v), g, 0.7); };
    auto sf_loss = [&](const Tensor& v) { return SegFocalLoss(SoftmaxChannel(v), g, 0.25, 2.0); };
    EXPECT_GE(TverskyLoss(p, g, 0.7).item(), 0.0);
    EXPECT_GE(SegFocalLoss(p, g, 0.25, 2.0).item(), 0.0);
    EXPECT_LT(GradCheck(tv_loss, seg_logits, 1e-5), 1e-4);
    EXPECT_LT(GradCheck(sf_loss, seg_logits, 1e-5), 1e-4);
  }
}

TEST(OneHotTest, EncodesAndRejectsOutOfRange) {
  const std::vector<uint8_t> mask = {0, 2, 1, 0};
  const Tensor t = OneHot(mask, 3, 2, 2);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(t[0], 1.0);
  EXPECT_EQ(t[4 + 2], 1.0);
  EXPECT_EQ(t[8 + 1], 1.0);
  EXPECT_EQ(ReduceSum(t).item(), 4.0);
  const std::vector<uint8_t> bad = {0, 3, 1, 0};
  EXPECT_THROW(OneHot(bad, 3, 2, 2), ValidationError);
}

}  // namespace
}  // namespace hnk
