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

#include "hnk/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "hnk/errors.h"
#include "hnk/rng.h"
#include "hnk/scene.h"

namespace hnk {
namespace {

// Brute-force AP: rank, match greedily, then for every recall step take the
// best precision at that recall or beyond by scanning all later ranks.
std::pair<double, double> ApOracle(const std::vector<ImageDetections>& images, double floor) {
  struct Ref {
    size_t img, box;
    double score;
  };
  std::vector<Ref> refs;
  size_t num_gt = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    num_gt += images[i].ground_truth.size();
    for (size_t b = 0; b < images[i].predictions.size(); ++b) {
      if (images[i].predictions[b].score >= floor) refs.push_back({i, b, images[i].predictions[b].score});
    }
  }
  std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.img != b.img) return a.img < b.img;
    return a.box < b.box;
  });
  std::vector<std::vector<bool>> used(images.size());
  for (size_t i = 0; i < images.size(); ++i) used[i].assign(images[i].ground_truth.size(), false);
  std::vector<double> prec, rec;
  int tp = 0;
  for (size_t k = 0; k < refs.size(); ++k) {
    const ImageDetections& im = images[refs[k].img];
    int best = -1;
    double best_iou = 0.5 - 1e-15;
    for (size_t g = 0; g < im.ground_truth.size(); ++g) {
      const double iou = Iou(im.predictions[refs[k].box].box, im.ground_truth[g]);
      if (!used[refs[k].img][g] && iou > best_iou) best_iou = iou, best = static_cast<int>(g);
    }
    if (best >= 0) {
      used[refs[k].img][static_cast<size_t>(best)] = true;
      ++tp;
    }
    prec.push_back(tp / static_cast<double>(k + 1));
    rec.push_back(tp / static_cast<double>(num_gt));
  }
  double ap = 0.0, prev = 0.0;
  for (size_t k = 0; k < rec.size(); ++k) {
    if (rec[k] <= prev) continue;
    double env = 0.0;
    for (size_t j = k; j < rec.size(); ++j) env = std::max(env, prec[j]);
    ap += (rec[k] - prev) * env;
    prev = rec[k];
  }
  return {ap, tp / static_cast<double>(num_gt)};
}

TEST(ApTest, ExactCopiesScoreOne) {
  std::vector<ImageDetections> images(2);
  images[0].ground_truth = {{0, 0, 10, 10}, {20, 20, 30, 30}};
  images[1].ground_truth = {{5, 5, 9, 9}};
  for (ImageDetections& im : images) {
    for (const Box& b : im.ground_truth) im.predictions.push_back({b, 0.9});
  }
  const ApResult r = AveragePrecision(images);
  EXPECT_TRUE(r.defined);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
}

TEST(ApTest, HandComputedEnvelope) {
  std::vector<ImageDetections> images(1);
  images[0].ground_truth = {{0, 0, 10, 10}, {20, 20, 30, 30}};
  images[0].predictions = {{{0, 0, 10, 10}, 0.9}, {{50, 50, 60, 60}, 0.8}, {{20, 20, 30, 30}, 0.7}};
  const ApResult r = AveragePrecision(images);
  EXPECT_NEAR(r.ap, 0.5 * 1.0 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.ap, 0.8333, 5e-5);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_EQ(r.true_positives, 2);
}

TEST(ApTest, NoPredictionsAndNoGroundTruth) {
  std::vector<ImageDetections> images(1);
  images[0].ground_truth = {{0, 0, 1, 1}};
  const ApResult r = AveragePrecision(images);
  EXPECT_TRUE(r.defined);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  std::vector<ImageDetections> empty(1);
  empty[0].predictions = {{{0, 0, 1, 1}, 0.5}};
  EXPECT_FALSE(AveragePrecision(empty).defined);
}

TEST(ApTest, ConfidenceFloorDropsPredictions) {
  std::vector<ImageDetections> images(1);
  images[0].ground_truth = {{0, 0, 10, 10}};
  images[0].predictions = {{{0, 0, 10, 10}, 0.0005}};
  const ApResult r = AveragePrecision(images);
  EXPECT_EQ(r.num_predictions, 0);
  EXPECT_EQ(r.ap, 0.0);
}

TEST(ApTest, MatchesOracleAndIsRankOnly) {
  Rng rng(51);
  for (int t = 0; t < 300; ++t) {
    std::vector<ImageDetections> images(static_cast<size_t>(rng.UniformInt(1, 3)));
    for (ImageDetections& im : images) {
      const int g = static_cast<int>(rng.UniformInt(0, 3)), p = static_cast<int>(rng.UniformInt(0, 5));
      for (int i = 0; i < g; ++i) {
        const double x = rng.UniformInt(0, 20), y = rng.UniformInt(0, 20);
        im.ground_truth.push_back({x, y, x + rng.UniformInt(4, 10), y + rng.UniformInt(4, 10)});
      }
      for (int i = 0; i < p; ++i) {
        const double x = rng.UniformInt(0, 20), y = rng.UniformInt(0, 20);
        im.predictions.push_back({{x, y, x + rng.UniformInt(4, 10), y + rng.UniformInt(4, 10)},
                                  static_cast<double>(rng.UniformInt(1, 6)) / 6.0});
      }
    }
    const ApResult r = AveragePrecision(images);
    size_t gts = 0;
    for (const ImageDetections& im : images) gts += im.ground_truth.size();
    if (gts == 0) {
      EXPECT_FALSE(r.defined);
      continue;
    }
    const auto [ap, recall] = ApOracle(images, kDefaultConfFloor);
    EXPECT_NEAR(r.ap, ap, 1e-12) << "instance " << t;
    EXPECT_NEAR(r.recall, recall, 1e-12) << "instance " << t;

    std::vector<ImageDetections> squashed = images;
    for (ImageDetections& im : squashed) {
      for (ScoredBox& p : im.predictions) p.score = 0.5 + 0.4 * std::tanh(3 * p.score);
    }
    EXPECT_EQ(AveragePrecision(squashed).ap, r.ap);
  }
}

TEST(Map50Test, DefinedOnlyMean) {
  ApResult a{true, 1.0}, b{true, 0.5}, none{false, 0.0};
  EXPECT_EQ(Map50(std::vector<ApResult>{a, b}), 0.75);
  ApResult c{true, 0.8};
  EXPECT_EQ(Map50(std::vector<ApResult>{c, none}), 0.8);
  EXPECT_EQ(Map50(std::vector<ApResult>{c}), 0.8);
  EXPECT_THROW(Map50(std::vector<ApResult>{none}), ValidationError);
}

TEST(ConfusionTest, HandExample) {
  const std::vector<uint8_t> gt = {0, 1, 0, 1}, pred = {0, 0, 0, 1};
  ConfusionMatrix m;
  m.Accumulate(pred, gt);
  EXPECT_EQ(m.at(0, 0), 2);
  EXPECT_EQ(m.at(1, 0), 1);
  EXPECT_EQ(m.at(1, 1), 1);
  EXPECT_EQ(m.total(), 4);
  const auto iou = IouPerClass(m);
  EXPECT_NEAR(*iou[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*iou[1], 0.5, 1e-15);
  EXPECT_FALSE(iou[2].has_value());
  EXPECT_NEAR(MeanIou(m), 7.0 / 12.0, 1e-15);
}

TEST(ConfusionTest, IdenticalDisjointAndRejects) {
  const std::vector<uint8_t> a = {0, 1, 2, 2, 1};
  ConfusionMatrix m;
  m.Accumulate(a, a);
  EXPECT_EQ(MeanIou(m), 1.0);
  ConfusionMatrix d;
  d.Accumulate(std::vector<uint8_t>{0, 0, 1, 1}, std::vector<uint8_t>{1, 1, 0, 0});
  EXPECT_EQ(*IouPerClass(d)[1], 0.0);
  EXPECT_THROW(m.Accumulate(std::vector<uint8_t>{0}, std::vector<uint8_t>{0, 1}), ValidationError);
  EXPECT_THROW(m.Accumulate(std::vector<uint8_t>{3}, std::vector<uint8_t>{0}), ValidationError);
}

TEST(ConfusionTest, PermutationAndOrderInvariance) {
  Rng rng(61);
  std::vector<std::vector<uint8_t>> preds, gts;
  for (int i = 0; i < 6; ++i) {
    std::vector<uint8_t> p(50), g(50);
    for (auto& v : p) v = static_cast<uint8_t>(rng.UniformInt(3));
    for (auto& v : g) v = static_cast<uint8_t>(rng.UniformInt(3));
    preds.push_back(p);
    gts.push_back(g);
  }
  ConfusionMatrix forward, permuted;
  const uint8_t perm[3] = {2, 0, 1};
  for (size_t i = 0; i < preds.size(); ++i) {
    forward.Accumulate(preds[i], gts[i]);
    std::vector<uint8_t> p = preds[i], g = gts[i];
    for (auto& v : p) v = perm[v];
    for (auto& v : g) v = perm[v];
    permuted.Accumulate(p, g);
  }
  EXPECT_NEAR(MeanIou(forward), MeanIou(permuted), 1e-15);

  std::vector<ConfusionMatrix> parts;
  for (size_t i = 0; i < preds.size(); ++i) {
    ConfusionMatrix m;
    m.Accumulate(preds[i], gts[i]);
    parts.push_back(m);
  }
  ConfusionMatrix reversed;
  for (size_t i = parts.size(); i-- > 0;) reversed.Add(parts[i]);
  EXPECT_EQ(reversed, forward);
}

TEST(LaneTest, Examples) {
  std::vector<uint8_t> gt(20, 0);
  std::fill(gt.begin(), gt.begin() + 10, kLane);
  EXPECT_EQ(LaneAccuracy(gt, gt), 1.0);
  std::vector<uint8_t> half = gt;
  std::fill(half.begin(), half.begin() + 5, 1);
  EXPECT_EQ(LaneAccuracy(half, gt), 0.5);
  const std::vector<uint8_t> none(20, 0);
  EXPECT_EQ(LaneAccuracy(none, none), 1.0);
  EXPECT_EQ(LaneAccuracy(gt, none), 0.0);
}

TEST(LaneTest, PixelWeightedAggregate) {
  std::vector<uint8_t> gt_a(10, kLane), gt_b(30, kLane), pred_b(30, kLane);
  std::fill(pred_b.begin(), pred_b.begin() + 15, 0);
  LaneTally tally;
  tally.Add(gt_a, gt_a);
  tally.Add(pred_b, gt_b);
  // Images without lanes do not enter the pixel aggregate.
  tally.Add(std::vector<uint8_t>(5, kLane), std::vector<uint8_t>(5, 0));
  EXPECT_DOUBLE_EQ(tally.Accuracy(), 25.0 / 40.0);
  EXPECT_DOUBLE_EQ(tally.Accuracy(), 0.625);

  LaneTally empty;
  empty.Add(std::vector<uint8_t>(5, 0), std::vector<uint8_t>(5, 0));
  EXPECT_EQ(empty.Accuracy(), 1.0);
  empty.Add(std::vector<uint8_t>(5, kLane), std::vector<uint8_t>(5, 0));
  EXPECT_EQ(empty.Accuracy(), 0.0);
}

TEST(ReportTest, JsonFields) {
  EvalReport r;
  ApResult ap;
  ap.defined = true;
  ap.ap = 0.9;
  ap.recall = 0.95;
  ap.num_gt = 20;
  ap.true_positives = 19;
  r.per_class = {ap};
  FinishDetectionMetrics(r);
  r.confusion.Accumulate(std::vector<uint8_t>{0, 1, 2}, std::vector<uint8_t>{0, 1, 2});
  const nlohmann::json j = r.ToJson();
  EXPECT_EQ(j.at("map50").get<double>(), 0.9);
  EXPECT_EQ(j.at("recall").get<double>(), 0.95);
  EXPECT_EQ(j.at("miou").get<double>(), 1.0);
  EXPECT_TRUE(j.at("iou").contains("background"));
  EXPECT_TRUE(j.at("iou").contains("drivable"));
  EXPECT_TRUE(j.at("iou").contains("lane"));
  EXPECT_TRUE(j.contains("lane_accuracy"));
  EXPECT_TRUE(j.contains("counts"));
}

}  // namespace
}  // namespace hnk
