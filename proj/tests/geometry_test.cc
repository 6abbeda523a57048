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

#include "hnk/geometry.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "hnk/errors.h"
#include "hnk/rng.h"

namespace hnk {
namespace {

// Counts sub-pixel samples on a fine raster; no shared code with Iou().
double RasterIou(const Box& a, const Box& b, int per_unit) {
  const double lo_x = std::min(a.x1, b.x1), hi_x = std::max(a.x2, b.x2);
  const double lo_y = std::min(a.y1, b.y1), hi_y = std::max(a.y2, b.y2);
  const double step = 1.0 / per_unit;
  int64_t inter = 0, uni = 0;
  for (double y = lo_y + step / 2; y < hi_y; y += step) {
    for (double x = lo_x + step / 2; x < hi_x; x += step) {
      const bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Greedy suppression is the unique subset S where, in visiting order, a box
// is in S iff no earlier member of S overlaps it above the threshold. Search
// every subset and return the one that satisfies this.
std::vector<int64_t> SubsetNmsOracle(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                     double thr) {
  const int n = static_cast<int>(boxes.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t i, int64_t j) { return scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(j)]; });
  std::vector<int64_t> found;
  int matches = 0;
  for (uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (size_t p = 0; p < order.size() && ok; ++p) {
      const int64_t i = order[p];
      bool suppressed = false;
      for (size_t q = 0; q < p; ++q) {
        const int64_t j = order[q];
        if ((mask >> j) & 1u && Iou(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(j)]) > thr) {
          suppressed = true;
        }
      }
      ok = (((mask >> i) & 1u) != 0) == !suppressed;
    }
    if (!ok) continue;
    ++matches;
    found.clear();
    for (int64_t i : order) {
      if ((mask >> i) & 1u) found.push_back(i);
    }
  }
  EXPECT_EQ(matches, 1);
  return found;
}

TEST(IouTest, IdenticalAndDisjoint) {
  const Box a{1, 2, 5, 9};
  EXPECT_EQ(Iou(a, a), 1.0);
  EXPECT_EQ(Iou(a, Box{6, 2, 8, 9}), 0.0);
  EXPECT_EQ(Iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(IouTest, OverlappingSquaresMatchRaster) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(RasterIou(a, b, 64), 1.0 / 7.0, 1e-12);
  // Frozen: 0.142857...
  EXPECT_NEAR(Iou(a, b), 0.14285714285714285, 1e-15);
}

TEST(IouTest, SymmetricAndAgreesWithRaster) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    auto make = [&] {
      const double x = rng.UniformInt(0, 8), y = rng.UniformInt(0, 8);
      return Box{x, y, x + rng.UniformInt(1, 6), y + rng.UniformInt(1, 6)};
    };
    const Box a = make(), b = make();
    EXPECT_EQ(Iou(a, b), Iou(b, a));
    EXPECT_NEAR(Iou(a, b), RasterIou(a, b, 4), 1e-12);
    EXPECT_GE(Iou(a, b), 0.0);
    EXPECT_LE(Iou(a, b), 1.0);
    if (!(a == b)) {
      EXPECT_LT(Iou(a, b), 1.0);
    }
  }
}

TEST(CodecTest, DecodeZeroOffsets) {
  const AnchorRef a{3, 2, 4, 2, 3, 8};
  const Box b = Decode({0, 0, 0, 0}, a);
  EXPECT_DOUBLE_EQ(b.center_x(), 28.0);
  EXPECT_DOUBLE_EQ(b.center_y(), 20.0);
  EXPECT_DOUBLE_EQ(b.width(), 32.0);
  EXPECT_DOUBLE_EQ(b.height(), 16.0);
  EXPECT_NEAR(Decode({0, 0, std::log(2.0), 0}, a).width(), 64.0, 1e-12);
}

TEST(CodecTest, DecodeRejectsDegenerate) {
  const AnchorRef a{0, 0, 1, 1, 3, 8};
  EXPECT_THROW(Decode({0, 0, 40.5, 0}, a), ValidationError);
  EXPECT_THROW(Decode({0, 0, 0, -41}, a), ValidationError);
  EXPECT_NO_THROW(Decode({0, 0, 40, 0}, a));
}

TEST(CodecTest, EncodeExamples) {
  const AnchorRef a{3, 2, 4, 2, 3, 8};
  const RawPrediction zero = Encode(Box::FromCenter(28, 20, 32, 16), a);
  EXPECT_NEAR(zero.rx, 0.0, 1e-12);
  EXPECT_NEAR(zero.ry, 0.0, 1e-12);
  EXPECT_NEAR(zero.rw, 0.0, 1e-12);
  EXPECT_NEAR(zero.rh, 0.0, 1e-12);
  EXPECT_NEAR(Encode(Box::FromCenter(28, 20, 64, 16), a).rw, 0.69314718055994531, 1e-12);
  const RawPrediction r = Encode(Box::FromCenter((3 + 0.9) * 8, 20, 32, 16), a);
  EXPECT_NEAR(r.rx, 2.1972245773362196, 1e-9);
  EXPECT_NEAR(Logit(0.9), 2.1972245773362196, 1e-15);
}

TEST(CodecTest, EncodeRejectsForeignCenter) {
  const AnchorRef a{3, 2, 4, 2, 3, 8};
  EXPECT_THROW(Encode(Box::FromCenter(24, 20, 8, 8), a), ValidationError);  // offset exactly 0
  EXPECT_THROW(Encode(Box::FromCenter(40, 20, 8, 8), a), ValidationError);
  EXPECT_THROW(Encode(Box{25, 17, 25, 20}, a), ValidationError);
}

TEST(CodecTest, RoundTrip) {
  Rng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int level = static_cast<int>(rng.UniformInt(3, 7));
    const double stride = std::ldexp(1.0, level);
    const AnchorRef a{static_cast<double>(rng.UniformInt(0, 20)), static_cast<double>(rng.UniformInt(0, 20)),
                      rng.Uniform(0.5, 8), rng.Uniform(0.5, 8), level, stride};
    const double ox = rng.Uniform(0.01, 0.99), oy = rng.Uniform(0.01, 0.99);
    const Box gt = Box::FromCenter((a.cx + ox) * stride, (a.cy + oy) * stride, rng.Uniform(2, 300), rng.Uniform(2, 300));
    const Box back = Decode(Encode(gt, a), a);
    worst = std::max({worst, std::abs(back.x1 - gt.x1), std::abs(back.y1 - gt.y1), std::abs(back.x2 - gt.x2),
                      std::abs(back.y2 - gt.y2)});
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(NmsTest, SingleBox) {
  const std::vector<Box> boxes = {{0, 0, 1, 1}};
  const std::vector<double> scores = {0.3};
  EXPECT_EQ(Nms(boxes, scores, 0.6), (std::vector<int64_t>{0}));
}

TEST(NmsTest, SuppressesOverlapKeepsDisjoint) {
  // B overlaps A with IoU 0.8.
  const std::vector<Box> boxes = {{0, 0, 10, 10}, {0, 0, 10, 8}, {20, 20, 30, 30}};
  ASSERT_NEAR(Iou(boxes[0], boxes[1]), 0.8, 1e-12);
  const std::vector<double> scores = {0.9, 0.7, 0.5};
  EXPECT_EQ(Nms(boxes, scores, 0.6), (std::vector<int64_t>{0, 2}));
  EXPECT_EQ(SubsetNmsOracle(boxes, scores, 0.6), (std::vector<int64_t>{0, 2}));
}

TEST(NmsTest, NoOverlapKeepsAllByScore) {
  const std::vector<Box> boxes = {{0, 0, 1, 1}, {2, 0, 3, 1}, {4, 0, 5, 1}};
  const std::vector<double> scores = {0.2, 0.9, 0.5};
  EXPECT_EQ(Nms(boxes, scores, 0.6), (std::vector<int64_t>{1, 2, 0}));
}

TEST(NmsTest, TiesVisitLowerIndexFirst) {
  const std::vector<Box> boxes = {{0, 0, 10, 10}, {0, 0, 10, 10}};
  const std::vector<double> scores = {0.5, 0.5};
  EXPECT_EQ(Nms(boxes, scores, 0.6), (std::vector<int64_t>{0}));
}

TEST(NmsTest, MatchesSubsetOracle) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const int n = static_cast<int>(rng.UniformInt(1, 8));
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      const double x = rng.UniformInt(0, 6), y = rng.UniformInt(0, 6);
      boxes.push_back({x, y, x + rng.UniformInt(2, 6), y + rng.UniformInt(2, 6)});
      scores.push_back(static_cast<double>(rng.UniformInt(1, 5)) / 5.0);  // coarse, so ties happen
    }
    const double thr = rng.Uniform(0.1, 0.7);
    const std::vector<int64_t> kept = Nms(boxes, scores, thr);
    EXPECT_EQ(kept, SubsetNmsOracle(boxes, scores, thr));
    for (size_t i = 1; i < kept.size(); ++i) {
      const double prev = scores[static_cast<size_t>(kept[i - 1])], cur = scores[static_cast<size_t>(kept[i])];
      EXPECT_TRUE(prev > cur || (prev == cur && kept[i - 1] < kept[i]));
    }
  }
}

TEST(NmsTest, LengthMismatchRejected) {
  const std::vector<Box> boxes = {{0, 0, 1, 1}};
  const std::vector<double> scores = {0.1, 0.2};
  EXPECT_THROW(Nms(boxes, scores, 0.5), ValidationError);
}

}  // namespace
}  // namespace hnk
