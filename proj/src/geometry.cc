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
#include <string>

#include "hnk/errors.h"

namespace hnk {
namespace {

constexpr double kMaxLogSize = 40.0;

double Sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Box AnchorRef::PixelBox() const {
  return Box::FromCenter((cx + 0.5) * stride, (cy + 0.5) * stride, cw * stride, ch * stride);
}

double Iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double Logit(double p) { return std::log(p / (1.0 - p)); }

Box Decode(const RawPrediction& r, const AnchorRef& a) {
  if (!std::isfinite(r.rx) || !std::isfinite(r.ry) || !std::isfinite(r.rw) || !std::isfinite(r.rh)) {
    throw ValidationError("decode: non-finite prediction");
  }
  if (std::abs(r.rw) > kMaxLogSize || std::abs(r.rh) > kMaxLogSize) {
    throw ValidationError("decode: degenerate prediction, |log-size| exceeds 40");
  }
  const double cx = (Sigmoid(r.rx) + a.cx) * a.stride;
  const double cy = (Sigmoid(r.ry) + a.cy) * a.stride;
  const double w = a.cw * std::exp(r.rw) * a.stride;
  const double h = a.ch * std::exp(r.rh) * a.stride;
  return Box::FromCenter(cx, cy, w, h);
}

RawPrediction Encode(const Box& gt, const AnchorRef& a) {
  const double ox = gt.center_x() / a.stride - a.cx;
  const double oy = gt.center_y() / a.stride - a.cy;
  if (!(ox > 0.0 && ox < 1.0 && oy > 0.0 && oy < 1.0)) {
    throw ValidationError("encode: anchor cell does not own this ground truth (offset " +
                          std::to_string(ox) + ", " + std::to_string(oy) + ")");
  }
  if (!(gt.width() > 0.0 && gt.height() > 0.0)) {
    throw ValidationError("encode: ground truth must have positive size");
  }
  return {Logit(ox), Logit(oy), std::log(gt.width() / (a.stride * a.cw)),
          std::log(gt.height() / (a.stride * a.ch))};
}

std::vector<int64_t> Nms(std::span<const Box> boxes, std::span<const double> scores,
                         double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw ValidationError("nms: " + std::to_string(boxes.size()) + " boxes but " +
                          std::to_string(scores.size()) + " scores");
  }
  std::vector<int64_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
  std::vector<int64_t> kept;
  for (int64_t i : order) {
    const Box& candidate = boxes[static_cast<size_t>(i)];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](int64_t k) {
      return Iou(boxes[static_cast<size_t>(k)], candidate) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace hnk
