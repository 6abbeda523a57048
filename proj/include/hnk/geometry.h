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

#ifndef HNK_GEOMETRY_H_
#define HNK_GEOMETRY_H_

#include <cstdint>
#include <span>
#include <vector>

namespace hnk {

// Axis-aligned rectangle in corner form, image pixels.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 >= x1 && y2 >= y1; }

  static Box FromCenter(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// Ground-truth box with its detection class id.
struct LabeledBox {
  Box box;
  int class_id = 0;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

// Unitless regression outputs for one anchor.
struct RawPrediction {
  double rx = 0.0;
  double ry = 0.0;
  double rw = 0.0;
  double rh = 0.0;
};

// One anchor of the pyramid grid. (cx, cy) is the top-left corner of the
// owning cell and (cw, ch) the anchor size, all in grid units of `level`;
// one grid unit is `stride` = 2^level pixels.
struct AnchorRef {
  double cx = 0.0;
  double cy = 0.0;
  double cw = 1.0;
  double ch = 1.0;
  int level = 0;
  double stride = 1.0;

  // The anchor rectangle itself: centered in its cell, in pixels.
  Box PixelBox() const;
};

double Iou(const Box& a, const Box& b);

double Logit(double p);

// b_c = (sigmoid(r_xy) + c_xy) * stride, b_wh = c_wh * exp(r_wh) * stride.
// Throws ValidationError when |r_w| or |r_h| exceeds 40.
Box Decode(const RawPrediction& r, const AnchorRef& a);

// Inverse of Decode. The ground-truth center must lie strictly inside the
// anchor's cell (offset in (0, 1) on both axes) and the box must have positive
// size; otherwise ValidationError.
RawPrediction Encode(const Box& gt, const AnchorRef& a);

// Greedy non-maximum suppression. Visits boxes by descending score (equal
// scores: lower index first) and drops any box whose IoU with an already kept
// box exceeds iou_threshold. Returns kept indices in visiting order.
std::vector<int64_t> Nms(std::span<const Box> boxes, std::span<const double> scores,
                         double iou_threshold);

}  // namespace hnk

#endif  // HNK_GEOMETRY_H_
