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

#include "hnk/assign.h"

#include <algorithm>
#include <numeric>

#include "hnk/errors.h"

namespace hnk {

int64_t Assignment::num_positive() const {
  return std::count(labels.begin(), labels.end(), AnchorLabel::kPositive);
}

bool CellOwns(const AnchorRef& anchor, const Box& gt) {
  const double ox = gt.center_x() / anchor.stride - anchor.cx;
  const double oy = gt.center_y() / anchor.stride - anchor.cy;
  return ox >= 0.0 && ox < 1.0 && oy >= 0.0 && oy < 1.0;
}

Assignment Assign(std::span<const AnchorRef> anchors, std::span<const Box> gts,
                  const AssignmentRules& rules) {
  const size_t n = anchors.size(), g = gts.size();
  for (const Box& b : gts) {
    if (!b.valid()) throw ValidationError("assign: ground-truth box has x2 < x1 or y2 < y1");
  }
  Assignment out;
  out.labels.assign(n, AnchorLabel::kNegative);
  out.gt_index.assign(n, -1);
  out.max_iou.assign(n, 0.0);
  if (g == 0) return out;

  std::vector<Box> anchor_boxes(n);
  for (size_t i = 0; i < n; ++i) anchor_boxes[i] = anchors[i].PixelBox();
  auto threshold = [&](size_t j) {
    return gts[j].area() > rules.small_area ? rules.large_threshold : rules.small_threshold;
  };

  // Per ground truth: best owning anchor and its IoU.
  std::vector<double> gt_best_iou(g, -1.0);
  std::vector<int64_t> gt_best_anchor(g, -1);
  for (size_t i = 0; i < n; ++i) {
    int64_t best_gt = -1;
    double best = -1.0;
    for (size_t j = 0; j < g; ++j) {
      const double iou = Iou(anchor_boxes[i], gts[j]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int64_t>(j);
      }
      if (iou > gt_best_iou[j] && CellOwns(anchors[i], gts[j])) {
        gt_best_iou[j] = iou;
        gt_best_anchor[j] = static_cast<int64_t>(i);
      }
    }
    out.max_iou[i] = best;
    const size_t j = static_cast<size_t>(best_gt);
    const bool owns = CellOwns(anchors[i], gts[j]);
    if (best >= threshold(j) && owns) {
      out.labels[i] = AnchorLabel::kPositive;
      out.gt_index[i] = best_gt;
    } else if (best < rules.negative_floor || (!owns && rules.unowned_negative)) {
      out.labels[i] = AnchorLabel::kNegative;
    } else {
      out.labels[i] = AnchorLabel::kIgnore;
    }
  }

  std::vector<size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return gt_best_iou[a] > gt_best_iou[b]; });
  std::vector<bool> forced(n, false);
  for (size_t j : order) {
    int64_t pick = -1;
    double best = -1.0;
    if (gt_best_anchor[j] >= 0 && !forced[static_cast<size_t>(gt_best_anchor[j])]) {
      pick = gt_best_anchor[j];
    } else {
      for (size_t i = 0; i < n; ++i) {
        if (forced[i] || !CellOwns(anchors[i], gts[j])) continue;
        const double iou = Iou(anchor_boxes[i], gts[j]);
        if (iou > best) {
          best = iou;
          pick = static_cast<int64_t>(i);
        }
      }
    }
    if (pick < 0) continue;  // center outside the anchor grid
    forced[static_cast<size_t>(pick)] = true;
    out.labels[static_cast<size_t>(pick)] = AnchorLabel::kPositive;
    out.gt_index[static_cast<size_t>(pick)] = static_cast<int64_t>(j);
  }
  return out;
}

}  // namespace hnk
