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

#ifndef HNK_ASSIGN_H_
#define HNK_ASSIGN_H_

#include <cstdint>
#include <span>
#include <vector>

#include "hnk/geometry.h"

namespace hnk {

enum class AnchorLabel : int8_t { kNegative = 0, kIgnore = 1, kPositive = 2 };

struct AssignmentRules {
  // IoU needed for a positive, split by ground-truth area.
  double large_threshold = 0.5;
  double small_threshold = 0.25;
  double small_area = 100.0;  // px^2; areas <= this use small_threshold
  // max-IoU below this is a negative; between it and the positive threshold
  // the anchor is ignored.
  double negative_floor = 0.25;
  // An anchor whose cell does not hold the center of its best-IoU ground
  // truth cannot regress onto it. When set such anchors are negatives
  // whatever their IoU, instead of falling in the ignore band.
  bool unowned_negative = true;
};

struct Assignment {
  std::vector<AnchorLabel> labels;
  // Ground-truth index for positives, -1 otherwise.
  std::vector<int64_t> gt_index;
  std::vector<double> max_iou;

  int64_t num_positive() const;
};

// True when the center of `gt` falls in the anchor's cell, i.e. the grid
// offset lies in [0, 1) on both axes.
bool CellOwns(const AnchorRef& anchor, const Box& gt);

// Labels every anchor against the ground truths.
//
// An anchor takes the ground truth with the highest IoU (ties: lower gt
// index). It is positive when that IoU reaches the area-dependent threshold
// and its cell owns the ground-truth center, negative when the IoU is below
// negative_floor, and ignored otherwise. Then every ground truth, visited by
// descending best IoU (ties: lower gt index), forces its best owning anchor
// (ties: lower anchor index) to positive, skipping anchors already forced by
// an earlier ground truth. No ground truths: all negative.
Assignment Assign(std::span<const AnchorRef> anchors, std::span<const Box> gts,
                  const AssignmentRules& rules = {});

}  // namespace hnk

#endif  // HNK_ASSIGN_H_
