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

#ifndef HNK_LOSSES_H_
#define HNK_LOSSES_H_

#include <cstdint>
#include <span>
#include <vector>

#include "hnk/anchors.h"
#include "hnk/assign.h"
#include "hnk/geometry.h"
#include "hnk/tensor.h"

namespace hnk {

struct LossWeights {
  double alpha = 1.0;   // detection term of the total loss
  double beta = 1.0;    // segmentation term of the total loss
  double alpha1 = 1.0;  // classification
  double alpha2 = 1.0;  // objectness
  double alpha3 = 4.0;  // box regression
  double lambda_seg = 1.0;
  double phi = 0.7;  // Tversky false-negative weight; false positives get 1 - phi
  double gamma_focal = 2.0;
  double alpha_focal = 0.25;
  double delta2 = 1.0 / 9.0;  // smooth-L1 transition; the quadratic gain is 0.5 / delta2

  void Validate() const;
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kTverskyGuard = 1e-7;

// Mean over elements of -a_t (1 - p_t)^gamma log(p_t). `target` holds 0/1
// labels shaped like pred_prob; probabilities are clamped to
// [1e-7, 1 - 1e-7] first.
Tensor FocalLoss(const Tensor& pred_prob, const Tensor& target, double alpha_focal, double gamma_focal);

// Mean of 0.5/delta2 * x^2 for x < delta2, else x - delta2/2. x >= 0.
Tensor SmoothL1(const Tensor& x, double delta2);

// Row-wise sum of absolute differences, (P, 4) x (P, 4) -> (P). `target` is
// treated as a constant.
Tensor BoxResidual(const Tensor& pred, const Tensor& target);

// C - sum_c TP_c / (TP_c + phi FN_c + (1 - phi) FP_c + 1e-7) over soft counts.
// pred_prob and gt_onehot are (C, ...) with the class on axis 0.
Tensor TverskyLoss(const Tensor& pred_prob, const Tensor& gt_onehot, double phi);

// -alpha / N sum_c sum_n g_n(c) (1 - p_n(c))^gamma log p_n(c), N = pixels.
Tensor SegFocalLoss(const Tensor& pred_prob, const Tensor& gt_onehot, double alpha_focal, double gamma_focal);

// Tversky + lambda_seg * focal.
Tensor SegLoss(const Tensor& pred_prob, const Tensor& gt_onehot, const LossWeights& w);

// alpha * det + beta * seg. An undefined term counts as zero and at least one
// term must be defined.
Tensor TotalLoss(const Tensor& det, const Tensor& seg, const LossWeights& w);

struct DetectionLoss {
  Tensor total;
  // Raw terms before the alpha1..3 weights.
  double class_loss = 0.0;
  double obj_loss = 0.0;
  double box_loss = 0.0;
  // Weighted contributions; they sum to total.
  double class_term = 0.0;
  double obj_term = 0.0;
  double box_term = 0.0;
  int64_t num_positive = 0;
};

// Columns of a detection row: r_x, r_y, r_w, r_h, objectness logit, then one
// logit per class.
inline constexpr int64_t kBoxColumns = 4;
inline constexpr int64_t kObjColumn = 4;
inline constexpr int64_t kClassColumn = 5;

// Regression target for a positive anchor. Centers on a cell edge are pulled
// 1e-3 grid units inside so the target stays finite.
RawPrediction RegressionTarget(const Box& gt, const AnchorRef& anchor);

// Detection loss over per-anchor rows (num_anchors, 5 + num_classes).
// L_box: smooth L1 of the summed |r - target| over positives; L_obj: focal
// over non-ignored anchors; L_class: focal over positive anchors' class
// probabilities against one-hot targets.
DetectionLoss ComputeDetectionLoss(const Tensor& det_raw, const Assignment& assignment,
                                   std::span<const LabeledBox> gts, std::span<const AnchorRef> anchors,
                                   const LossWeights& w);

// (C, H, W) one-hot encoding of a class mask with values in [0, C).
Tensor OneHot(std::span<const uint8_t> mask, int64_t num_classes, int64_t height, int64_t width);

}  // namespace hnk

#endif  // HNK_LOSSES_H_
