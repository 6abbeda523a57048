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

#ifndef HNK_METRICS_H_
#define HNK_METRICS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnk/geometry.h"
#include "json.hpp"

namespace hnk {

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// Predictions and ground truths of one class in one image.
struct ImageDetections {
  std::vector<ScoredBox> predictions;
  std::vector<Box> ground_truth;
};

struct ApResult {
  // False when there is no ground truth at all; ap is then meaningless.
  bool defined = false;
  double ap = 0.0;
  double recall = 0.0;
  int64_t num_gt = 0;
  int64_t num_predictions = 0;  // after the confidence floor
  int64_t true_positives = 0;
};

inline constexpr double kDefaultConfFloor = 0.001;

// All-point interpolated AP. Predictions below conf_floor are dropped, the
// rest ranked by score (ties: image index, then box index) and each matched to
// the unmatched ground truth of its image with the highest IoU (ties: lower
// index) when that IoU reaches iou_threshold.
ApResult AveragePrecision(std::span<const ImageDetections> images, double iou_threshold = 0.5,
                          double conf_floor = kDefaultConfFloor);

// Mean over classes with defined AP. Throws ValidationError when none is.
double Map50(std::span<const ApResult> per_class);

// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 3);

  void Accumulate(std::span<const uint8_t> pred, std::span<const uint8_t> gt);
  void Add(const ConfusionMatrix& other);

  int num_classes() const { return num_classes_; }
  int64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt * num_classes_ + pred)]; }
  int64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int num_classes_;
  std::vector<int64_t> counts_;
};

// IoU per class; nullopt for a class absent from both ground truth and
// prediction.
std::vector<std::optional<double>> IouPerClass(const ConfusionMatrix& m);
// Mean of the defined per-class IoUs; 0 when none is defined.
double MeanIou(const ConfusionMatrix& m);

// Lane pixel recall of one image. An image without ground-truth lane pixels
// scores 1 when the prediction has none either, else 0.
double LaneAccuracy(std::span<const uint8_t> pred, std::span<const uint8_t> gt);

// Aggregates lane recall by pixel counts over images that have lane pixels.
class LaneTally {
 public:
  void Add(std::span<const uint8_t> pred, std::span<const uint8_t> gt);
  // Falls back to the empty-image rule when no image had lane pixels.
  double Accuracy() const;

  int64_t gt_pixels() const { return gt_pixels_; }
  int64_t hit_pixels() const { return hit_pixels_; }

 private:
  int64_t gt_pixels_ = 0;
  int64_t hit_pixels_ = 0;
  int64_t empty_images_ = 0;
  int64_t empty_images_clean_ = 0;
};

struct EvalReport {
  std::vector<ApResult> per_class;
  std::optional<double> map50;
  double recall = 0.0;
  ConfusionMatrix confusion;
  LaneTally lanes;
  int64_t images = 0;
  int64_t skipped_degenerate = 0;

  std::vector<std::optional<double>> iou() const { return IouPerClass(confusion); }
  double miou() const { return MeanIou(confusion); }
  double lane_accuracy() const { return lanes.Accuracy(); }
  nlohmann::json ToJson() const;
};

// Fills map50 and recall from per_class.
void FinishDetectionMetrics(EvalReport& report);

}  // namespace hnk

#endif  // HNK_METRICS_H_
