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
#include <numeric>

#include "hnk/errors.h"

namespace hnk {

ApResult AveragePrecision(std::span<const ImageDetections> images, double iou_threshold, double conf_floor) {
  struct Ranked {
    double score;
    size_t image;
    size_t index;
  };
  std::vector<Ranked> ranked;
  ApResult result;
  for (size_t i = 0; i < images.size(); ++i) {
    result.num_gt += static_cast<int64_t>(images[i].ground_truth.size());
    for (size_t k = 0; k < images[i].predictions.size(); ++k) {
      const double score = images[i].predictions[k].score;
      if (score >= conf_floor) ranked.push_back({score, i, k});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
  result.num_predictions = static_cast<int64_t>(ranked.size());
  result.defined = result.num_gt > 0;
  if (!result.defined) return result;

  std::vector<std::vector<bool>> matched(images.size());
  for (size_t i = 0; i < images.size(); ++i) matched[i].assign(images[i].ground_truth.size(), false);
  std::vector<double> precision, recall;
  int64_t tp = 0;
  for (size_t r = 0; r < ranked.size(); ++r) {
    const ImageDetections& img = images[ranked[r].image];
    const Box& pred = img.predictions[ranked[r].index].box;
    int64_t best = -1;
    double best_iou = -1.0;
    for (size_t g = 0; g < img.ground_truth.size(); ++g) {
      if (matched[ranked[r].image][g]) continue;
      const double iou = Iou(pred, img.ground_truth[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int64_t>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      matched[ranked[r].image][static_cast<size_t>(best)] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(result.num_gt));
  }
  // Precision envelope, integrated over recall steps.
  for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  result.ap = ap;
  result.true_positives = tp;
  result.recall = static_cast<double>(tp) / static_cast<double>(result.num_gt);
  return result;
}

double Map50(std::span<const ApResult> per_class) {
  double sum = 0.0;
  int n = 0;
  for (const ApResult& r : per_class) {
    if (!r.defined) continue;
    sum += r.ap;
    ++n;
  }
  if (n == 0) throw ValidationError("map50: no class has ground truth");
  return sum / n;
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ValidationError("confusion: need at least one class");
}

void ConfusionMatrix::Accumulate(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size()) throw ValidationError("confusion: mask sizes differ");
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= num_classes_ || pred[i] >= num_classes_) throw ValidationError("confusion: class id out of range");
    ++counts_[static_cast<size_t>(gt[i] * num_classes_ + pred[i])];
  }
}

void ConfusionMatrix::Add(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw ValidationError("confusion: class counts differ");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), int64_t{0}); }

std::vector<std::optional<double>> IouPerClass(const ConfusionMatrix& m) {
  const int c = m.num_classes();
  std::vector<std::optional<double>> out(static_cast<size_t>(c));
  for (int k = 0; k < c; ++k) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += m.at(k, j);
      col += m.at(j, k);
    }
    const int64_t uni = row + col - m.at(k, k);
    if (uni > 0) out[static_cast<size_t>(k)] = static_cast<double>(m.at(k, k)) / static_cast<double>(uni);
  }
  return out;
}

double MeanIou(const ConfusionMatrix& m) {
  double sum = 0.0;
  int n = 0;
  for (const auto& iou : IouPerClass(m)) {
    if (!iou) continue;
    sum += *iou;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

namespace {

struct LaneCount {
  int64_t gt = 0;
  int64_t pred = 0;
  int64_t hit = 0;
};

LaneCount CountLane(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size()) throw ValidationError("lane_accuracy: mask sizes differ");
  LaneCount c;
  for (size_t i = 0; i < gt.size(); ++i) {
    const bool g = gt[i] == 2, p = pred[i] == 2;
    c.gt += g;
    c.pred += p;
    c.hit += g && p;
  }
  return c;
}

}  // namespace

double LaneAccuracy(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  const LaneCount c = CountLane(pred, gt);
  if (c.gt == 0) return c.pred == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.hit) / static_cast<double>(c.gt);
}

void LaneTally::Add(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  const LaneCount c = CountLane(pred, gt);
  if (c.gt == 0) {
    ++empty_images_;
    empty_images_clean_ += c.pred == 0;
    return;
  }
  gt_pixels_ += c.gt;
  hit_pixels_ += c.hit;
}

double LaneTally::Accuracy() const {
  if (gt_pixels_ > 0) return static_cast<double>(hit_pixels_) / static_cast<double>(gt_pixels_);
  return empty_images_ > 0 && empty_images_clean_ == empty_images_ ? 1.0 : 0.0;
}

void FinishDetectionMetrics(EvalReport& report) {
  int64_t tp = 0, gt = 0;
  bool any = false;
  for (const ApResult& r : report.per_class) {
    tp += r.true_positives;
    gt += r.num_gt;
    any = any || r.defined;
  }
  report.map50 = any ? std::optional<double>(Map50(report.per_class)) : std::nullopt;
  report.recall = gt > 0 ? static_cast<double>(tp) / static_cast<double>(gt) : 0.0;
}

nlohmann::json EvalReport::ToJson() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  const auto ious = iou();
  nlohmann::json iou_json = nlohmann::json::object();
  const char* names[] = {"background", "drivable", "lane"};
  for (size_t k = 0; k < ious.size(); ++k) {
    iou_json[k < 3 ? names[k] : "class" + std::to_string(k)] = opt(ious[k]);
  }
  int64_t gt = 0, preds = 0, tp = 0;
  nlohmann::json classes = nlohmann::json::array();
  for (const ApResult& r : per_class) {
    gt += r.num_gt;
    preds += r.num_predictions;
    tp += r.true_positives;
    classes.push_back({{"ap", r.defined ? nlohmann::json(r.ap) : nlohmann::json(nullptr)},
                       {"recall", r.recall},
                       {"gt", r.num_gt},
                       {"predictions", r.num_predictions},
                       {"true_positives", r.true_positives}});
  }
  return {{"map50", opt(map50)},
          {"recall", recall},
          {"iou", iou_json},
          {"miou", miou()},
          {"lane_accuracy", lane_accuracy()},
          {"per_class", classes},
          {"counts",
           {{"images", images},
            {"gt_boxes", gt},
            {"predictions", preds},
            {"true_positives", tp},
            {"pixels", confusion.total()},
            {"lane_gt_pixels", lanes.gt_pixels()},
            {"lane_hit_pixels", lanes.hit_pixels()},
            {"skipped_degenerate", skipped_degenerate}}}};
}

}  // namespace hnk
