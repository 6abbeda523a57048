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

#ifndef HNK_ANCHORS_H_
#define HNK_ANCHORS_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnk/geometry.h"

namespace hnk {

struct AnchorConfig {
  std::vector<int> levels = {3, 4, 5, 6, 7};
  // Anchor base size is base_scale_constant * stride.
  double base_scale_constant = 4.0;
  std::vector<double> scales = {1.0, 1.624504792712471, 2.4966610978032238};  // 2^0, 2^0.7, 2^1.32
  // (width multiplier, height multiplier)
  std::vector<std::pair<double, double>> ratios = {{0.62, 1.58}, {1.0, 1.0}, {1.58, 0.62}};

  int64_t anchors_per_cell() const {
    return static_cast<int64_t>(scales.size() * ratios.size());
  }
  int max_level() const;
  // Throws ValidationError on empty/non-positive/non-ascending entries.
  void Validate() const;
};

// Width and height of a box, pixels.
struct BoxSize {
  double w = 0.0;
  double h = 0.0;
};

struct SizeCluster {
  double w = 0.0;
  double h = 0.0;
  int64_t member_count = 0;
};

// IoU of two boxes sharing their top-left corner; the k-means similarity.
double OriginIou(const BoxSize& a, const BoxSize& b);

// Anchors for an input of input_w x input_h pixels, ordered level-major, then
// row-major over cells, then (scale, ratio) lexicographically. Both sides must
// be divisible by 2^max(levels).
std::vector<AnchorRef> GenerateGrid(const AnchorConfig& cfg, int64_t input_w, int64_t input_h);

// Number of anchors GenerateGrid would return, without building them.
int64_t CountAnchors(const AnchorConfig& cfg, int64_t input_w, int64_t input_h);

// Pixel sizes of every distinct anchor shape across the configured levels.
std::vector<BoxSize> PriorSizes(const AnchorConfig& cfg);

// Mean over `sizes` of the best OriginIou against any prior.
double MeanBestIou(std::span<const BoxSize> sizes, std::span<const BoxSize> priors);

struct KMeansResult {
  std::vector<SizeCluster> clusters;  // sorted by area ascending
  // Mean 1 - IoU to the assigned centroid, after initialization and after
  // every iteration.
  std::vector<double> distortion_history;
  int iterations = 0;
};

// Lloyd iterations under d = 1 - OriginIou with k-means++ seeding. Each
// centroid update moves to the size that maximizes the summed IoU of its
// members (searched locally, accepted only on improvement), so distortion
// never increases. A cluster that empties is re-seeded at the point farthest
// from its centroid. Stops at an assignment fixpoint or after max_iters.
KMeansResult KMeansFit(std::span<const BoxSize> sizes, int k, uint64_t seed, int max_iters);

struct DerivedAnchors {
  AnchorConfig config;
  std::vector<std::string> warnings;
};

// Factors nine size clusters into 3 ratios x 3 scales. Ratios are the 1-D
// k-means centroids r of sqrt(w/h), stored as (r, 1/r). Scales are the 1-D
// k-means centroids of sqrt(w*h) / (base_scale_constant * stride), with the
// stride of the level whose base size is nearest (log scale) to the smallest
// cluster, then divided by the smallest centroid. Both lists ascend.
DerivedAnchors DeriveScalesRatios(std::span<const SizeCluster> clusters, const std::vector<int>& levels,
                                  double base_scale_constant);

// Exact 1-D k-means (k <= values.size()) by enumerating contiguous partitions
// of the sorted values; returns ascending centroids.
std::vector<double> KMeans1d(std::vector<double> values, int k);

}  // namespace hnk

#endif  // HNK_ANCHORS_H_
