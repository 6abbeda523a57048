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

#ifndef HNK_MODEL_H_
#define HNK_MODEL_H_

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hnk/anchors.h"
#include "hnk/geometry.h"
#include "hnk/tensor.h"

namespace hnk {

struct ModelConfig {
  int64_t input_w = 640;
  int64_t input_h = 384;
  // Output channels of the backbone stages P1..P5.
  std::vector<int64_t> backbone_channels = {16, 24, 32, 48, 64};
  int64_t fpn_channels = 48;
  int bifpn_repeats = 2;
  // Depthwise-separable layers in the shared detection head before the output
  // projection.
  int det_head_layers = 2;
  int64_t num_classes_det = 1;
  int64_t num_seg_classes = 3;
  int64_t seg_fuse_channels = 64;
  AnchorConfig anchors;

  // The neck spans P3 .. P_top where top = max(anchors.levels).
  int top_level() const { return anchors.max_level(); }
  int64_t det_columns() const { return 5 + num_classes_det; }
  void Validate() const;
};

enum class ParamGroup : uint8_t { kEncoder = 0, kDetection = 1, kSegmentation = 2 };

const char* GroupName(ParamGroup group);

using GroupSet = std::set<ParamGroup>;

// Named parameter tensors, each tagged with the group that freezes and
// unfreezes it. Iteration is in lexicographic name order.
class ModelParams {
 public:
  struct Entry {
    Tensor value;
    ParamGroup group;
  };

  void Add(const std::string& name, ParamGroup group, Tensor value);
  const Tensor& Get(const std::string& name) const;
  Tensor& Mutable(const std::string& name);
  ParamGroup GroupOf(const std::string& name) const;
  bool Contains(const std::string& name) const { return entries_.count(name) > 0; }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& mutable_entries() { return entries_; }

  // Marks parameters of `groups` as requiring grad and all others as
  // constants, so frozen parts of the network are not recorded on the tape.
  void SetTrainable(const GroupSet& groups);

  int64_t NumScalars() const;
  // FNV-1a over names and value bytes of one group.
  uint64_t Checksum(ParamGroup group) const;
  ModelParams Clone() const;

 private:
  std::map<std::string, Entry> entries_;
};

// Deterministic initialization: conv kernels uniform in +-sqrt(6 / fan_in),
// biases 0, fusion weights 1.
ModelParams BuildModel(const ModelConfig& cfg, uint64_t seed);

struct ModelOutput {
  Tensor det_raw;     // (num_anchors, 5 + num_classes); undefined if not requested
  Tensor seg_logits;  // (num_seg_classes, H, W); undefined if not requested
  // Backbone P2 followed by the neck outputs P3 .. P_top.
  std::vector<Tensor> pyramid;
};

struct ForwardOptions {
  bool detection = true;
  bool segmentation = true;
};

// image: (3, input_h, input_w).
ModelOutput Forward(const ModelConfig& cfg, const ModelParams& params, const Tensor& image,
                    ForwardOptions options = {});

// Fast normalized fusion of same-shaped inputs with eps = 1e-4.
inline constexpr double kFusionEps = 1e-4;
Tensor BifpnFuse(const std::vector<Tensor>& inputs, const Tensor& weights, double eps = kFusionEps);

// Segmentation branch over pyramid = {P2, P3, ..., P_top}.
Tensor SegForward(const ModelConfig& cfg, const ModelParams& params, const std::vector<Tensor>& pyramid);

// Concatenates per-level head maps (A*K, h_l, w_l), in level order, into
// detection rows ordered like GenerateGrid.
Tensor AssembleDetectionRows(const std::vector<Tensor>& level_maps, int64_t anchors_per_cell);

struct LayerCost {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
};

struct CostReport {
  int64_t params = 0;
  int64_t macs = 0;  // multiply-accumulates of convolution layers
  std::vector<LayerCost> layers;
};

// Analytic parameter and multiply-accumulate counts for one forward pass.
CostReport CountParamsFlops(const ModelConfig& cfg);

// Per-layer formulas. A depthwise-separable layer has a bias after both the
// depthwise and the pointwise step.
LayerCost ConvCost(int64_t c_in, int64_t c_out, int64_t k, int64_t out_h, int64_t out_w, bool bias);
LayerCost SeparableConvCost(int64_t c_in, int64_t c_out, int64_t k, int64_t out_h, int64_t out_w);

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

struct Prediction {
  std::vector<Detection> detections;  // per class in NMS order, classes ascending
  std::vector<uint8_t> seg_mask;      // (H, W) argmax class, ties to the lower class
  int64_t skipped_degenerate = 0;     // rows whose box could not be decoded
};

// Scores are sigmoid(objectness) * sigmoid(class logit), each probability
// clamped to [1e-7, 1 - 1e-7]. Detections need score >= conf_threshold and go
// through per-class NMS.
Prediction DecodePredictions(const ModelConfig& cfg, std::span<const AnchorRef> anchors, const Tensor& det_raw,
                             const Tensor& seg_logits, double conf_threshold, double nms_threshold);

Prediction Predict(const ModelConfig& cfg, const ModelParams& params, std::span<const AnchorRef> anchors,
                   const Tensor& image, double conf_threshold, double nms_threshold);

// Per-pixel argmax over axis 0 of (C, H, W) logits; ties to the lower class.
std::vector<uint8_t> ArgmaxMask(const Tensor& logits);

// Binary checkpoint: "HNK1", then per parameter in name order: u32 name
// length, name bytes, u8 group, u32 rank, u32 dims, little-endian f64 values.
std::string SerializeParams(const ModelParams& params);
ModelParams DeserializeParams(const std::string& bytes);
void SaveCheckpoint(const ModelParams& params, const std::string& path);
ModelParams LoadCheckpoint(const std::string& path);

}  // namespace hnk

#endif  // HNK_MODEL_H_
