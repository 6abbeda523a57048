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

#ifndef HNK_CONFIG_H_
#define HNK_CONFIG_H_

#include <string>
#include <vector>

#include "hnk/losses.h"
#include "hnk/model.h"
#include "hnk/scene.h"
#include "hnk/train.h"
#include "json.hpp"

namespace hnk {

struct DataConfig {
  // Sized like the default model input. When a config file leaves the scene
  // size out it follows model.input_w and model.input_h.
  SceneSpec scene = {.width = 640, .height = 384};
  // Synthetic split: samples [0, train_count) train, the next val_count
  // validate.
  int64_t train_count = 400;
  int64_t val_count = 100;
  // When set, data comes from manifests instead of the generator.
  std::string train_manifest;
  std::string val_manifest;
  std::vector<std::string> classes = {"vehicle"};
};

struct EvalConfig {
  double conf = 0.001;
  double nms = 0.6;
};

struct RunConfig {
  ModelConfig model;
  LossWeights losses;
  StageSchedule schedule = StageSchedule::Default();
  TrainOptions train;
  DataConfig data;
  EvalConfig eval;

  // Checks every module invariant; throws ValidationError.
  void Validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected. The "anchors"
// section fills model.anchors.
RunConfig ParseRunConfig(const nlohmann::json& doc);
RunConfig LoadRunConfig(const std::string& path);
nlohmann::json RunConfigToJson(const RunConfig& cfg);

}  // namespace hnk

#endif  // HNK_CONFIG_H_
