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

#ifndef HNK_SCENE_H_
#define HNK_SCENE_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hnk/geometry.h"
#include "hnk/tensor.h"

namespace hnk {

// Segmentation classes.
inline constexpr uint8_t kBackground = 0;
inline constexpr uint8_t kDrivable = 1;
inline constexpr uint8_t kLane = 2;

struct Sample {
  int64_t width = 0;
  int64_t height = 0;
  Tensor image;  // (3, H, W), values in [0, 1]
  std::vector<LabeledBox> boxes;
  std::vector<uint8_t> mask;  // H * W, row-major
  // Vehicles that could not be placed without overlap.
  int64_t dropped_vehicles = 0;
};

// Parameters of the synthetic road scene. The road is a trapezoid from row
// `horizon * height` to the bottom edge whose width grows linearly from
// `top_width` to `bottom_width` (fractions of the image width). Lane lines
// split the road into `lane_count` equal lanes.
struct SceneSpec {
  uint64_t seed = 7;
  int64_t width = 128;
  int64_t height = 128;
  int min_vehicles = 1;
  int max_vehicles = 4;
  double min_vehicle_size = 6.0;  // side length, px
  double max_vehicle_size = 40.0;
  double max_aspect = 2.0;
  double horizon = 0.35;
  double top_width = 0.2;
  double bottom_width = 0.95;
  // Horizontal road shift, uniform in +-road_jitter * width.
  double road_jitter = 0.08;
  int lane_count = 3;
  double lane_thickness = 6.0;
  double noise = 0.02;

  void Validate() const;
};

// Base colors of the scene elements.
inline constexpr std::array<double, 3> kGroundColor = {0.30, 0.45, 0.25};
inline constexpr std::array<double, 3> kRoadColor = {0.42, 0.42, 0.45};
inline constexpr std::array<double, 3> kLaneColor = {0.92, 0.92, 0.85};

// Sample `index` of the stream defined by spec.seed.
Sample GenerateSample(const SceneSpec& spec, int64_t index);
// Samples 0 .. n-1.
std::vector<Sample> Generate(const SceneSpec& spec, int64_t n);

// Binary PPM (P6) and PGM (P5) with maxval 255.
void WritePpm(const std::string& path, const Tensor& image);
Tensor ReadPpm(const std::string& path);
void WritePgm(const std::string& path, std::span<const uint8_t> pixels, int64_t width, int64_t height);
std::vector<uint8_t> ReadPgm(const std::string& path, int64_t* width, int64_t* height);

// Writes images/NNNNNN.ppm, masks/NNNNNN.pgm and manifest.json under `dir`.
// Boxes are labeled with class_names[class_id].
void SaveDataset(const std::string& dir, std::span<const Sample> samples,
                 const std::vector<std::string>& class_names);

struct LoadedDataset {
  std::vector<Sample> samples;
  // Boxes whose category is not in the class set.
  int64_t dropped_boxes = 0;
};

// Reads a manifest; relative paths resolve against the manifest's directory.
LoadedDataset LoadDataset(const std::string& manifest_path, const std::vector<std::string>& class_names);

}  // namespace hnk

#endif  // HNK_SCENE_H_
