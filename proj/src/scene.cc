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

#include "hnk/scene.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hnk/errors.h"
#include "hnk/rng.h"
#include "json.hpp"

namespace hnk {
namespace {

namespace fs = std::filesystem;
using Color = std::array<double, 3>;

uint64_t SplitMix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double ColorDistance(const Color& a, const Color& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a[c] - b[c]));
  return d;
}

// Columns x of [0, width) whose pixel center x + 0.5 lies in [lo, hi].
std::pair<int64_t, int64_t> ColumnSpan(double lo, double hi, int64_t width) {
  const auto first = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(lo - 0.5)));
  const auto last = std::min<int64_t>(width - 1, static_cast<int64_t>(std::floor(hi - 0.5)));
  return {first, last};
}

void PaintRoad(const SceneSpec& spec, double shift, std::vector<uint8_t>& mask) {
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  const double top = spec.horizon * h;
  for (int64_t y = 0; y < spec.height; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    if (yc < top) continue;
    const double t = (yc - top) / (h - top);
    const double half = 0.5 * w * (spec.top_width + (spec.bottom_width - spec.top_width) * t);
    const double cx = 0.5 * w + shift;
    uint8_t* row = mask.data() + y * spec.width;
    auto [r0, r1] = ColumnSpan(cx - half, cx + half, spec.width);
    for (int64_t x = r0; x <= r1; ++x) row[x] = kDrivable;
    for (int j = 1; j < spec.lane_count; ++j) {
      const double lx = cx - half + 2.0 * half * j / spec.lane_count;
      auto [l0, l1] = ColumnSpan(lx - 0.5 * spec.lane_thickness, lx + 0.5 * spec.lane_thickness, spec.width);
      for (int64_t x = l0; x <= l1; ++x) row[x] = kLane;
    }
  }
}

Color VehicleColor(Rng& rng, const std::vector<Color>& taken) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Color c = {rng.Uniform(0.05, 0.95), rng.Uniform(0.05, 0.95), rng.Uniform(0.05, 0.95)};
    bool ok = ColorDistance(c, kGroundColor) >= 0.3 && ColorDistance(c, kRoadColor) >= 0.3 &&
              ColorDistance(c, kLaneColor) >= 0.3;
    for (const Color& t : taken) ok = ok && ColorDistance(c, t) >= 0.1;
    if (ok) return c;
  }
  return {0.9, 0.1, 0.1};
}

bool Overlaps(const Box& a, const Box& b) {
  // One free pixel is kept between vehicles.
  return a.x1 < b.x2 + 1 && b.x1 < a.x2 + 1 && a.y1 < b.y2 + 1 && b.y1 < a.y2 + 1;
}

// --- PNM -------------------------------------------------------------------------

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for " + path);
}

struct PnmHeader {
  int64_t width = 0;
  int64_t height = 0;
  size_t data_offset = 0;
};

PnmHeader ParsePnmHeader(const std::string& bytes, const char* magic, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw ValidationError(path + ": expected " + magic + " header");
  }
  size_t pos = 2;
  int64_t fields[3];
  for (int64_t& field : fields) {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw ValidationError(path + ": malformed header");
    }
    field = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      field = field * 10 + (bytes[pos] - '0');
      if (field > (int64_t{1} << 24)) throw ValidationError(path + ": header value too large");
      ++pos;
    }
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ValidationError(path + ": malformed header");
  }
  ++pos;
  if (fields[0] <= 0 || fields[1] <= 0) throw ValidationError(path + ": non-positive size");
  if (fields[2] != 255) throw ValidationError(path + ": maxval must be 255");
  return {fields[0], fields[1], pos};
}

std::string PnmHeaderText(const char* magic, int64_t width, int64_t height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace

void SceneSpec::Validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("scene: image size must be positive");
  if (min_vehicles < 0 || max_vehicles < min_vehicles) throw ValidationError("scene: bad vehicle count range");
  if (!(min_vehicle_size >= 1.0) || max_vehicle_size < min_vehicle_size) {
    throw ValidationError("scene: bad vehicle size range");
  }
  if (max_vehicle_size > static_cast<double>(std::min(width, height))) {
    throw ValidationError("scene: vehicles larger than the image");
  }
  if (!(max_aspect >= 1.0)) throw ValidationError("scene: max_aspect must be >= 1");
  if (!(horizon >= 0.0 && horizon < 1.0)) throw ValidationError("scene: horizon must be in [0, 1)");
  if (!(top_width >= 0.0 && bottom_width > 0.0)) throw ValidationError("scene: road widths must be positive");
  if (!(road_jitter >= 0.0)) throw ValidationError("scene: road_jitter must be >= 0");
  if (lane_count < 1) throw ValidationError("scene: lane_count must be >= 1");
  if (!(lane_thickness >= 1.0)) throw ValidationError("scene: lane thickness must be >= 1 px");
  if (!(noise >= 0.0)) throw ValidationError("scene: noise must be >= 0");
}

Sample GenerateSample(const SceneSpec& spec, int64_t index) {
  spec.Validate();
  Rng rng(SplitMix(spec.seed ^ SplitMix(static_cast<uint64_t>(index))));
  const int64_t w = spec.width, h = spec.height, plane = w * h;
  Sample s;
  s.width = w;
  s.height = h;
  s.mask.assign(static_cast<size_t>(plane), kBackground);
  const double shift = rng.Uniform(-1.0, 1.0) * spec.road_jitter * static_cast<double>(w);
  PaintRoad(spec, shift, s.mask);

  std::vector<double> pixels(static_cast<size_t>(3 * plane));
  for (int64_t i = 0; i < plane; ++i) {
    const uint8_t m = s.mask[static_cast<size_t>(i)];
    const Color& c = m == kLane ? kLaneColor : m == kDrivable ? kRoadColor : kGroundColor;
    for (int ch = 0; ch < 3; ++ch) pixels[static_cast<size_t>(ch * plane + i)] = c[ch];
  }

  const int wanted = static_cast<int>(rng.UniformInt(spec.min_vehicles, spec.max_vehicles));
  std::vector<Color> colors;
  for (int v = 0; v < wanted; ++v) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double bw = std::round(rng.Uniform(spec.min_vehicle_size, spec.max_vehicle_size));
      const double lo = std::max(spec.min_vehicle_size, bw / spec.max_aspect);
      const double hi = std::min(spec.max_vehicle_size, bw * spec.max_aspect);
      const double bh = std::round(rng.Uniform(lo, hi));
      const double x1 = static_cast<double>(rng.UniformInt(0, w - static_cast<int64_t>(bw)));
      const double y1 = static_cast<double>(rng.UniformInt(0, h - static_cast<int64_t>(bh)));
      const Box box{x1, y1, x1 + bw, y1 + bh};
      if (std::any_of(s.boxes.begin(), s.boxes.end(), [&](const LabeledBox& o) { return Overlaps(o.box, box); })) {
        continue;
      }
      placed = true;
      const Color fill = VehicleColor(rng, colors);
      colors.push_back(fill);
      s.boxes.push_back({box, 0});
      const auto bx1 = static_cast<int64_t>(box.x1), by1 = static_cast<int64_t>(box.y1);
      const auto bx2 = static_cast<int64_t>(box.x2), by2 = static_cast<int64_t>(box.y2);
      for (int64_t y = by1; y < by2; ++y) {
        for (int64_t x = bx1; x < bx2; ++x) {
          const bool border = x == bx1 || y == by1 || x == bx2 - 1 || y == by2 - 1;
          const int64_t i = y * w + x;
          s.mask[static_cast<size_t>(i)] = kBackground;
          for (int ch = 0; ch < 3; ++ch) {
            pixels[static_cast<size_t>(ch * plane + i)] = border ? 0.5 * fill[ch] : fill[ch];
          }
        }
      }
    }
    if (!placed) ++s.dropped_vehicles;
  }

  if (spec.noise > 0.0) {
    for (double& p : pixels) p = std::clamp(p + spec.noise * rng.Normal(), 0.0, 1.0);
  }
  s.image = Tensor({3, h, w}, std::move(pixels));
  return s;
}

std::vector<Sample> Generate(const SceneSpec& spec, int64_t n) {
  if (n < 0) throw ValidationError("scene: sample count must be >= 0");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(GenerateSample(spec, i));
  return out;
}

void WritePpm(const std::string& path, const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3) throw ValidationError("ppm: expected (3, H, W)");
  const int64_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string bytes = PnmHeaderText("P6", w, h);
  const auto v = image.values();
  for (int64_t i = 0; i < plane; ++i) {
    for (int64_t c = 0; c < 3; ++c) {
      const double x = std::clamp(v[static_cast<size_t>(c * plane + i)], 0.0, 1.0);
      bytes.push_back(static_cast<char>(static_cast<uint8_t>(std::lround(x * 255.0))));
    }
  }
  WriteFile(path, bytes);
}

Tensor ReadPpm(const std::string& path) {
  const std::string bytes = ReadFile(path);
  const PnmHeader hdr = ParsePnmHeader(bytes, "P6", path);
  const int64_t plane = hdr.width * hdr.height;
  if (bytes.size() - hdr.data_offset != static_cast<size_t>(3 * plane)) {
    throw ValidationError(path + ": payload size does not match header");
  }
  std::vector<double> v(static_cast<size_t>(3 * plane));
  for (int64_t i = 0; i < plane; ++i) {
    for (int64_t c = 0; c < 3; ++c) {
      const auto byte = static_cast<uint8_t>(bytes[hdr.data_offset + static_cast<size_t>(3 * i + c)]);
      v[static_cast<size_t>(c * plane + i)] = byte / 255.0;
    }
  }
  return Tensor({3, hdr.height, hdr.width}, std::move(v));
}

void WritePgm(const std::string& path, std::span<const uint8_t> pixels, int64_t width, int64_t height) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<size_t>(width * height)) {
    throw ValidationError("pgm: pixel count does not match size");
  }
  std::string bytes = PnmHeaderText("P5", width, height);
  bytes.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  WriteFile(path, bytes);
}

std::vector<uint8_t> ReadPgm(const std::string& path, int64_t* width, int64_t* height) {
  const std::string bytes = ReadFile(path);
  const PnmHeader hdr = ParsePnmHeader(bytes, "P5", path);
  if (bytes.size() - hdr.data_offset != static_cast<size_t>(hdr.width * hdr.height)) {
    throw ValidationError(path + ": payload size does not match header");
  }
  *width = hdr.width;
  *height = hdr.height;
  return std::vector<uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset), bytes.end());
}

void SaveDataset(const std::string& dir, std::span<const Sample> samples,
                 const std::vector<std::string>& class_names) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  nlohmann::json manifest = nlohmann::json::array();
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    const std::string image = std::string("images/") + stem + ".ppm";
    const std::string mask = std::string("masks/") + stem + ".pgm";
    WritePpm((fs::path(dir) / image).string(), s.image);
    WritePgm((fs::path(dir) / mask).string(), s.mask, s.width, s.height);
    nlohmann::json boxes = nlohmann::json::array();
    for (const LabeledBox& b : s.boxes) {
      if (b.class_id < 0 || static_cast<size_t>(b.class_id) >= class_names.size()) {
        throw ValidationError("save_dataset: class id " + std::to_string(b.class_id) + " has no name");
      }
      boxes.push_back({{"x1", b.box.x1}, {"y1", b.box.y1}, {"x2", b.box.x2}, {"y2", b.box.y2},
                       {"category", class_names[static_cast<size_t>(b.class_id)]}});
    }
    manifest.push_back({{"image", image}, {"boxes", boxes}, {"mask", mask}});
  }
  WriteFile((fs::path(dir) / "manifest.json").string(), manifest.dump(1) + "\n");
}

LoadedDataset LoadDataset(const std::string& manifest_path, const std::vector<std::string>& class_names) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ReadFile(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path + ": " + e.what());
  }
  if (!manifest.is_array()) throw ValidationError(manifest_path + ": manifest must be a JSON array");
  const fs::path base = fs::path(manifest_path).parent_path();
  LoadedDataset out;
  for (size_t r = 0; r < manifest.size(); ++r) {
    const std::string where = manifest_path + " record " + std::to_string(r);
    const auto& rec = manifest[r];
    if (!rec.is_object() || !rec.contains("image") || !rec["image"].is_string() || !rec.contains("mask") ||
        !rec["mask"].is_string()) {
      throw ValidationError(where + ": needs string fields \"image\" and \"mask\"");
    }
    Sample s;
    s.image = ReadPpm((base / rec["image"].get<std::string>()).string());
    s.height = s.image.dim(1);
    s.width = s.image.dim(2);
    const std::string mask_path = (base / rec["mask"].get<std::string>()).string();
    int64_t mw = 0, mh = 0;
    s.mask = ReadPgm(mask_path, &mw, &mh);
    if (mw != s.width || mh != s.height) throw ValidationError(mask_path + ": mask size differs from image");
    for (uint8_t m : s.mask) {
      if (m > kLane) throw ValidationError(mask_path + ": mask value " + std::to_string(m) + " outside {0,1,2}");
    }
    const auto boxes = rec.value("boxes", nlohmann::json::array());
    if (!boxes.is_array()) throw ValidationError(where + ": \"boxes\" must be an array");
    for (size_t b = 0; b < boxes.size(); ++b) {
      const auto& jb = boxes[b];
      const std::string bwhere = where + " box " + std::to_string(b);
      for (const char* key : {"x1", "y1", "x2", "y2"}) {
        if (!jb.contains(key) || !jb[key].is_number()) throw ValidationError(bwhere + ": missing number " + key);
      }
      if (!jb.contains("category") || !jb["category"].is_string()) {
        throw ValidationError(bwhere + ": missing string category");
      }
      Box box{jb["x1"].get<double>(), jb["y1"].get<double>(), jb["x2"].get<double>(), jb["y2"].get<double>()};
      if (!(box.x2 >= box.x1) || !(box.y2 >= box.y1)) throw ValidationError(bwhere + ": x2 < x1 or y2 < y1");
      const auto cat = std::find(class_names.begin(), class_names.end(), jb["category"].get<std::string>());
      if (cat == class_names.end()) {
        ++out.dropped_boxes;
        continue;
      }
      box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(s.width));
      box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(s.width));
      box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(s.height));
      box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(s.height));
      s.boxes.push_back({box, static_cast<int>(cat - class_names.begin())});
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace hnk
