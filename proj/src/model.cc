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

#include "hnk/model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hnk/errors.h"
#include "hnk/rng.h"

namespace hnk {
namespace {

enum class LayerKind { kConv, kSeparable, kPointwise, kFusion };

struct LayerSpec {
  std::string name;
  LayerKind kind;
  ParamGroup group;
  int64_t c_in;   // fusion: number of fused inputs
  int64_t c_out;  // fusion: channels of the fused maps
  int64_t k;
  int64_t positions;  // output positions summed over every place the layer runs
};

std::string Level(int l) { return "p" + std::to_string(l); }

std::string BifpnName(int repeat, const char* pass, int level) {
  return "neck.bifpn" + std::to_string(repeat) + "." + pass + "." + Level(level);
}

std::string DetLayerName(int i) { return "det.layer" + std::to_string(i); }

// Every parameterized layer of the network, in initialization order.
std::vector<LayerSpec> Plan(const ModelConfig& cfg) {
  const auto& ch = cfg.backbone_channels;
  const int top = cfg.top_level();
  const int64_t f = cfg.fpn_channels;
  auto pos = [&](int level) { return (cfg.input_h >> level) * (cfg.input_w >> level); };
  std::vector<LayerSpec> plan;
  constexpr auto kEnc = ParamGroup::kEncoder;

  plan.push_back({"backbone.stem", LayerKind::kConv, kEnc, 3, ch[0], 3, pos(1)});
  for (int s = 2; s <= 5; ++s) {
    plan.push_back({"backbone." + Level(s) + ".down", LayerKind::kSeparable, kEnc, ch[s - 2], ch[s - 1], 3, pos(s)});
    plan.push_back({"backbone." + Level(s) + ".block", LayerKind::kSeparable, kEnc, ch[s - 1], ch[s - 1], 3, pos(s)});
  }
  for (int l = 3; l <= 5; ++l) {
    plan.push_back({"neck.lateral." + Level(l), LayerKind::kPointwise, kEnc, ch[l - 1], f, 1, pos(l)});
  }
  for (int r = 0; r < cfg.bifpn_repeats; ++r) {
    for (int l = top - 1; l >= 3; --l) {
      plan.push_back({BifpnName(r, "td", l) + ".fuse", LayerKind::kFusion, kEnc, 2, f, 1, pos(l)});
      plan.push_back({BifpnName(r, "td", l) + ".conv", LayerKind::kSeparable, kEnc, f, f, 3, pos(l)});
    }
    for (int l = 4; l <= top; ++l) {
      plan.push_back({BifpnName(r, "out", l) + ".fuse", LayerKind::kFusion, kEnc, l < top ? 3 : 2, f, 1, pos(l)});
      plan.push_back({BifpnName(r, "out", l) + ".conv", LayerKind::kSeparable, kEnc, f, f, 3, pos(l)});
    }
  }

  int64_t det_positions = 0;
  for (int l : cfg.anchors.levels) det_positions += pos(l);
  for (int i = 0; i < cfg.det_head_layers; ++i) {
    plan.push_back({DetLayerName(i), LayerKind::kSeparable, ParamGroup::kDetection, f, f, 3, det_positions});
  }
  plan.push_back({"det.out", LayerKind::kPointwise, ParamGroup::kDetection, f,
                  cfg.anchors.anchors_per_cell() * cfg.det_columns(), 1, det_positions});

  const int64_t s = cfg.seg_fuse_channels;
  plan.push_back({"seg.proj." + Level(2), LayerKind::kPointwise, ParamGroup::kSegmentation, ch[1], s, 1, pos(2)});
  for (int l = 3; l <= top; ++l) {
    plan.push_back({"seg.proj." + Level(l), LayerKind::kPointwise, ParamGroup::kSegmentation, f, s, 1, pos(l)});
  }
  plan.push_back({"seg.out", LayerKind::kConv, ParamGroup::kSegmentation, s, cfg.num_seg_classes, 3, pos(2)});
  return plan;
}

Tensor UniformInit(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(NumElements(shape)));
  for (double& x : v) x = rng.Uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

class Network {
 public:
  Network(const ModelConfig& cfg, const ModelParams& params) : cfg_(cfg), params_(params) {}

  const Tensor& P(const std::string& name) const { return params_.Get(name); }

  Tensor Separable(const Tensor& x, const std::string& name, int stride) const {
    Tensor y = BiasAdd(DepthwiseConv2d(x, P(name + ".dw.weight"), stride), P(name + ".dw.bias"));
    return BiasAdd(PointwiseConv2d(y, P(name + ".pw.weight")), P(name + ".pw.bias"));
  }

  Tensor Pointwise(const Tensor& x, const std::string& name) const {
    return BiasAdd(PointwiseConv2d(x, P(name + ".weight")), P(name + ".bias"));
  }

  // Returns backbone P1..P5 (index 0..4).
  std::vector<Tensor> Backbone(const Tensor& image) const {
    std::vector<Tensor> feats;
    Tensor x = Swish(BiasAdd(Conv2d(image, P("backbone.stem.weight"), 2), P("backbone.stem.bias")));
    feats.push_back(x);
    for (int s = 2; s <= 5; ++s) {
      x = Swish(Separable(x, "backbone." + Level(s) + ".down", 2));
      x = Swish(Separable(x, "backbone." + Level(s) + ".block", 1));
      feats.push_back(x);
    }
    return feats;
  }

  // Neck outputs indexed by level (entries below 3 unused).
  std::vector<Tensor> Neck(const std::vector<Tensor>& backbone) const {
    const int top = cfg_.top_level();
    std::vector<Tensor> in(static_cast<size_t>(top + 1));
    for (int l = 3; l <= 5; ++l) in[l] = Pointwise(backbone[static_cast<size_t>(l - 1)], "neck.lateral." + Level(l));
    for (int l = 6; l <= top; ++l) in[l] = DownsampleStride2(in[l - 1]);

    for (int r = 0; r < cfg_.bifpn_repeats; ++r) {
      std::vector<Tensor> td(in.size()), out(in.size());
      td[top] = in[top];
      for (int l = top - 1; l >= 3; --l) {
        const Tensor up = UpsampleBilinear(td[l + 1], in[l].dim(1), in[l].dim(2));
        const std::string name = BifpnName(r, "td", l);
        td[l] = Separable(Swish(BifpnFuse({in[l], up}, P(name + ".fuse"))), name + ".conv", 1);
      }
      out[3] = td[3];
      for (int l = 4; l <= top; ++l) {
        const Tensor down = DownsampleStride2(out[l - 1]);
        std::vector<Tensor> inputs = l < top ? std::vector<Tensor>{in[l], td[l], down} : std::vector<Tensor>{in[l], down};
        const std::string name = BifpnName(r, "out", l);
        out[l] = Separable(Swish(BifpnFuse(inputs, P(name + ".fuse"))), name + ".conv", 1);
      }
      in = std::move(out);
    }
    return in;
  }

  Tensor DetectionHead(const std::vector<Tensor>& neck) const {
    std::vector<Tensor> maps;
    for (int l : cfg_.anchors.levels) {
      Tensor h = neck[static_cast<size_t>(l)];
      for (int i = 0; i < cfg_.det_head_layers; ++i) h = Swish(Separable(h, DetLayerName(i), 1));
      maps.push_back(Pointwise(h, "det.out"));
    }
    return AssembleDetectionRows(maps, cfg_.anchors.anchors_per_cell());
  }

 private:
  const ModelConfig& cfg_;
  const ModelParams& params_;
};

void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutF64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  void Need(size_t n) const {
    if (bytes_.size() - pos_ < n) throw ValidationError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  uint8_t U8() {
    Need(1);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  uint32_t U32() {
    Need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double F64() {
    Need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(bytes_[pos_++])) << (8 * i);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string Str(size_t n) {
    Need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  size_t pos_ = 0;
};

constexpr char kMagic[] = "HNK1";

}  // namespace

// --- ModelConfig / ModelParams --------------------------------------------------

void ModelConfig::Validate() const {
  anchors.Validate();
  const int top = anchors.max_level();
  if (anchors.levels.front() != 3 || top < 5 || top > 7 ||
      static_cast<int>(anchors.levels.size()) != top - 2) {
    throw ValidationError("model: detection levels must be the contiguous range 3..top with top in [5, 7]");
  }
  const int64_t div = int64_t{1} << top;
  if (input_w <= 0 || input_h <= 0 || input_w % div != 0 || input_h % div != 0) {
    throw ValidationError("model: input " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                          " must be divisible by " + std::to_string(div));
  }
  if (backbone_channels.size() != 5) throw ValidationError("model: backbone_channels needs 5 entries (P1..P5)");
  for (int64_t c : backbone_channels) {
    if (c <= 0) throw ValidationError("model: channel counts must be positive");
  }
  if (fpn_channels <= 0 || seg_fuse_channels <= 0) throw ValidationError("model: channel counts must be positive");
  if (bifpn_repeats < 1) throw ValidationError("model: bifpn_repeats must be >= 1");
  if (det_head_layers < 0) throw ValidationError("model: det_head_layers must be >= 0");
  if (num_classes_det < 1) throw ValidationError("model: num_classes_det must be >= 1");
  if (num_seg_classes != 3) throw ValidationError("model: num_seg_classes is fixed at 3");
}

const char* GroupName(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEncoder:
      return "enc";
    case ParamGroup::kDetection:
      return "det";
    case ParamGroup::kSegmentation:
      return "seg";
  }
  return "?";
}

void ModelParams::Add(const std::string& name, ParamGroup group, Tensor value) {
  if (!entries_.emplace(name, Entry{std::move(value), group}).second) {
    throw ValidationError("params: duplicate parameter " + name);
  }
}

const Tensor& ModelParams::Get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("params: no parameter named " + name);
  return it->second.value;
}

Tensor& ModelParams::Mutable(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("params: no parameter named " + name);
  return it->second.value;
}

ParamGroup ModelParams::GroupOf(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("params: no parameter named " + name);
  return it->second.group;
}

void ModelParams::SetTrainable(const GroupSet& groups) {
  for (auto& [name, entry] : entries_) entry.value.set_requires_grad(groups.count(entry.group) > 0);
}

int64_t ModelParams::NumScalars() const {
  int64_t n = 0;
  for (const auto& [name, entry] : entries_) n += entry.value.size();
  return n;
}

uint64_t ModelParams::Checksum(ParamGroup group) const {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, entry] : entries_) {
    if (entry.group != group) continue;
    mix(name.data(), name.size());
    mix(entry.value.values().data(), entry.value.values().size_bytes());
  }
  return h;
}

ModelParams ModelParams::Clone() const {
  ModelParams copy;
  for (const auto& [name, entry] : entries_) copy.Add(name, entry.group, entry.value.Clone());
  return copy;
}

ModelParams BuildModel(const ModelConfig& cfg, uint64_t seed) {
  cfg.Validate();
  Rng rng(seed);
  ModelParams params;
  for (const LayerSpec& layer : Plan(cfg)) {
    const std::string& n = layer.name;
    switch (layer.kind) {
      case LayerKind::kConv:
        params.Add(n + ".weight", layer.group,
                   UniformInit({layer.c_out, layer.c_in, layer.k, layer.k}, layer.c_in * layer.k * layer.k, rng));
        params.Add(n + ".bias", layer.group, Tensor::Zeros({layer.c_out}));
        break;
      case LayerKind::kSeparable:
        params.Add(n + ".dw.weight", layer.group, UniformInit({layer.c_in, layer.k, layer.k}, layer.k * layer.k, rng));
        params.Add(n + ".dw.bias", layer.group, Tensor::Zeros({layer.c_in}));
        params.Add(n + ".pw.weight", layer.group, UniformInit({layer.c_out, layer.c_in}, layer.c_in, rng));
        params.Add(n + ".pw.bias", layer.group, Tensor::Zeros({layer.c_out}));
        break;
      case LayerKind::kPointwise:
        params.Add(n + ".weight", layer.group, UniformInit({layer.c_out, layer.c_in}, layer.c_in, rng));
        params.Add(n + ".bias", layer.group, Tensor::Zeros({layer.c_out}));
        break;
      case LayerKind::kFusion:
        params.Add(n, layer.group, Tensor::Full({layer.c_in}, 1.0));
        break;
    }
  }
  return params;
}

// --- Forward --------------------------------------------------------------------

Tensor BifpnFuse(const std::vector<Tensor>& inputs, const Tensor& weights, double eps) {
  if (inputs.size() < 2) throw ValidationError("bifpn_fuse: needs at least 2 inputs");
  return WeightedSum(inputs, weights, eps);
}

Tensor AssembleDetectionRows(const std::vector<Tensor>& level_maps, int64_t anchors_per_cell) {
  std::vector<Tensor> rows;
  rows.reserve(level_maps.size());
  for (const Tensor& m : level_maps) rows.push_back(AnchorRows(m, anchors_per_cell));
  return rows.size() == 1 ? rows[0] : ConcatRows(rows);
}

Tensor SegForward(const ModelConfig& cfg, const ModelParams& params, const std::vector<Tensor>& pyramid) {
  const int top = cfg.top_level();
  if (static_cast<int>(pyramid.size()) != top - 1) {
    throw ValidationError("seg_forward: expected P2..P" + std::to_string(top) + ", got " +
                          std::to_string(pyramid.size()) + " maps");
  }
  Network net(cfg, params);
  const int64_t h4 = cfg.input_h / 4, w4 = cfg.input_w / 4;
  std::vector<Tensor> parts;
  for (int l = 2; l <= top; ++l) {
    const Tensor& feat = pyramid[static_cast<size_t>(l - 2)];
    if (feat.rank() != 3 || feat.dim(1) != (cfg.input_h >> l) || feat.dim(2) != (cfg.input_w >> l)) {
      throw ValidationError("seg_forward: P" + std::to_string(l) + " has shape " + ShapeToString(feat.shape()));
    }
    Tensor proj = net.Pointwise(feat, "seg.proj." + Level(l));
    if (l > 2) proj = UpsampleBilinear(proj, h4, w4);
    parts.push_back(proj);
  }
  Tensor fused = Swish(AddN(parts));
  Tensor logits = BiasAdd(Conv2d(fused, params.Get("seg.out.weight"), 1), params.Get("seg.out.bias"));
  return UpsampleBilinear(logits, cfg.input_h, cfg.input_w);
}

ModelOutput Forward(const ModelConfig& cfg, const ModelParams& params, const Tensor& image, ForwardOptions options) {
  if (!image.defined() || image.shape() != Shape{3, cfg.input_h, cfg.input_w}) {
    throw ValidationError("forward: image shape " +
                          (image.defined() ? ShapeToString(image.shape()) : std::string("undefined")) +
                          " does not match config " + ShapeToString({3, cfg.input_h, cfg.input_w}));
  }
  Network net(cfg, params);
  const std::vector<Tensor> backbone = net.Backbone(image);
  const std::vector<Tensor> neck = net.Neck(backbone);
  ModelOutput out;
  out.pyramid.push_back(backbone[1]);
  for (int l = 3; l <= cfg.top_level(); ++l) out.pyramid.push_back(neck[static_cast<size_t>(l)]);
  if (options.detection) out.det_raw = net.DetectionHead(neck);
  if (options.segmentation) out.seg_logits = SegForward(cfg, params, out.pyramid);
  return out;
}

// --- Cost counting ----------------------------------------------------------------

LayerCost ConvCost(int64_t c_in, int64_t c_out, int64_t k, int64_t out_h, int64_t out_w, bool bias) {
  LayerCost c;
  c.params = k * k * c_in * c_out + (bias ? c_out : 0);
  c.macs = k * k * c_in * c_out * out_h * out_w;
  return c;
}

LayerCost SeparableConvCost(int64_t c_in, int64_t c_out, int64_t k, int64_t out_h, int64_t out_w) {
  LayerCost c;
  c.params = k * k * c_in + c_in + c_in * c_out + c_out;
  c.macs = (k * k * c_in + c_in * c_out) * out_h * out_w;
  return c;
}

CostReport CountParamsFlops(const ModelConfig& cfg) {
  cfg.Validate();
  CostReport report;
  for (const LayerSpec& layer : Plan(cfg)) {
    LayerCost cost;
    switch (layer.kind) {
      case LayerKind::kConv:
        cost = ConvCost(layer.c_in, layer.c_out, layer.k, layer.positions, 1, true);
        break;
      case LayerKind::kSeparable:
        cost = SeparableConvCost(layer.c_in, layer.c_out, layer.k, layer.positions, 1);
        break;
      case LayerKind::kPointwise:
        cost = ConvCost(layer.c_in, layer.c_out, 1, layer.positions, 1, true);
        break;
      case LayerKind::kFusion:
        cost.params = layer.c_in;
        cost.macs = layer.c_in * layer.c_out * layer.positions;
        break;
    }
    cost.name = layer.name;
    report.params += cost.params;
    report.macs += cost.macs;
    report.layers.push_back(cost);
  }
  return report;
}

// --- Prediction -------------------------------------------------------------------

std::vector<uint8_t> ArgmaxMask(const Tensor& logits) {
  if (!logits.defined() || logits.rank() != 3) throw ValidationError("argmax_mask: expected (C, H, W) logits");
  const int64_t c = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  std::vector<uint8_t> mask(static_cast<size_t>(plane), 0);
  const auto v = logits.values();
  for (int64_t j = 0; j < plane; ++j) {
    int64_t best = 0;
    for (int64_t k = 1; k < c; ++k) {
      if (v[static_cast<size_t>(k * plane + j)] > v[static_cast<size_t>(best * plane + j)]) best = k;
    }
    mask[static_cast<size_t>(j)] = static_cast<uint8_t>(best);
  }
  return mask;
}

Prediction DecodePredictions(const ModelConfig& cfg, std::span<const AnchorRef> anchors, const Tensor& det_raw,
                             const Tensor& seg_logits, double conf_threshold, double nms_threshold) {
  auto prob = [](double logit) {
    const double s = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
    return std::clamp(s, 1e-7, 1.0 - 1e-7);
  };
  Prediction pred;
  if (det_raw.defined()) {
    const int64_t cols = cfg.det_columns();
    if (det_raw.rank() != 2 || det_raw.dim(1) != cols || static_cast<size_t>(det_raw.dim(0)) != anchors.size()) {
      throw ValidationError("predict: det_raw shape " + ShapeToString(det_raw.shape()) + " does not match anchors");
    }
    const auto v = det_raw.values();
    for (int64_t cls = 0; cls < cfg.num_classes_det; ++cls) {
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (size_t r = 0; r < anchors.size(); ++r) {
        const double* row = v.data() + r * static_cast<size_t>(cols);
        const double score = prob(row[4]) * prob(row[5 + cls]);
        if (score < conf_threshold) continue;
        if (std::abs(row[2]) > 40.0 || std::abs(row[3]) > 40.0) {
          ++pred.skipped_degenerate;
          continue;
        }
        boxes.push_back(Decode({row[0], row[1], row[2], row[3]}, anchors[r]));
        scores.push_back(score);
      }
      for (int64_t k : Nms(boxes, scores, nms_threshold)) {
        pred.detections.push_back({boxes[static_cast<size_t>(k)], scores[static_cast<size_t>(k)], static_cast<int>(cls)});
      }
    }
  }
  if (seg_logits.defined()) pred.seg_mask = ArgmaxMask(seg_logits);
  return pred;
}

Prediction Predict(const ModelConfig& cfg, const ModelParams& params, std::span<const AnchorRef> anchors,
                   const Tensor& image, double conf_threshold, double nms_threshold) {
  TapeScope no_tape(nullptr);
  const ModelOutput out = Forward(cfg, params, image);
  return DecodePredictions(cfg, anchors, out.det_raw, out.seg_logits, conf_threshold, nms_threshold);
}

// --- Checkpoints --------------------------------------------------------------------

std::string SerializeParams(const ModelParams& params) {
  std::string out(kMagic, 4);
  for (const auto& [name, entry] : params.entries()) {
    PutU32(out, static_cast<uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(entry.group));
    PutU32(out, static_cast<uint32_t>(entry.value.rank()));
    for (int64_t d : entry.value.shape()) PutU32(out, static_cast<uint32_t>(d));
    for (double v : entry.value.values()) PutF64(out, v);
  }
  return out;
}

ModelParams DeserializeParams(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic) != 0) throw ValidationError("checkpoint: bad magic");
  const std::string body = bytes.substr(4);
  Reader in(body);
  ModelParams params;
  while (!in.done()) {
    const std::string name = in.Str(in.U32());
    const uint8_t group = in.U8();
    if (group > 2) throw ValidationError("checkpoint: bad group tag for " + name);
    const uint32_t rank = in.U32();
    if (rank == 0 || rank > 8) throw ValidationError("checkpoint: bad rank for " + name);
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(in.U32());
    const int64_t n = NumElements(shape);
    in.Need(static_cast<size_t>(n) * 8);
    std::vector<double> values(static_cast<size_t>(n));
    for (double& v : values) v = in.F64();
    params.Add(name, static_cast<ParamGroup>(group), Tensor(shape, std::move(values)));
  }
  return params;
}

void SaveCheckpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot write " + path);
  const std::string bytes = SerializeParams(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("checkpoint: write failed for " + path);
}

ModelParams LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return DeserializeParams(ss.str());
}

}  // namespace hnk
