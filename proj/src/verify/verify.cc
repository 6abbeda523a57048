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

#include "hnk/verify.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "hnk/anchors.h"
#include "hnk/assign.h"
#include "hnk/errors.h"
#include "hnk/geometry.h"
#include "hnk/losses.h"
#include "hnk/metrics.h"
#include "hnk/model.h"
#include "hnk/rng.h"
#include "hnk/scene.h"
#include "hnk/tensor.h"
#include "hnk/train.h"

namespace hnk {
namespace {

constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr int kGradPoints = 10;

std::string Format(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

template <typename F>
CheckResult Timed(const std::string& name, F body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

Tensor RandomTensor(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(NumElements(shape)));
  for (double& x : v) x = rng.Uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Values with magnitude in [0.1, 1] and random sign, clear of kinks at 0.
Tensor SignedTensor(Rng& rng, Shape shape) {
  std::vector<double> v(static_cast<size_t>(NumElements(shape)));
  for (double& x : v) x = rng.Uniform(0.1, 1.0) * (rng.Uniform() < 0.5 ? -1.0 : 1.0);
  return Tensor(std::move(shape), std::move(v));
}

// Fixed random linear functional, so every output element matters.
Tensor Dot(const Tensor& t, const std::vector<double>& coeffs) {
  double s = 0.0;
  const auto v = t.values();
  for (size_t i = 0; i < v.size(); ++i) s += coeffs[i] * v[i];
  return MakeResult({1}, {s}, {t}, [coeffs](std::span<const double> g, std::span<const std::span<double>> in) {
    if (in[0].empty()) return;
    for (size_t i = 0; i < coeffs.size(); ++i) in[0][i] += g[0] * coeffs[i];
  });
}

// Wraps an op with a random projection of its output.
std::function<Tensor(const Tensor&)> Projected(Rng& rng, std::function<Tensor(const Tensor&)> op, const Tensor& x) {
  Tensor probe;
  {
    TapeScope none(nullptr);
    probe = op(x);
  }
  std::vector<double> coeffs(static_cast<size_t>(probe.size()));
  for (double& c : coeffs) c = rng.Uniform(-1.0, 1.0);
  return [op, coeffs](const Tensor& v) { return Dot(op(v), coeffs); };
}

struct GradCase {
  std::string name;
  // Builds input and scalar function for seed point `i`.
  std::function<std::pair<Tensor, std::function<Tensor(const Tensor&)>>(Rng&)> make;
};

std::vector<GradCase> PrimitiveCases() {
  using Fn = std::function<Tensor(const Tensor&)>;
  std::vector<GradCase> cases;
  auto unary = [&cases](std::string name, Shape shape, std::function<Tensor(Rng&, Shape)> input, Fn op) {
    cases.push_back({name, [=](Rng& rng) {
                       Tensor x = input(rng, shape);
                       return std::make_pair(x, Projected(rng, op, x));
                     }});
  };
  auto signed_input = [](Rng& rng, Shape s) { return SignedTensor(rng, s); };
  auto wide = [](Rng& rng, Shape s) { return RandomTensor(rng, s, -2.0, 2.0); };
  auto positive = [](Rng& rng, Shape s) { return RandomTensor(rng, s, 0.5, 2.0); };

  unary("relu", {2, 3, 4}, signed_input, [](const Tensor& x) { return Relu(x); });
  unary("sigmoid", {2, 3, 4}, wide, [](const Tensor& x) { return Sigmoid(x); });
  unary("swish", {2, 3, 4}, wide, [](const Tensor& x) { return Swish(x); });
  unary("log", {2, 3, 4}, positive, [](const Tensor& x) { return Log(x); });
  unary("softmax_channel", {3, 2, 4}, wide, [](const Tensor& x) { return SoftmaxChannel(x); });
  unary("upsample_bilinear", {2, 3, 4}, wide, [](const Tensor& x) { return UpsampleBilinear(x, 7, 5); });
  unary("downsample_stride2", {2, 4, 6}, wide, [](const Tensor& x) { return DownsampleStride2(x); });
  unary("scale", {2, 3}, wide, [](const Tensor& x) { return Scale(x, -1.7); });
  unary("reduce_sum", {2, 3, 4}, wide, [](const Tensor& x) { return ReduceSum(x); });
  unary("reduce_mean", {2, 3, 4}, wide, [](const Tensor& x) { return ReduceMean(x); });
  unary("gather", {2, 3, 4}, wide, [](const Tensor& x) { return Gather(x, {0, 5, 5, 23, 11}); });
  unary("reshape", {2, 3, 4}, wide, [](const Tensor& x) { return Reshape(x, {6, 4}); });
  unary("anchor_rows", {6, 2, 3}, wide, [](const Tensor& x) { return AnchorRows(x, 2); });

  // Multi-input primitives: differentiate each input with the others fixed.
  auto binary = [&cases](std::string name, Shape sa, Shape sb, std::function<Tensor(Rng&, Shape)> input_a,
                         std::function<Tensor(Rng&, Shape)> input_b, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    cases.push_back({name + " (first input)", [=](Rng& rng) {
                       Tensor a = input_a(rng, sa);
                       Tensor b = input_b(rng, sb);
                       return std::make_pair(a, Projected(rng, [op, b](const Tensor& x) { return op(x, b); }, a));
                     }});
    cases.push_back({name + " (second input)", [=](Rng& rng) {
                       Tensor a = input_a(rng, sa);
                       Tensor b = input_b(rng, sb);
                       return std::make_pair(b, Projected(rng, [op, a](const Tensor& x) { return op(a, x); }, b));
                     }});
  };
  binary("conv2d stride 1", {2, 5, 4}, {3, 2, 3, 3}, wide, wide,
         [](const Tensor& x, const Tensor& w) { return Conv2d(x, w, 1); });
  binary("conv2d stride 2", {2, 6, 4}, {3, 2, 3, 3}, wide, wide,
         [](const Tensor& x, const Tensor& w) { return Conv2d(x, w, 2); });
  binary("depthwise_conv2d stride 1", {3, 5, 4}, {3, 3, 3}, wide, wide,
         [](const Tensor& x, const Tensor& w) { return DepthwiseConv2d(x, w, 1); });
  binary("depthwise_conv2d stride 2", {3, 6, 4}, {3, 3, 3}, wide, wide,
         [](const Tensor& x, const Tensor& w) { return DepthwiseConv2d(x, w, 2); });
  binary("pointwise_conv2d", {3, 2, 4}, {4, 3}, wide, wide,
         [](const Tensor& x, const Tensor& w) { return PointwiseConv2d(x, w); });
  binary("bias_add", {3, 2, 4}, {3}, wide, wide, [](const Tensor& x, const Tensor& b) { return BiasAdd(x, b); });
  binary("add", {2, 3}, {2, 3}, wide, wide, [](const Tensor& a, const Tensor& b) { return Add(a, b); });
  binary("scalar_mul", {2, 3}, {1}, wide, wide, [](const Tensor& x, const Tensor& s) { return ScalarMul(x, s); });
  binary("concat_rows", {2, 3}, {4, 3}, wide, wide,
         [](const Tensor& a, const Tensor& b) { return ConcatRows({a, b}); });
  binary("add_n", {2, 3}, {2, 3}, wide, wide, [](const Tensor& a, const Tensor& b) { return AddN({a, b, a}); });

  cases.push_back({"weighted_sum (inputs)", [](Rng& rng) {
                     Tensor a = RandomTensor(rng, {2, 3}, -2, 2), b = RandomTensor(rng, {2, 3}, -2, 2);
                     Tensor w = RandomTensor(rng, {3}, 0.2, 2.0);
                     auto op = [b, w](const Tensor& x) { return WeightedSum({x, b, x}, w, kFusionEps); };
                     return std::make_pair(a, Projected(rng, op, a));
                   }});
  cases.push_back({"weighted_sum (weights)", [](Rng& rng) {
                     Tensor a = RandomTensor(rng, {2, 3}, -2, 2), b = RandomTensor(rng, {2, 3}, -2, 2);
                     Tensor w = RandomTensor(rng, {2}, 0.2, 2.0);
                     auto op = [a, b](const Tensor& x) { return WeightedSum({a, b}, x, kFusionEps); };
                     return std::make_pair(w, Projected(rng, op, w));
                   }});
  return cases;
}

// Small anchor set and ground truths for detection-loss checks.
struct DetFixture {
  std::vector<AnchorRef> anchors;
  std::vector<LabeledBox> gts;
  Assignment assignment;
};

DetFixture MakeDetFixture(Rng& rng) {
  DetFixture f;
  for (int cy = 0; cy < 3; ++cy) {
    for (int cx = 0; cx < 3; ++cx) {
      for (double s : {1.0, 2.0}) f.anchors.push_back({double(cx), double(cy), s, s, 3, 8.0});
    }
  }
  f.gts.push_back({Box::FromCenter(rng.Uniform(2, 22), rng.Uniform(2, 22), rng.Uniform(6, 16), rng.Uniform(6, 16)), 0});
  f.gts.push_back({Box::FromCenter(rng.Uniform(2, 22), rng.Uniform(2, 22), rng.Uniform(6, 16), rng.Uniform(6, 16)), 1});
  std::vector<Box> boxes = {f.gts[0].box, f.gts[1].box};
  f.assignment = Assign(f.anchors, boxes);
  return f;
}

std::vector<GradCase> LossCases() {
  std::vector<GradCase> cases;
  cases.push_back({"focal_loss", [](Rng& rng) {
                     Tensor target = RandomTensor(rng, {12}, 0, 1);
                     for (double& t : target.mutable_values()) t = t < 0.5 ? 0.0 : 1.0;
                     Tensor p = RandomTensor(rng, {12}, 0.05, 0.95);
                     return std::make_pair(p, std::function<Tensor(const Tensor&)>([target](const Tensor& x) {
                                             return FocalLoss(x, target, 0.25, 2.0);
                                           }));
                   }});
  cases.push_back({"smooth_l1", [](Rng& rng) {
                     Tensor x = RandomTensor(rng, {10}, 0.0, 0.5);
                     return std::make_pair(
                         x, std::function<Tensor(const Tensor&)>([](const Tensor& v) { return SmoothL1(v, 1.0 / 9.0); }));
                   }});
  cases.push_back({"box_residual", [](Rng& rng) {
                     Tensor target = RandomTensor(rng, {3, 4}, -2, 2);
                     Tensor pred = target.Clone();
                     for (double& v : pred.mutable_values()) v += rng.Uniform(0.05, 1.0) * (rng.Uniform() < 0.5 ? -1 : 1);
                     auto op = [target](const Tensor& x) { return SmoothL1(BoxResidual(x, target), 1.0 / 9.0); };
                     return std::make_pair(pred, std::function<Tensor(const Tensor&)>(op));
                   }});
  auto seg_case = [&cases](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> loss) {
    cases.push_back({name, [loss](Rng& rng) {
                       std::vector<uint8_t> mask(16);
                       for (uint8_t& m : mask) m = static_cast<uint8_t>(rng.UniformInt(3));
                       Tensor onehot = OneHot(mask, 3, 4, 4);
                       Tensor logits = RandomTensor(rng, {3, 4, 4}, -2, 2);
                       auto op = [loss, onehot](const Tensor& x) { return loss(SoftmaxChannel(x), onehot); };
                       return std::make_pair(logits, std::function<Tensor(const Tensor&)>(op));
                     }});
  };
  seg_case("tversky_loss", [](const Tensor& p, const Tensor& g) { return TverskyLoss(p, g, 0.7); });
  seg_case("seg_focal_loss", [](const Tensor& p, const Tensor& g) { return SegFocalLoss(p, g, 0.25, 2.0); });
  seg_case("seg_loss", [](const Tensor& p, const Tensor& g) { return SegLoss(p, g, LossWeights{}); });
  cases.push_back({"total_loss", [](Rng& rng) {
                     Tensor ds = RandomTensor(rng, {2}, 0.1, 3.0);
                     LossWeights w;
                     w.alpha = 1.3;
                     w.beta = 0.7;
                     auto op = [w](const Tensor& x) { return TotalLoss(Gather(x, {0}), Gather(x, {1}), w); };
                     return std::make_pair(ds, std::function<Tensor(const Tensor&)>(op));
                   }});
  cases.push_back({"detection_loss", [](Rng& rng) {
                     auto f = std::make_shared<DetFixture>(MakeDetFixture(rng));
                     Tensor raw = RandomTensor(rng, {static_cast<int64_t>(f->anchors.size()), 7}, -2, 2);
                     auto op = [f](const Tensor& x) {
                       return ComputeDetectionLoss(x, f->assignment, f->gts, f->anchors, LossWeights{}).total;
                     };
                     return std::make_pair(raw, std::function<Tensor(const Tensor&)>(op));
                   }});
  return cases;
}

double ModelGradientError(uint64_t seed) {
  ModelConfig cfg;
  cfg.input_w = cfg.input_h = 64;
  cfg.backbone_channels = {4, 6, 8, 10, 12};
  cfg.fpn_channels = 8;
  cfg.bifpn_repeats = 1;
  cfg.det_head_layers = 1;
  cfg.seg_fuse_channels = 8;
  cfg.anchors.levels = {3, 4, 5, 6};
  cfg.anchors.base_scale_constant = 1.0;
  ModelParams params = BuildModel(cfg, seed);
  // Perturb the initialization so biases and fusion weights are generic.
  Rng rng(seed + 1);
  for (auto& [name, entry] : params.mutable_entries()) {
    for (double& v : entry.value.mutable_values()) v += rng.Uniform(-0.05, 0.05);
  }
  SceneSpec spec;
  spec.width = spec.height = 64;
  spec.min_vehicles = 2;
  spec.max_vehicles = 3;
  spec.max_vehicle_size = 20;
  spec.seed = seed;
  const Sample sample = GenerateSample(spec, 0);
  const std::vector<AnchorRef> anchors = GenerateGrid(cfg.anchors, 64, 64);
  const PreparedSample prep = Prepare(cfg, anchors, sample);
  const LossWeights w;

  std::vector<std::pair<std::string, size_t>> picks;
  std::vector<std::string> names;
  for (const auto& [name, entry] : params.entries()) names.push_back(name);
  const int64_t total = params.NumScalars();
  for (int i = 0; i < 64; ++i) {
    int64_t k = rng.UniformInt(total);
    for (const std::string& name : names) {
      const int64_t n = params.Get(name).size();
      if (k < n) {
        picks.emplace_back(name, static_cast<size_t>(k));
        break;
      }
      k -= n;
    }
  }

  params.SetTrainable({ParamGroup::kEncoder, ParamGroup::kDetection, ParamGroup::kSegmentation});
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(&tape);
    const Tensor loss = ComputeSampleLoss(cfg, params, anchors, prep, w).total;
    tape.Backward(loss);
    for (const auto& [name, idx] : picks) analytic.push_back(tape.Gradient(params.Get(name)).values()[idx]);
  }
  params.SetTrainable({});
  double worst = 0.0;
  TapeScope none(nullptr);
  for (size_t p = 0; p < picks.size(); ++p) {
    double& v = params.Mutable(picks[p].first).mutable_values()[picks[p].second];
    const double orig = v;
    v = orig + kGradStep;
    const double up = ComputeSampleLoss(cfg, params, anchors, prep, w).total.item();
    v = orig - kGradStep;
    const double down = ComputeSampleLoss(cfg, params, anchors, prep, w).total.item();
    v = orig;
    const double numeric = (up - down) / (2.0 * kGradStep);
    worst = std::max(worst, std::abs(analytic[p] - numeric) / std::max(1.0, std::abs(analytic[p])));
  }
  return worst;
}

// --- Oracles -------------------------------------------------------------------------------

double OracleIou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// The NMS result is the unique subset S where a box is in S exactly when no
// higher-ranked member of S overlaps it beyond the threshold. Found by trying
// every subset.
std::vector<int64_t> NmsOracle(const std::vector<Box>& boxes, const std::vector<double>& scores, double thr) {
  const size_t n = boxes.size();
  auto ranks_before = [&](size_t j, size_t i) {
    return scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
  };
  for (uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool consistent = true;
    for (size_t i = 0; i < n && consistent; ++i) {
      bool suppressed = false;
      for (size_t j = 0; j < n; ++j) {
        if ((mask >> j & 1u) && ranks_before(j, i) && OracleIou(boxes[j], boxes[i]) > thr) suppressed = true;
      }
      consistent = ((mask >> i & 1u) != 0) == !suppressed;
    }
    if (!consistent) continue;
    std::vector<int64_t> kept;
    for (size_t i = 0; i < n; ++i) {
      if (mask >> i & 1u) kept.push_back(static_cast<int64_t>(i));
    }
    std::sort(kept.begin(), kept.end(), [&](int64_t a, int64_t b) { return ranks_before(size_t(a), size_t(b)); });
    return kept;
  }
  return {};
}

struct ApOracleResult {
  double ap = 0.0;
  double recall = 0.0;
};

// Recomputes the matching from scratch for every prefix of the ranking and
// integrates the precision envelope over each recall step.
ApOracleResult ApOracle(const std::vector<ImageDetections>& images, double thr, double floor) {
  struct Entry {
    double score;
    size_t img, idx;
  };
  std::vector<Entry> all;
  size_t num_gt = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    num_gt += images[i].ground_truth.size();
    for (size_t k = 0; k < images[i].predictions.size(); ++k) {
      if (images[i].predictions[k].score >= floor) all.push_back({images[i].predictions[k].score, i, k});
    }
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.img != b.img) return a.img < b.img;
    return a.idx < b.idx;
  });
  auto true_positives = [&](size_t prefix) {
    size_t tp = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      std::vector<bool> used(images[i].ground_truth.size(), false);
      for (size_t r = 0; r < prefix; ++r) {
        if (all[r].img != i) continue;
        const Box& p = images[i].predictions[all[r].idx].box;
        double best = -1.0;
        size_t best_g = 0;
        for (size_t g = 0; g < used.size(); ++g) {
          const double iou = OracleIou(p, images[i].ground_truth[g]);
          if (!used[g] && iou > best) {
            best = iou;
            best_g = g;
          }
        }
        if (best >= thr) {
          used[best_g] = true;
          ++tp;
        }
      }
    }
    return tp;
  };
  const size_t n = all.size();
  std::vector<double> prec(n + 1, 0.0), rec(n + 1, 0.0);
  for (size_t k = 1; k <= n; ++k) {
    const double tp = static_cast<double>(true_positives(k));
    prec[k] = tp / static_cast<double>(k);
    rec[k] = tp / static_cast<double>(num_gt);
  }
  ApOracleResult out;
  for (size_t k = 1; k <= n; ++k) {
    if (rec[k] <= rec[k - 1]) continue;
    double env = 0.0;
    for (size_t j = k; j <= n; ++j) env = std::max(env, prec[j]);
    out.ap += (rec[k] - rec[k - 1]) * env;
  }
  out.recall = rec[n];
  return out;
}

Box RandomBox(Rng& rng, double extent, double min_side, double max_side) {
  const double w = rng.Uniform(min_side, max_side), h = rng.Uniform(min_side, max_side);
  const double x = rng.Uniform(0, extent - w), y = rng.Uniform(0, extent - h);
  return {x, y, x + w, y + h};
}

// Direct transcription of the labeling rule.
Assignment AssignOracle(const std::vector<AnchorRef>& anchors, const std::vector<Box>& gts) {
  const size_t n = anchors.size(), g = gts.size();
  Assignment out;
  out.labels.assign(n, AnchorLabel::kNegative);
  out.gt_index.assign(n, -1);
  out.max_iou.assign(n, 0.0);
  if (g == 0) return out;
  auto owns = [&](size_t i, size_t j) {
    const double ox = gts[j].center_x() / anchors[i].stride - anchors[i].cx;
    const double oy = gts[j].center_y() / anchors[i].stride - anchors[i].cy;
    return ox >= 0 && ox < 1 && oy >= 0 && oy < 1;
  };
  auto pixel_box = [&](size_t i) {
    const AnchorRef& a = anchors[i];
    return Box::FromCenter((a.cx + 0.5) * a.stride, (a.cy + 0.5) * a.stride, a.cw * a.stride, a.ch * a.stride);
  };
  std::vector<std::vector<double>> iou(n, std::vector<double>(g));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < g; ++j) iou[i][j] = OracleIou(pixel_box(i), gts[j]);
  }
  for (size_t i = 0; i < n; ++i) {
    size_t best = 0;
    for (size_t j = 1; j < g; ++j) {
      if (iou[i][j] > iou[i][best]) best = j;
    }
    out.max_iou[i] = iou[i][best];
    const double area = (gts[best].x2 - gts[best].x1) * (gts[best].y2 - gts[best].y1);
    const double thr = area > 100.0 ? 0.5 : 0.25;
    if (iou[i][best] >= thr && owns(i, best)) {
      out.labels[i] = AnchorLabel::kPositive;
      out.gt_index[i] = static_cast<int64_t>(best);
    } else if (iou[i][best] >= 0.25 && owns(i, best)) {
      out.labels[i] = AnchorLabel::kIgnore;
    }
  }
  // Best IoU over owning anchors, -1 when the gt owns none.
  std::vector<double> gt_best(g, -1.0);
  for (size_t j = 0; j < g; ++j) {
    for (size_t i = 0; i < n; ++i) {
      if (owns(i, j)) gt_best[j] = std::max(gt_best[j], iou[i][j]);
    }
  }
  std::vector<size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return gt_best[a] != gt_best[b] ? gt_best[a] > gt_best[b] : a < b;
  });
  std::vector<bool> forced(n, false);
  for (size_t j : order) {
    int64_t pick = -1;
    for (size_t i = 0; i < n; ++i) {
      if (forced[i] || !owns(i, j)) continue;
      if (pick < 0 || iou[i][j] > iou[static_cast<size_t>(pick)][j]) pick = static_cast<int64_t>(i);
    }
    if (pick < 0) continue;
    forced[static_cast<size_t>(pick)] = true;
    out.labels[static_cast<size_t>(pick)] = AnchorLabel::kPositive;
    out.gt_index[static_cast<size_t>(pick)] = static_cast<int64_t>(j);
  }
  return out;
}

}  // namespace

CheckResult CheckGradients() {
  return Timed("gradient suite", [](CheckResult& r) {
    double worst = 0.0;
    std::string worst_name;
    int cases = 0;
    auto run = [&](const std::vector<GradCase>& list) {
      for (const GradCase& c : list) {
        Rng rng(1000 + cases++);
        for (int point = 0; point < kGradPoints; ++point) {
          auto [x, f] = c.make(rng);
          const double err = GradCheck(f, x, kGradStep);
          if (err > worst) {
            worst = err;
            worst_name = c.name;
          }
        }
      }
    };
    run(PrimitiveCases());
    run(LossCases());
    const double model_err = ModelGradientError(11);
    r.passed = worst < kGradTol && model_err < kModelGradTol;
    r.detail = std::to_string(cases) + " cases x " + std::to_string(kGradPoints) + " points, worst " +
               Format(worst) + " (" + worst_name + "); model spot-check " + Format(model_err);
  });
}

CheckResult CheckLossIdentities() {
  return Timed("closed-form loss identities", [](CheckResult& r) {
    Rng rng(21);
    double focal_dev = 0.0, dice_dev = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int64_t n = 1 + rng.UniformInt(20);
      std::vector<double> p(static_cast<size_t>(n)), t(static_cast<size_t>(n));
      double ce = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        p[size_t(i)] = rng.Uniform(0.01, 0.99);
        t[size_t(i)] = rng.Uniform() < 0.5 ? 0.0 : 1.0;
        ce += -(t[size_t(i)] * std::log(p[size_t(i)]) + (1 - t[size_t(i)]) * std::log(1 - p[size_t(i)]));
      }
      ce /= static_cast<double>(n);
      const double focal = FocalLoss(Tensor({n}, p), Tensor({n}, t), 0.5, 0.0).item();
      focal_dev = std::max(focal_dev, std::abs(focal - 0.5 * ce));

      const int64_t c = 1 + rng.UniformInt(4), px = 1 + rng.UniformInt(30);
      std::vector<double> logits(static_cast<size_t>(c * px));
      for (double& v : logits) v = rng.Uniform(-3, 3);
      std::vector<uint8_t> mask(static_cast<size_t>(px));
      for (uint8_t& m : mask) m = static_cast<uint8_t>(rng.UniformInt(c));
      const Tensor prob = SoftmaxChannel(Tensor({c, px}, logits));
      const Tensor onehot = OneHot(mask, c, 1, px);
      const Tensor g = Reshape(onehot, {c, px});
      double dice = static_cast<double>(c);
      for (int64_t k = 0; k < c; ++k) {
        double inter = 0.0, sum = 0.0;
        for (int64_t i = 0; i < px; ++i) {
          const double pv = prob.values()[size_t(k * px + i)], gv = g.values()[size_t(k * px + i)];
          inter += pv * gv;
          sum += pv + gv;
        }
        dice -= 2.0 * inter / (sum + 2.0 * kTverskyGuard);
      }
      dice_dev = std::max(dice_dev, std::abs(TverskyLoss(prob, g, 0.5).item() - dice));
    }
    const double d2 = 1.0 / 9.0;
    const double at = SmoothL1(Tensor({1}, {d2}), d2).item();
    const double below = SmoothL1(Tensor({1}, {std::nextafter(d2, 0.0)}), d2).item();
    const double quadratic = 0.5 / d2 * d2 * d2, linear = d2 - d2 / 2.0;
    const double continuity =
        std::max({std::abs(at - below), std::abs(quadratic - linear), std::abs(at - linear)});
    r.passed = focal_dev < 1e-12 && dice_dev < 1e-12 && continuity <= 1e-15;
    r.detail = "focal vs 0.5 CE " + Format(focal_dev) + ", tversky vs dice " + Format(dice_dev) +
               ", smooth-L1 jump at delta2 " + Format(continuity);
  });
}

CheckResult CheckCodecRoundtrip() {
  return Timed("codec roundtrip", [](CheckResult& r) {
    Rng rng(31);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      AnchorRef a;
      a.level = static_cast<int>(rng.UniformInt(3, 7));
      a.stride = std::ldexp(1.0, a.level);
      a.cx = static_cast<double>(rng.UniformInt(0, 40));
      a.cy = static_cast<double>(rng.UniformInt(0, 40));
      a.cw = rng.Uniform(0.3, 8.0);
      a.ch = rng.Uniform(0.3, 8.0);
      const double ox = rng.Uniform(0.001, 0.999), oy = rng.Uniform(0.001, 0.999);
      const Box gt = Box::FromCenter((a.cx + ox) * a.stride, (a.cy + oy) * a.stride, rng.Uniform(1.0, 400.0),
                                     rng.Uniform(1.0, 400.0));
      const Box back = Decode(Encode(gt, a), a);
      worst = std::max({worst, std::abs(back.x1 - gt.x1), std::abs(back.y1 - gt.y1), std::abs(back.x2 - gt.x2),
                        std::abs(back.y2 - gt.y2)});
    }
    r.passed = worst < 1e-9;
    r.detail = "10000 pairs, max coordinate error " + Format(worst) + " px";
  });
}

CheckResult CheckOracles() {
  return Timed("oracle equivalence", [](CheckResult& r) {
    Rng rng(41);
    int nms_bad = 0;
    for (int t = 0; t < 1000; ++t) {
      const size_t n = static_cast<size_t>(rng.UniformInt(0, 8));
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (size_t i = 0; i < n; ++i) {
        boxes.push_back(RandomBox(rng, 40, 4, 20));
        // Coarse scores so ties occur.
        scores.push_back(static_cast<double>(rng.UniformInt(1, 6)) / 6.0);
      }
      const double thr = rng.Uniform(0.1, 0.9);
      if (Nms(boxes, scores, thr) != NmsOracle(boxes, scores, thr)) ++nms_bad;
    }

    int ap_bad = 0;
    for (int t = 0; t < 500; ++t) {
      std::vector<ImageDetections> images(static_cast<size_t>(rng.UniformInt(1, 4)));
      size_t gts = 0;
      for (ImageDetections& img : images) {
        const int64_t ng = rng.UniformInt(0, 3), np = rng.UniformInt(0, 5);
        for (int64_t g = 0; g < ng; ++g) img.ground_truth.push_back(RandomBox(rng, 30, 5, 15));
        for (int64_t p = 0; p < np; ++p) {
          Box b = img.ground_truth.empty() || rng.Uniform() < 0.3
                      ? RandomBox(rng, 30, 5, 15)
                      : img.ground_truth[size_t(rng.UniformInt(int64_t(img.ground_truth.size())))];
          b.x1 += rng.Uniform(-3, 3);
          b.x2 += rng.Uniform(-3, 3);
          if (b.x2 < b.x1) std::swap(b.x1, b.x2);
          img.predictions.push_back({b, static_cast<double>(rng.UniformInt(0, 10)) / 10.0});
        }
        gts += img.ground_truth.size();
      }
      const ApResult got = AveragePrecision(images, 0.5, kDefaultConfFloor);
      if (gts == 0) {
        ap_bad += got.defined;
        continue;
      }
      const ApOracleResult want = ApOracle(images, 0.5, kDefaultConfFloor);
      if (!got.defined || std::abs(got.ap - want.ap) > 1e-12 || std::abs(got.recall - want.recall) > 1e-12) ++ap_bad;
    }

    int assign_bad = 0;
    for (int t = 0; t < 200; ++t) {
      std::vector<AnchorRef> anchors;
      const size_t count = static_cast<size_t>(rng.UniformInt(1, 50));
      for (size_t i = 0; i < count; ++i) {
        AnchorRef a;
        a.level = static_cast<int>(rng.UniformInt(3, 4));
        a.stride = std::ldexp(1.0, a.level);
        a.cx = static_cast<double>(rng.UniformInt(0, 64 / int64_t(a.stride) - 1));
        a.cy = static_cast<double>(rng.UniformInt(0, 64 / int64_t(a.stride) - 1));
        a.cw = rng.Uniform(0.5, 3.0);
        a.ch = rng.Uniform(0.5, 3.0);
        anchors.push_back(a);
      }
      std::vector<Box> gts;
      const int64_t ng = rng.UniformInt(0, 4);
      for (int64_t g = 0; g < ng; ++g) gts.push_back(RandomBox(rng, 64, 4, 30));
      const Assignment got = Assign(anchors, gts);
      const Assignment want = AssignOracle(anchors, gts);
      if (got.labels != want.labels || got.gt_index != want.gt_index || got.max_iou != want.max_iou) ++assign_bad;
    }
    r.passed = nms_bad == 0 && ap_bad == 0 && assign_bad == 0;
    r.detail = "mismatches: nms " + std::to_string(nms_bad) + "/1000, ap " + std::to_string(ap_bad) +
               "/500, assign " + std::to_string(assign_bad) + "/200";
  });
}

CheckResult CheckAnchorGeometry() {
  return Timed("anchor geometry", [](CheckResult& r) {
    const AnchorConfig paper;
    const int64_t count = CountAnchors(paper, 640, 384);
    const std::vector<AnchorRef> grid = GenerateGrid(paper, 640, 384);
    int64_t p7 = 0;
    double max_cx = 0, max_cy = 0;
    for (const AnchorRef& a : grid) {
      if (a.level != 7) continue;
      ++p7;
      max_cx = std::max(max_cx, a.cx);
      max_cy = std::max(max_cy, a.cy);
    }
    const bool grid_ok = count == 46035 && static_cast<int64_t>(grid.size()) == count && p7 == 15 * 9 &&
                         max_cx == 4 && max_cy == 2;

    SceneSpec spec;
    std::vector<BoxSize> sizes;
    for (const Sample& s : Generate(spec, 400)) {
      for (const LabeledBox& b : s.boxes) sizes.push_back({b.box.width(), b.box.height()});
    }
    const KMeansResult fit = KMeansFit(sizes, 9, 7, 100);
    std::vector<BoxSize> fitted;
    for (const SizeCluster& c : fit.clusters) fitted.push_back({c.w, c.h});
    const double fitted_iou = MeanBestIou(sizes, fitted);
    const double paper_iou = MeanBestIou(sizes, PriorSizes(paper));
    r.passed = grid_ok && fitted_iou >= paper_iou;
    r.detail = "640x384 levels 3-7: " + std::to_string(count) + " anchors, P7 grid " +
               std::to_string(int(max_cx) + 1) + "x" + std::to_string(int(max_cy) + 1) + "; mean best IoU fitted " +
               Format(fitted_iou) + " vs default " + Format(paper_iou) + " over " + std::to_string(sizes.size()) +
               " boxes";
  });
}

CheckResult CheckFreezeSoundness() {
  return Timed("freeze soundness", [](CheckResult& r) {
    ModelConfig cfg;
    cfg.input_w = cfg.input_h = 64;
    cfg.backbone_channels = {4, 6, 8, 10, 12};
    cfg.fpn_channels = 8;
    cfg.bifpn_repeats = 1;
    cfg.det_head_layers = 1;
    cfg.seg_fuse_channels = 8;
    cfg.anchors.levels = {3, 4, 5, 6};
    cfg.anchors.base_scale_constant = 1.0;
    SceneSpec spec;
    spec.width = spec.height = 64;
    spec.max_vehicle_size = 20;
    const std::vector<Sample> data = Generate(spec, 12);
    StageSchedule schedule = StageSchedule::Default();
    for (StageSpec& s : schedule.stages) {
      s.threshold = -1.0;  // never converge early
      s.max_epochs = 2;
    }
    TrainOptions options;
    options.batch_size = 4;
    const TrainResult res = StagedTrain(cfg, BuildModel(cfg, 3), std::span(data).subspan(0, 8),
                                        std::span(data).subspan(8), schedule, LossWeights{}, options);
    constexpr int kEnc = 0, kDet = 1, kSeg = 2;
    bool ok = !res.aborted && res.stages.size() == 3;
    if (ok) {
      const StageRecord& s1 = res.stages[0];
      const StageRecord& s2 = res.stages[1];
      ok = s1.before[kSeg] == s1.after[kSeg] && s2.before[kEnc] == s2.after[kEnc] &&
           s2.before[kDet] == s2.after[kDet];
      for (const EpochRecord& e : res.epochs) {
        if (e.stage == 1) ok = ok && e.checksums[kSeg] == s1.before[kSeg];
        if (e.stage == 2) ok = ok && e.checksums[kEnc] == s2.before[kEnc] && e.checksums[kDet] == s2.before[kDet];
      }
      // The trained groups did move.
      ok = ok && s1.before[kEnc] != s1.after[kEnc] && s1.before[kDet] != s1.after[kDet] &&
           s2.before[kSeg] != s2.after[kSeg];
    }
    r.passed = ok;
    r.detail = ok ? "stage 1 leaves seg and stage 2 leaves enc, det bitwise unchanged at every epoch"
                  : "a frozen group changed or training aborted";
  });
}

CheckResult CheckCostCounter() {
  return Timed("parameter and MAC counter", [](CheckResult& r) {
    const LayerCost sep = SeparableConvCost(3, 8, 3, 4, 4);
    const LayerCost conv = ConvCost(3, 8, 3, 4, 4, true);
    const LayerCost pw = ConvCost(16, 32, 1, 8, 8, true);
    // Hand counts: 3*9 + 3 + 3*8 + 8; 27*8 + 8; 16*32 + 32 params.
    // MACs: (27 + 24) * 16; 27 * 8 * 16; 16 * 32 * 64.
    bool ok = sep.params == 62 && conv.params == 224 && pw.params == 544 && sep.macs == 816 && conv.macs == 3456 &&
              pw.macs == 32768;
    int64_t sweep_bad = 0;
    for (int64_t ci = 1; ci <= 64; ++ci) {
      for (int64_t co = 1; co <= 64; ++co) {
        const int64_t s = SeparableConvCost(ci, co, 3, 1, 1).params, c = ConvCost(ci, co, 3, 1, 1, true).params;
        // With biases the difference is ci * (8 * co - 10): a single output
        // channel is the only case where separable is not smaller.
        const bool smaller = s < c;
        if (smaller != (co >= 2)) ++sweep_bad;
      }
    }
    ok = ok && sweep_bad == 0;
    r.passed = ok;
    r.detail = "separable 3->8 k3: " + std::to_string(sep.params) + " params, regular: " +
               std::to_string(conv.params) + ", pointwise 16->32: " + std::to_string(pw.params) +
               "; sweep 1..64 mismatches " + std::to_string(sweep_bad);
  });
}

CheckResult CheckScheduler() {
  return Timed("plateau scheduler", [](CheckResult& r) {
    const std::vector<double> improving = {5.0, 4.0, 3.0};
    const std::vector<double> stagnant = {5.0, 5.0, 5.0, 5.0};
    // 2e-4 - 1e-4 is exactly 1e-4 in binary64, so the second entry improves by
    // exactly min_delta.
    const std::vector<double> boundary = {2e-4, 1e-4, 1e-4, 1e-4};
    const std::vector<double> long_run = {5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 4.0};
    bool ok = PlateauTrace(improving, 1e-3) == std::vector<double>{1e-3, 1e-3, 1e-3};
    ok = ok && PlateauTrace(stagnant, 1e-3) == std::vector<double>{1e-3, 1e-3, 1e-3, 1e-4};
    ok = ok && PlateauTrace(boundary, 1e-3) == std::vector<double>{1e-3, 1e-3, 1e-3, 1e-4};
    ok = ok && PlateauTrace(long_run, 1e-3) == std::vector<double>{1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-5, 1e-5};
    const std::vector<double> floor_trace = PlateauTrace(std::vector<double>(40, 1.0), 1e-3);
    ok = ok && floor_trace.back() == 1e-7 && std::is_sorted(floor_trace.rbegin(), floor_trace.rend());
    r.passed = ok;
    r.detail = ok ? "improving, stagnant, boundary, repeated and floor traces match" : "trace mismatch";
  });
}

std::vector<CheckResult> RunSelftest() {
  return {CheckGradients(),      CheckLossIdentities(),  CheckCodecRoundtrip(), CheckOracles(),
          CheckAnchorGeometry(), CheckFreezeSoundness(), CheckCostCounter(),    CheckScheduler()};
}

}  // namespace hnk
