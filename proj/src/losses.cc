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

#include "hnk/losses.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "hnk/errors.h"

namespace hnk {
namespace {

void RequireSameShape(const Tensor& a, const Tensor& b, const char* name) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw ValidationError(std::string(name) + ": shape mismatch " +
                          (a.defined() ? ShapeToString(a.shape()) : std::string("undefined")) + " vs " +
                          (b.defined() ? ShapeToString(b.shape()) : std::string("undefined")));
  }
}

void RequireBinary(const Tensor& t, const char* name) {
  for (double v : t.values()) {
    if (v != 0.0 && v != 1.0) throw ValidationError(std::string(name) + ": targets must be 0 or 1");
  }
}

double Clamp(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// -a (1 - q)^gamma log q and its derivative in q.
double FocalTerm(double q, double a, double gamma) { return -a * std::pow(1.0 - q, gamma) * std::log(q); }

double FocalTermGrad(double q, double a, double gamma) {
  const double one_minus = 1.0 - q;
  const double dpow = gamma == 0.0 ? 0.0 : gamma * std::pow(one_minus, gamma - 1.0);
  return -a * (-dpow * std::log(q) + std::pow(one_minus, gamma) / q);
}

}  // namespace

void LossWeights::Validate() const {
  const double all[] = {alpha, beta, alpha1, alpha2, alpha3, lambda_seg, gamma_focal, alpha_focal, delta2};
  for (double v : all) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("losses: weights must be positive and finite");
  }
  if (!(phi > 0.0 && phi < 1.0)) throw ValidationError("losses: phi must lie in (0, 1)");
  if (!(alpha_focal < 1.0)) throw ValidationError("losses: alpha_focal must lie in (0, 1)");
}

Tensor FocalLoss(const Tensor& pred_prob, const Tensor& target, double alpha_focal, double gamma_focal) {
  RequireSameShape(pred_prob, target, "focal_loss");
  RequireBinary(target, "focal_loss");
  CheckFinite(pred_prob, "focal_loss");
  const auto p = pred_prob.values();
  const auto t = target.values();
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pc = Clamp(p[i]);
    const bool pos = t[i] == 1.0;
    total += FocalTerm(pos ? pc : 1.0 - pc, pos ? alpha_focal : 1.0 - alpha_focal, gamma_focal);
  }
  auto backward = [pred_prob, target, alpha_focal, gamma_focal, n](
                      std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    const auto p = pred_prob.values();
    const auto t = target.values();
    for (size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
      const bool pos = t[i] == 1.0;
      const double q = pos ? p[i] : 1.0 - p[i];
      const double d = FocalTermGrad(q, pos ? alpha_focal : 1.0 - alpha_focal, gamma_focal);
      in_grads[0][i] += grad[0] * (pos ? d : -d) / n;
    }
  };
  return MakeResult({1}, {total / n}, {pred_prob}, backward);
}

Tensor SmoothL1(const Tensor& x, double delta2) {
  if (!x.defined()) throw ValidationError("smooth_l1: input is undefined");
  if (!(delta2 > 0.0)) throw ValidationError("smooth_l1: delta2 must be positive");
  CheckFinite(x, "smooth_l1");
  const double delta1 = 0.5 / delta2;
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) {
    if (v < 0.0) throw ValidationError("smooth_l1: inputs must be non-negative");
    total += v < delta2 ? delta1 * v * v : v - 0.5 * delta2;
  }
  const double n = static_cast<double>(xv.size());
  auto backward = [x, delta1, delta2, n](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    const auto xv = x.values();
    for (size_t i = 0; i < xv.size(); ++i) {
      const double d = xv[i] < delta2 ? 2.0 * delta1 * xv[i] : 1.0;
      in_grads[0][i] += grad[0] * d / n;
    }
  };
  return MakeResult({1}, {total / n}, {x}, backward);
}

Tensor BoxResidual(const Tensor& pred, const Tensor& target) {
  RequireSameShape(pred, target, "box_residual");
  if (pred.rank() != 2) throw ValidationError("box_residual: expected (P, 4) tensors");
  CheckFinite(pred, "box_residual");
  CheckFinite(target, "box_residual");
  const int64_t rows = pred.dim(0), cols = pred.dim(1);
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  const auto p = pred.values();
  const auto t = target.values();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      const size_t i = static_cast<size_t>(r * cols + c);
      out[static_cast<size_t>(r)] += std::abs(p[i] - t[i]);
    }
  }
  auto backward = [pred, target, rows, cols](std::span<const double> grad,
                                            std::span<const std::span<double>> in_grads) {
    const auto p = pred.values();
    const auto t = target.values();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        const size_t i = static_cast<size_t>(r * cols + c);
        const double diff = p[i] - t[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        in_grads[0][i] += grad[static_cast<size_t>(r)] * sign;
      }
    }
  };
  return MakeResult({rows}, std::move(out), {pred}, backward);
}

Tensor TverskyLoss(const Tensor& pred_prob, const Tensor& gt_onehot, double phi) {
  RequireSameShape(pred_prob, gt_onehot, "tversky_loss");
  RequireBinary(gt_onehot, "tversky_loss");
  CheckFinite(pred_prob, "tversky_loss");
  const int64_t c = pred_prob.dim(0), inner = pred_prob.size() / c;
  const auto p = pred_prob.values();
  const auto g = gt_onehot.values();
  std::vector<double> tp(static_cast<size_t>(c), 0.0), denom(static_cast<size_t>(c), 0.0);
  double loss = static_cast<double>(c);
  for (int64_t k = 0; k < c; ++k) {
    double t = 0.0, fn = 0.0, fp = 0.0;
    for (int64_t j = 0; j < inner; ++j) {
      const size_t i = static_cast<size_t>(k * inner + j);
      t += p[i] * g[i];
      fn += (1.0 - p[i]) * g[i];
      fp += p[i] * (1.0 - g[i]);
    }
    tp[static_cast<size_t>(k)] = t;
    denom[static_cast<size_t>(k)] = t + phi * fn + (1.0 - phi) * fp + kTverskyGuard;
    loss -= t / denom[static_cast<size_t>(k)];
  }
  auto backward = [gt_onehot, tp, denom, phi, c, inner](std::span<const double> grad,
                                                       std::span<const std::span<double>> in_grads) {
    const auto g = gt_onehot.values();
    for (int64_t k = 0; k < c; ++k) {
      const double d = denom[static_cast<size_t>(k)];
      const double t = tp[static_cast<size_t>(k)];
      for (int64_t j = 0; j < inner; ++j) {
        const size_t i = static_cast<size_t>(k * inner + j);
        // dD/dp = 1 - phi for every pixel.
        const double dratio = (g[i] * d - t * (1.0 - phi)) / (d * d);
        in_grads[0][i] -= grad[0] * dratio;
      }
    }
  };
  return MakeResult({1}, {loss}, {pred_prob}, backward);
}

Tensor SegFocalLoss(const Tensor& pred_prob, const Tensor& gt_onehot, double alpha_focal, double gamma_focal) {
  RequireSameShape(pred_prob, gt_onehot, "seg_focal_loss");
  RequireBinary(gt_onehot, "seg_focal_loss");
  CheckFinite(pred_prob, "seg_focal_loss");
  const auto p = pred_prob.values();
  const auto g = gt_onehot.values();
  const double pixels = static_cast<double>(pred_prob.size() / pred_prob.dim(0));
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (g[i] == 1.0) total += FocalTerm(Clamp(p[i]), alpha_focal, gamma_focal);
  }
  auto backward = [pred_prob, gt_onehot, alpha_focal, gamma_focal, pixels](
                      std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    const auto p = pred_prob.values();
    const auto g = gt_onehot.values();
    for (size_t i = 0; i < p.size(); ++i) {
      if (g[i] != 1.0 || p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
      in_grads[0][i] += grad[0] * FocalTermGrad(p[i], alpha_focal, gamma_focal) / pixels;
    }
  };
  return MakeResult({1}, {total / pixels}, {pred_prob}, backward);
}

Tensor SegLoss(const Tensor& pred_prob, const Tensor& gt_onehot, const LossWeights& w) {
  const Tensor tversky = TverskyLoss(pred_prob, gt_onehot, w.phi);
  if (w.lambda_seg == 0.0) return tversky;
  return Add(tversky, Scale(SegFocalLoss(pred_prob, gt_onehot, w.alpha_focal, w.gamma_focal), w.lambda_seg));
}

Tensor TotalLoss(const Tensor& det, const Tensor& seg, const LossWeights& w) {
  std::vector<Tensor> terms;
  if (det.defined() && w.alpha != 0.0) terms.push_back(Scale(det, w.alpha));
  if (seg.defined() && w.beta != 0.0) terms.push_back(Scale(seg, w.beta));
  if (terms.empty()) {
    if (!det.defined() && !seg.defined()) throw ValidationError("total_loss: both terms are undefined");
    return Tensor::Scalar(0.0);
  }
  for (const Tensor& t : terms) {
    if (t.size() != 1) throw ValidationError("total_loss: terms must be scalars");
  }
  return terms.size() == 1 ? terms[0] : AddN(terms);
}

RawPrediction RegressionTarget(const Box& gt, const AnchorRef& anchor) {
  constexpr double kEdge = 1e-3;
  const double ox = std::clamp(gt.center_x() / anchor.stride - anchor.cx, kEdge, 1.0 - kEdge);
  const double oy = std::clamp(gt.center_y() / anchor.stride - anchor.cy, kEdge, 1.0 - kEdge);
  const Box nudged = Box::FromCenter((anchor.cx + ox) * anchor.stride, (anchor.cy + oy) * anchor.stride,
                                     gt.width(), gt.height());
  return Encode(nudged, anchor);
}

DetectionLoss ComputeDetectionLoss(const Tensor& det_raw, const Assignment& assignment,
                                   std::span<const LabeledBox> gts, std::span<const AnchorRef> anchors,
                                   const LossWeights& w) {
  if (!det_raw.defined() || det_raw.rank() != 2 || det_raw.dim(1) <= kClassColumn) {
    throw ValidationError("detection_loss: det_raw must be (anchors, 5 + classes)");
  }
  const int64_t rows = det_raw.dim(0), cols = det_raw.dim(1), num_classes = cols - kClassColumn;
  if (static_cast<size_t>(rows) != anchors.size() || assignment.labels.size() != anchors.size()) {
    throw ValidationError("detection_loss: " + std::to_string(rows) + " rows, " + std::to_string(anchors.size()) +
                          " anchors, " + std::to_string(assignment.labels.size()) + " labels");
  }

  std::vector<int64_t> obj_idx, cls_idx, box_idx;
  std::vector<double> obj_target, cls_target, box_target;
  for (int64_t r = 0; r < rows; ++r) {
    const AnchorLabel label = assignment.labels[static_cast<size_t>(r)];
    if (label == AnchorLabel::kIgnore) continue;
    obj_idx.push_back(r * cols + kObjColumn);
    obj_target.push_back(label == AnchorLabel::kPositive ? 1.0 : 0.0);
    if (label != AnchorLabel::kPositive) continue;
    const LabeledBox& gt = gts[static_cast<size_t>(assignment.gt_index[static_cast<size_t>(r)])];
    if (gt.class_id < 0 || gt.class_id >= num_classes) {
      throw ValidationError("detection_loss: class id " + std::to_string(gt.class_id) + " out of range");
    }
    for (int64_t c = 0; c < num_classes; ++c) {
      cls_idx.push_back(r * cols + kClassColumn + c);
      cls_target.push_back(c == gt.class_id ? 1.0 : 0.0);
    }
    const RawPrediction t = RegressionTarget(gt.box, anchors[static_cast<size_t>(r)]);
    for (int64_t c = 0; c < kBoxColumns; ++c) box_idx.push_back(r * cols + c);
    box_target.insert(box_target.end(), {t.rx, t.ry, t.rw, t.rh});
  }

  DetectionLoss out;
  out.num_positive = static_cast<int64_t>(box_idx.size()) / kBoxColumns;
  std::vector<Tensor> terms;
  if (!obj_idx.empty()) {
    const int64_t n = static_cast<int64_t>(obj_idx.size());
    const Tensor obj = FocalLoss(Sigmoid(Gather(det_raw, std::move(obj_idx))), Tensor({n}, std::move(obj_target)),
                                 w.alpha_focal, w.gamma_focal);
    out.obj_loss = obj.item();
    out.obj_term = w.alpha2 * out.obj_loss;
    terms.push_back(Scale(obj, w.alpha2));
  }
  if (out.num_positive > 0) {
    const int64_t n = static_cast<int64_t>(cls_idx.size());
    const Tensor cls = FocalLoss(Sigmoid(Gather(det_raw, std::move(cls_idx))), Tensor({n}, std::move(cls_target)),
                                 w.alpha_focal, w.gamma_focal);
    out.class_loss = cls.item();
    out.class_term = w.alpha1 * out.class_loss;
    terms.push_back(Scale(cls, w.alpha1));

    const Tensor pred = Reshape(Gather(det_raw, std::move(box_idx)), {out.num_positive, kBoxColumns});
    const Tensor box = SmoothL1(BoxResidual(pred, Tensor({out.num_positive, kBoxColumns}, std::move(box_target))),
                                w.delta2);
    out.box_loss = box.item();
    out.box_term = w.alpha3 * out.box_loss;
    terms.push_back(Scale(box, w.alpha3));
  }
  out.total = terms.empty() ? Tensor::Scalar(0.0) : (terms.size() == 1 ? terms[0] : AddN(terms));
  return out;
}

Tensor OneHot(std::span<const uint8_t> mask, int64_t num_classes, int64_t height, int64_t width) {
  if (static_cast<int64_t>(mask.size()) != height * width) {
    throw ValidationError("one_hot: mask has " + std::to_string(mask.size()) + " pixels, expected " +
                          std::to_string(height * width));
  }
  std::vector<double> out(static_cast<size_t>(num_classes * height * width), 0.0);
  const int64_t plane = height * width;
  for (int64_t i = 0; i < plane; ++i) {
    const int64_t c = mask[static_cast<size_t>(i)];
    if (c >= num_classes) throw ValidationError("one_hot: class " + std::to_string(c) + " out of range");
    out[static_cast<size_t>(c * plane + i)] = 1.0;
  }
  return Tensor({num_classes, height, width}, std::move(out));
}

}  // namespace hnk
