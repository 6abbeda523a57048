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

#include "hnk/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "hnk/errors.h"

namespace hnk {
namespace {

thread_local Tape* active_tape = nullptr;

[[noreturn]] void ShapeFail(const char* primitive, const std::string& detail) {
  throw ValidationError(std::string(primitive) + ": " + detail);
}

void RequireRank(const Tensor& t, int64_t rank, const char* primitive, const char* what) {
  if (!t.defined()) ShapeFail(primitive, std::string(what) + " is undefined");
  if (t.rank() != rank) {
    ShapeFail(primitive, std::string(what) + " must have rank " + std::to_string(rank) +
                             ", got " + ShapeToString(t.shape()));
  }
}

bool AnyRequiresGrad(const std::vector<Tensor>& inputs) {
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

int64_t FloorDiv(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int64_t CeilDiv(int64_t a, int64_t b) { return -FloorDiv(-a, b); }

// Output positions o in [0, out) whose input o*stride + k - pad lies in [0, in).
std::pair<int64_t, int64_t> ValidRange(int64_t in, int64_t out, int64_t k, int64_t pad,
                                       int64_t stride) {
  const int64_t lo = std::max<int64_t>(0, CeilDiv(pad - k, stride));
  const int64_t hi = std::min<int64_t>(out - 1, FloorDiv(in - 1 + pad - k, stride));
  return {lo, hi};
}

struct ConvGeometry {
  int64_t h, w, out_h, out_w, k, pad, stride;
};

ConvGeometry MakeGeometry(const char* primitive, int64_t h, int64_t w, int64_t k, int stride) {
  if (k % 2 != 1) ShapeFail(primitive, "kernel size must be odd, got " + std::to_string(k));
  if (stride != 1 && stride != 2) {
    ShapeFail(primitive, "stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (stride == 2 && (h % 2 != 0 || w % 2 != 0)) {
    ShapeFail(primitive, "stride 2 needs even spatial size, got " + std::to_string(h) + "x" +
                             std::to_string(w));
  }
  const int64_t pad = k / 2;
  return {h, w, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1, k, pad, stride};
}

// Accumulates one k x k correlation of a single input plane into a single
// output plane: out[oy, ox] += sum_{ky,kx} kernel[ky, kx] * in[oy*s+ky-p, ox*s+kx-p].
void CorrelatePlane(const double* in, const double* kernel, double* out, const ConvGeometry& g) {
  for (int64_t ky = 0; ky < g.k; ++ky) {
    const auto [oy_lo, oy_hi] = ValidRange(g.h, g.out_h, ky, g.pad, g.stride);
    for (int64_t kx = 0; kx < g.k; ++kx) {
      const double kv = kernel[ky * g.k + kx];
      if (kv == 0.0) continue;
      const auto [ox_lo, ox_hi] = ValidRange(g.w, g.out_w, kx, g.pad, g.stride);
      for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
        const double* in_row = in + (oy * g.stride + ky - g.pad) * g.w + (kx - g.pad);
        double* out_row = out + oy * g.out_w;
        if (g.stride == 1) {
          for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) out_row[ox] += kv * in_row[ox];
        } else {
          for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) out_row[ox] += kv * in_row[ox * 2];
        }
      }
    }
  }
}

// Backward of CorrelatePlane for one (input plane, output plane) pair.
// in_grad and kernel_grad may be null when not needed.
void CorrelatePlaneBackward(const double* in, const double* kernel, const double* out_grad,
                            double* in_grad, double* kernel_grad, const ConvGeometry& g) {
  for (int64_t ky = 0; ky < g.k; ++ky) {
    const auto [oy_lo, oy_hi] = ValidRange(g.h, g.out_h, ky, g.pad, g.stride);
    for (int64_t kx = 0; kx < g.k; ++kx) {
      const double kv = kernel[ky * g.k + kx];
      const auto [ox_lo, ox_hi] = ValidRange(g.w, g.out_w, kx, g.pad, g.stride);
      double acc = 0.0;
      for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
        const int64_t offset = (oy * g.stride + ky - g.pad) * g.w + (kx - g.pad);
        const double* g_row = out_grad + oy * g.out_w;
        const double* in_row = in + offset;
        const int64_t s = g.stride;
        if (in_grad != nullptr && kv != 0.0) {
          double* ig_row = in_grad + offset;
          for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) ig_row[ox * s] += kv * g_row[ox];
        }
        if (kernel_grad != nullptr) {
          for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += g_row[ox] * in_row[ox * s];
        }
      }
      if (kernel_grad != nullptr) kernel_grad[ky * g.k + kx] += acc;
    }
  }
}

template <typename F, typename D>
Tensor Elementwise(const Tensor& x, const char* primitive, F forward, D derivative) {
  if (!x.defined()) ShapeFail(primitive, "input is undefined");
  CheckFinite(x, primitive);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  auto backward = [x, derivative](std::span<const double> g,
                                  std::span<const std::span<double>> in_grads) {
    const auto xv = x.values();
    std::span<double> gx = in_grads[0];
    for (size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * derivative(xv[i]);
  };
  return MakeResult(x.shape(), std::move(out), {x}, backward);
}

double StableSigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ")";
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw ValidationError("tensor: dimensions must be positive, got " +
                                      ShapeToString(shape));
  }
  if (NumElements(shape) != static_cast<int64_t>(values.size())) {
    throw ValidationError("tensor: shape " + ShapeToString(shape) + " needs " +
                          std::to_string(NumElements(shape)) + " values, got " +
                          std::to_string(values.size()));
  }
  impl_ = std::make_shared<Impl>(Impl{std::move(shape), std::move(values), requires_grad});
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) { return Full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::Full(Shape shape, double value, bool requires_grad) {
  const int64_t n = NumElements(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::Scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ValidationError("item: tensor has " + std::to_string(size()) + " elements");
  return impl_->values[0];
}

Tensor Tensor::Clone() const {
  return Tensor(impl_->shape, impl_->values, impl_->requires_grad);
}

// --- Tape -------------------------------------------------------------------

void Tape::Record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
  nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
}

void Tape::Backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ValidationError("backward: root must be a single-element tensor, got " +
                          (root.defined() ? ShapeToString(root.shape()) : std::string("undefined")));
  }
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output.id() == root.id(); });
  if (it == nodes_.rend()) throw ValidationError("backward: root was not produced on this tape");

  grads_.clear();
  grads_[root.id()] = {1.0};
  std::vector<std::span<double>> in_grads;
  for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) {
    auto out_it = grads_.find(node->output.id());
    if (out_it == grads_.end()) continue;
    in_grads.clear();
    for (const Tensor& input : node->inputs) {
      if (!input.requires_grad()) {
        in_grads.emplace_back();
        continue;
      }
      auto [slot, inserted] = grads_.try_emplace(input.id());
      if (inserted) slot->second.assign(static_cast<size_t>(input.size()), 0.0);
      in_grads.emplace_back(slot->second);
    }
    node->backward(out_it->second, in_grads);
    // Every consumer of this output was recorded later and has already run.
    grads_.erase(node->output.id());
  }
}

Tensor Tape::Gradient(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::Zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

bool Tape::HasGradient(const Tensor& t) const { return grads_.count(t.id()) > 0; }

void Tape::Clear() {
  nodes_.clear();
  grads_.clear();
}

TapeScope::TapeScope(Tape* tape) : previous_(active_tape) { active_tape = tape; }
TapeScope::~TapeScope() { active_tape = previous_; }

Tape* ActiveTape() { return active_tape; }

Tensor MakeResult(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                  Tape::BackwardFn backward) {
  Tape* tape = active_tape;
  const bool record = tape != nullptr && AnyRequiresGrad(inputs);
  Tensor out(std::move(shape), std::move(values), record);
  if (record) tape->Record(inputs, out, std::move(backward));
  return out;
}

void CheckFinite(const Tensor& t, const char* primitive) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(primitive) + ": non-finite input");
  }
}

// --- Convolutions -----------------------------------------------------------

Tensor Conv2d(const Tensor& x, const Tensor& w, int stride) {
  RequireRank(x, 3, "conv2d", "input");
  RequireRank(w, 4, "conv2d", "weight");
  const int64_t ci = x.dim(0), co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci) {
    ShapeFail("conv2d", "input has " + std::to_string(ci) + " channels but weight " +
                            ShapeToString(w.shape()) + " expects " + std::to_string(w.dim(1)));
  }
  if (w.dim(3) != k) ShapeFail("conv2d", "kernel must be square, got " + ShapeToString(w.shape()));
  CheckFinite(x, "conv2d");
  CheckFinite(w, "conv2d");
  const ConvGeometry g = MakeGeometry("conv2d", x.dim(1), x.dim(2), k, stride);
  const int64_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w, kk = k * k;
  std::vector<double> out(static_cast<size_t>(co * out_plane), 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (int64_t o = 0; o < co; ++o) {
    for (int64_t i = 0; i < ci; ++i) {
      CorrelatePlane(xv + i * in_plane, wv + (o * ci + i) * kk, out.data() + o * out_plane, g);
    }
  }
  auto backward = [x, w, g, ci, co](std::span<const double> grad,
                                    std::span<const std::span<double>> in_grads) {
    const int64_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w, kk = g.k * g.k;
    double* gx = in_grads[0].empty() ? nullptr : in_grads[0].data();
    double* gw = in_grads[1].empty() ? nullptr : in_grads[1].data();
    for (int64_t o = 0; o < co; ++o) {
      for (int64_t i = 0; i < ci; ++i) {
        CorrelatePlaneBackward(x.values().data() + i * in_plane, w.values().data() + (o * ci + i) * kk,
                               grad.data() + o * out_plane, gx ? gx + i * in_plane : nullptr,
                               gw ? gw + (o * ci + i) * kk : nullptr, g);
      }
    }
  };
  return MakeResult({co, g.out_h, g.out_w}, std::move(out), {x, w}, backward);
}

Tensor DepthwiseConv2d(const Tensor& x, const Tensor& w, int stride) {
  RequireRank(x, 3, "depthwise_conv2d", "input");
  RequireRank(w, 3, "depthwise_conv2d", "weight");
  const int64_t c = x.dim(0), k = w.dim(1);
  if (w.dim(0) != c || w.dim(2) != k) {
    ShapeFail("depthwise_conv2d", "weight " + ShapeToString(w.shape()) + " does not match " +
                                      std::to_string(c) + " input channels");
  }
  CheckFinite(x, "depthwise_conv2d");
  CheckFinite(w, "depthwise_conv2d");
  const ConvGeometry g = MakeGeometry("depthwise_conv2d", x.dim(1), x.dim(2), k, stride);
  const int64_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w, kk = k * k;
  std::vector<double> out(static_cast<size_t>(c * out_plane), 0.0);
  for (int64_t i = 0; i < c; ++i) {
    CorrelatePlane(x.values().data() + i * in_plane, w.values().data() + i * kk,
                   out.data() + i * out_plane, g);
  }
  auto backward = [x, w, g, c](std::span<const double> grad,
                               std::span<const std::span<double>> in_grads) {
    const int64_t in_plane = g.h * g.w, out_plane = g.out_h * g.out_w, kk = g.k * g.k;
    double* gx = in_grads[0].empty() ? nullptr : in_grads[0].data();
    double* gw = in_grads[1].empty() ? nullptr : in_grads[1].data();
    for (int64_t i = 0; i < c; ++i) {
      CorrelatePlaneBackward(x.values().data() + i * in_plane, w.values().data() + i * kk,
                             grad.data() + i * out_plane, gx ? gx + i * in_plane : nullptr,
                             gw ? gw + i * kk : nullptr, g);
    }
  };
  return MakeResult({c, g.out_h, g.out_w}, std::move(out), {x, w}, backward);
}

Tensor PointwiseConv2d(const Tensor& x, const Tensor& w) {
  RequireRank(x, 3, "pointwise_conv2d", "input");
  RequireRank(w, 2, "pointwise_conv2d", "weight");
  const int64_t ci = x.dim(0), co = w.dim(0), plane = x.dim(1) * x.dim(2);
  if (w.dim(1) != ci) {
    ShapeFail("pointwise_conv2d", "input has " + std::to_string(ci) + " channels but weight " +
                                      ShapeToString(w.shape()) + " expects " +
                                      std::to_string(w.dim(1)));
  }
  CheckFinite(x, "pointwise_conv2d");
  CheckFinite(w, "pointwise_conv2d");
  std::vector<double> out(static_cast<size_t>(co * plane), 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (int64_t o = 0; o < co; ++o) {
    double* out_plane = out.data() + o * plane;
    for (int64_t i = 0; i < ci; ++i) {
      const double wt = wv[o * ci + i];
      const double* in_plane = xv + i * plane;
      for (int64_t j = 0; j < plane; ++j) out_plane[j] += wt * in_plane[j];
    }
  }
  auto backward = [x, w, ci, co, plane](std::span<const double> grad,
                                        std::span<const std::span<double>> in_grads) {
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    for (int64_t o = 0; o < co; ++o) {
      const double* g_plane = grad.data() + o * plane;
      for (int64_t i = 0; i < ci; ++i) {
        if (!in_grads[0].empty()) {
          const double wt = wv[o * ci + i];
          double* gx = in_grads[0].data() + i * plane;
          for (int64_t j = 0; j < plane; ++j) gx[j] += wt * g_plane[j];
        }
        if (!in_grads[1].empty()) {
          const double* in_plane = xv + i * plane;
          double acc = 0.0;
          for (int64_t j = 0; j < plane; ++j) acc += g_plane[j] * in_plane[j];
          in_grads[1][static_cast<size_t>(o * ci + i)] += acc;
        }
      }
    }
  };
  return MakeResult({co, x.dim(1), x.dim(2)}, std::move(out), {x, w}, backward);
}

Tensor BiasAdd(const Tensor& x, const Tensor& b) {
  RequireRank(b, 1, "bias_add", "bias");
  if (!x.defined() || x.rank() < 1 || x.dim(0) != b.dim(0)) {
    ShapeFail("bias_add", "bias " + ShapeToString(b.shape()) + " does not match input " +
                              (x.defined() ? ShapeToString(x.shape()) : std::string("undefined")));
  }
  CheckFinite(x, "bias_add");
  CheckFinite(b, "bias_add");
  const int64_t c = x.dim(0), inner = x.size() / c;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int64_t i = 0; i < c; ++i) {
    const double bv = b[i];
    for (int64_t j = 0; j < inner; ++j) out[static_cast<size_t>(i * inner + j)] += bv;
  }
  auto backward = [c, inner](std::span<const double> grad,
                             std::span<const std::span<double>> in_grads) {
    if (!in_grads[0].empty()) {
      for (size_t j = 0; j < grad.size(); ++j) in_grads[0][j] += grad[j];
    }
    if (!in_grads[1].empty()) {
      for (int64_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < inner; ++j) acc += grad[static_cast<size_t>(i * inner + j)];
        in_grads[1][static_cast<size_t>(i)] += acc;
      }
    }
  };
  return MakeResult(x.shape(), std::move(out), {x, b}, backward);
}

// --- Pointwise nonlinearities -------------------------------------------------

Tensor Relu(const Tensor& x) {
  return Elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor Sigmoid(const Tensor& x) {
  return Elementwise(x, "sigmoid", StableSigmoid, [](double v) {
    const double s = StableSigmoid(v);
    return s * (1.0 - s);
  });
}

Tensor Swish(const Tensor& x) {
  return Elementwise(
      x, "swish", [](double v) { return v * StableSigmoid(v); },
      [](double v) {
        const double s = StableSigmoid(v);
        return s + v * s * (1.0 - s);
      });
}

Tensor Log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw NumericError("log: input outside domain (x > 0)");
  }
  return Elementwise(
      x, "log", [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor SoftmaxChannel(const Tensor& x) {
  if (!x.defined() || x.rank() < 2) ShapeFail("softmax_channel", "input must have rank >= 2");
  CheckFinite(x, "softmax_channel");
  const int64_t c = x.dim(0), inner = x.size() / c;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (int64_t j = 0; j < inner; ++j) {
    double m = xv[static_cast<size_t>(j)];
    for (int64_t i = 1; i < c; ++i) m = std::max(m, xv[static_cast<size_t>(i * inner + j)]);
    double total = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      const size_t idx = static_cast<size_t>(i * inner + j);
      out[idx] = std::exp(xv[idx] - m);
      total += out[idx];
    }
    for (int64_t i = 0; i < c; ++i) out[static_cast<size_t>(i * inner + j)] /= total;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  auto backward = [probs, c, inner](std::span<const double> grad,
                                    std::span<const std::span<double>> in_grads) {
    const std::vector<double>& s = *probs;
    for (int64_t j = 0; j < inner; ++j) {
      double dot = 0.0;
      for (int64_t i = 0; i < c; ++i) {
        const size_t idx = static_cast<size_t>(i * inner + j);
        dot += grad[idx] * s[idx];
      }
      for (int64_t i = 0; i < c; ++i) {
        const size_t idx = static_cast<size_t>(i * inner + j);
        in_grads[0][idx] += s[idx] * (grad[idx] - dot);
      }
    }
  };
  return MakeResult(x.shape(), std::move(out), {x}, backward);
}

// --- Resampling -------------------------------------------------------------

Tensor UpsampleBilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  RequireRank(x, 3, "upsample_bilinear", "input");
  if (out_h <= 0 || out_w <= 0) ShapeFail("upsample_bilinear", "output size must be positive");
  CheckFinite(x, "upsample_bilinear");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  struct Tap {
    int64_t i0, i1;
    double f;
  };
  auto taps = [](int64_t in, int64_t out) {
    std::vector<Tap> t(static_cast<size_t>(out));
    for (int64_t o = 0; o < out; ++o) {
      const double src = out > 1 ? static_cast<double>(o * (in - 1)) / static_cast<double>(out - 1) : 0.0;
      int64_t i0 = static_cast<int64_t>(std::floor(src));
      i0 = std::min(i0, in - 1);
      const int64_t i1 = std::min(i0 + 1, in - 1);
      t[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, out_w));
  const auto xv = x.values();
  std::vector<double> out(static_cast<size_t>(c * out_h * out_w));
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* in = xv.data() + ch * h * w;
    double* o = out.data() + ch * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = (*ty)[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = (*tx)[static_cast<size_t>(ox)];
        const double top = in[a.i0 * w + b.i0] * (1.0 - b.f) + in[a.i0 * w + b.i1] * b.f;
        const double bot = in[a.i1 * w + b.i0] * (1.0 - b.f) + in[a.i1 * w + b.i1] * b.f;
        o[oy * out_w + ox] = top * (1.0 - a.f) + bot * a.f;
      }
    }
  }
  auto backward = [ty, tx, c, h, w, out_h, out_w](std::span<const double> grad,
                                                  std::span<const std::span<double>> in_grads) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double* gi = in_grads[0].data() + ch * h * w;
      const double* go = grad.data() + ch * out_h * out_w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const Tap& a = (*ty)[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const Tap& b = (*tx)[static_cast<size_t>(ox)];
          const double g = go[oy * out_w + ox];
          gi[a.i0 * w + b.i0] += g * (1.0 - a.f) * (1.0 - b.f);
          gi[a.i0 * w + b.i1] += g * (1.0 - a.f) * b.f;
          gi[a.i1 * w + b.i0] += g * a.f * (1.0 - b.f);
          gi[a.i1 * w + b.i1] += g * a.f * b.f;
        }
      }
    }
  };
  return MakeResult({c, out_h, out_w}, std::move(out), {x}, backward);
}

Tensor DownsampleStride2(const Tensor& x) {
  RequireRank(x, 3, "downsample_stride2", "input");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    ShapeFail("downsample_stride2", "spatial size must be even, got " + ShapeToString(x.shape()));
  }
  CheckFinite(x, "downsample_stride2");
  const int64_t oh = h / 2, ow = w / 2;
  const auto xv = x.values();
  std::vector<double> out(static_cast<size_t>(c * oh * ow));
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* in = xv.data() + ch * h * w;
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xx = 0; xx < ow; ++xx) {
        const double* p = in + (2 * y) * w + 2 * xx;
        out[static_cast<size_t>((ch * oh + y) * ow + xx)] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
    }
  }
  auto backward = [c, h, w, oh, ow](std::span<const double> grad,
                                    std::span<const std::span<double>> in_grads) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double* gi = in_grads[0].data() + ch * h * w;
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xx = 0; xx < ow; ++xx) {
          const double g = 0.25 * grad[static_cast<size_t>((ch * oh + y) * ow + xx)];
          double* p = gi + (2 * y) * w + 2 * xx;
          p[0] += g;
          p[1] += g;
          p[w] += g;
          p[w + 1] += g;
        }
      }
    }
  };
  return MakeResult({c, oh, ow}, std::move(out), {x}, backward);
}

// --- Arithmetic -------------------------------------------------------------

Tensor Add(const Tensor& a, const Tensor& b) { return AddN({a, b}); }

Tensor AddN(const std::vector<Tensor>& xs) {
  if (xs.empty()) ShapeFail("add", "needs at least one input");
  for (const Tensor& t : xs) {
    if (!t.defined() || t.shape() != xs[0].shape()) {
      ShapeFail("add", "shape mismatch " + ShapeToString(xs[0].shape()) + " vs " +
                           (t.defined() ? ShapeToString(t.shape()) : std::string("undefined")));
    }
    CheckFinite(t, "add");
  }
  std::vector<double> out(xs[0].values().begin(), xs[0].values().end());
  for (size_t k = 1; k < xs.size(); ++k) {
    const auto v = xs[k].values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  auto backward = [](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (std::span<double> gi : in_grads) {
      for (size_t i = 0; i < gi.size(); ++i) gi[i] += grad[i];
    }
  };
  return MakeResult(xs[0].shape(), std::move(out), xs, backward);
}

Tensor ScalarMul(const Tensor& x, const Tensor& s) {
  if (!s.defined() || s.size() != 1) ShapeFail("scalar_mul", "scale must have exactly one element");
  if (!x.defined()) ShapeFail("scalar_mul", "input is undefined");
  CheckFinite(x, "scalar_mul");
  CheckFinite(s, "scalar_mul");
  const double sv = s[0];
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= sv;
  auto backward = [x, s](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    const auto xv = x.values();
    if (!in_grads[0].empty()) {
      for (size_t i = 0; i < grad.size(); ++i) in_grads[0][i] += grad[i] * s[0];
    }
    if (!in_grads[1].empty()) {
      double acc = 0.0;
      for (size_t i = 0; i < grad.size(); ++i) acc += grad[i] * xv[i];
      in_grads[1][0] += acc;
    }
  };
  return MakeResult(x.shape(), std::move(out), {x, s}, backward);
}

Tensor Scale(const Tensor& x, double c) {
  if (!x.defined()) ShapeFail("scalar_mul", "input is undefined");
  CheckFinite(x, "scalar_mul");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= c;
  auto backward = [c](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (size_t i = 0; i < grad.size(); ++i) in_grads[0][i] += grad[i] * c;
  };
  return MakeResult(x.shape(), std::move(out), {x}, backward);
}

Tensor WeightedSum(const std::vector<Tensor>& xs, const Tensor& weights, double eps) {
  if (xs.empty()) ShapeFail("weighted_sum", "needs at least one input");
  RequireRank(weights, 1, "weighted_sum", "weights");
  if (weights.dim(0) != static_cast<int64_t>(xs.size())) {
    ShapeFail("weighted_sum", std::to_string(xs.size()) + " inputs but " +
                                  std::to_string(weights.dim(0)) + " weights");
  }
  for (const Tensor& t : xs) {
    if (!t.defined() || t.shape() != xs[0].shape()) {
      ShapeFail("weighted_sum", "input shapes differ: " + ShapeToString(xs[0].shape()) + " vs " +
                                    (t.defined() ? ShapeToString(t.shape()) : std::string("undefined")));
    }
    CheckFinite(t, "weighted_sum");
  }
  CheckFinite(weights, "weighted_sum");
  const size_t n = xs.size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) total += std::max(weights[static_cast<int64_t>(i)], 0.0);
  const double denom = eps + total;
  std::vector<double> out(static_cast<size_t>(xs[0].size()), 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double coef = std::max(weights[static_cast<int64_t>(i)], 0.0) / denom;
    const auto v = xs[i].values();
    for (size_t j = 0; j < out.size(); ++j) out[j] += coef * v[j];
  }
  auto fused = std::make_shared<std::vector<double>>(out);
  std::vector<Tensor> inputs = xs;
  inputs.push_back(weights);
  auto backward = [xs, weights, denom, fused, n](std::span<const double> grad,
                                                 std::span<const std::span<double>> in_grads) {
    for (size_t i = 0; i < n; ++i) {
      const double wi = weights[static_cast<int64_t>(i)];
      const double coef = std::max(wi, 0.0) / denom;
      const auto v = xs[i].values();
      if (!in_grads[i].empty()) {
        for (size_t j = 0; j < grad.size(); ++j) in_grads[i][j] += coef * grad[j];
      }
      if (!in_grads[n].empty() && wi > 0.0) {
        double acc = 0.0;
        for (size_t j = 0; j < grad.size(); ++j) acc += grad[j] * (v[j] - (*fused)[j]);
        in_grads[n][i] += acc / denom;
      }
    }
  };
  return MakeResult(xs[0].shape(), std::move(out), inputs, backward);
}

Tensor ReduceSum(const Tensor& x) {
  if (!x.defined()) ShapeFail("reduce_sum", "input is undefined");
  CheckFinite(x, "reduce_sum");
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto backward = [](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (double& g : in_grads[0]) g += grad[0];
  };
  return MakeResult({1}, {total}, {x}, backward);
}

Tensor ReduceMean(const Tensor& x) {
  if (!x.defined()) ShapeFail("reduce_mean", "input is undefined");
  CheckFinite(x, "reduce_mean");
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double n = static_cast<double>(x.size());
  auto backward = [n](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (double& g : in_grads[0]) g += grad[0] / n;
  };
  return MakeResult({1}, {total / n}, {x}, backward);
}

// --- Structural -------------------------------------------------------------

Tensor Gather(const Tensor& x, std::vector<int64_t> indices) {
  if (!x.defined()) ShapeFail("gather", "input is undefined");
  if (indices.empty()) ShapeFail("gather", "index list is empty");
  for (int64_t i : indices) {
    if (i < 0 || i >= x.size()) {
      ShapeFail("gather", "index " + std::to_string(i) + " out of range for " + ShapeToString(x.shape()));
    }
  }
  std::vector<double> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) out[i] = x[indices[i]];
  auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
  const int64_t n = static_cast<int64_t>(idx->size());
  auto backward = [idx](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (size_t i = 0; i < idx->size(); ++i) in_grads[0][static_cast<size_t>((*idx)[i])] += grad[i];
  };
  return MakeResult({n}, std::move(out), {x}, backward);
}

Tensor Reshape(const Tensor& x, Shape shape) {
  if (!x.defined() || NumElements(shape) != x.size()) {
    ShapeFail("reshape", "cannot view " + (x.defined() ? ShapeToString(x.shape()) : std::string("undefined")) +
                             " as " + ShapeToString(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto backward = [](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (size_t i = 0; i < grad.size(); ++i) in_grads[0][i] += grad[i];
  };
  return MakeResult(std::move(shape), std::move(out), {x}, backward);
}

Tensor AnchorRows(const Tensor& map, int64_t anchors_per_cell) {
  RequireRank(map, 3, "anchor_rows", "input");
  const int64_t channels = map.dim(0), h = map.dim(1), w = map.dim(2);
  if (anchors_per_cell <= 0 || channels % anchors_per_cell != 0) {
    ShapeFail("anchor_rows", std::to_string(channels) + " channels not divisible by " +
                                 std::to_string(anchors_per_cell) + " anchors");
  }
  const int64_t k = channels / anchors_per_cell, plane = h * w;
  const auto mv = map.values();
  std::vector<double> out(mv.size());
  // row (cell * A + a), column j  <-  channel (a * K + j), cell
  for (int64_t cell = 0; cell < plane; ++cell) {
    for (int64_t a = 0; a < anchors_per_cell; ++a) {
      for (int64_t j = 0; j < k; ++j) {
        out[static_cast<size_t>((cell * anchors_per_cell + a) * k + j)] =
            mv[static_cast<size_t>((a * k + j) * plane + cell)];
      }
    }
  }
  auto backward = [anchors_per_cell, k, plane](std::span<const double> grad,
                                               std::span<const std::span<double>> in_grads) {
    for (int64_t cell = 0; cell < plane; ++cell) {
      for (int64_t a = 0; a < anchors_per_cell; ++a) {
        for (int64_t j = 0; j < k; ++j) {
          in_grads[0][static_cast<size_t>((a * k + j) * plane + cell)] +=
              grad[static_cast<size_t>((cell * anchors_per_cell + a) * k + j)];
        }
      }
    }
  };
  return MakeResult({plane * anchors_per_cell, k}, std::move(out), {map}, backward);
}

Tensor ConcatRows(const std::vector<Tensor>& xs) {
  if (xs.empty()) ShapeFail("concat_rows", "needs at least one input");
  const int64_t k = xs[0].defined() && xs[0].rank() == 2 ? xs[0].dim(1) : -1;
  int64_t rows = 0;
  for (const Tensor& t : xs) {
    if (!t.defined() || t.rank() != 2 || t.dim(1) != k) {
      ShapeFail("concat_rows", "inputs must be (N, " + std::to_string(k) + "), got " +
                                   (t.defined() ? ShapeToString(t.shape()) : std::string("undefined")));
    }
    rows += t.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows * k));
  for (const Tensor& t : xs) out.insert(out.end(), t.values().begin(), t.values().end());
  std::vector<size_t> offsets;
  size_t offset = 0;
  for (const Tensor& t : xs) {
    offsets.push_back(offset);
    offset += static_cast<size_t>(t.size());
  }
  auto backward = [offsets](std::span<const double> grad, std::span<const std::span<double>> in_grads) {
    for (size_t i = 0; i < in_grads.size(); ++i) {
      for (size_t j = 0; j < in_grads[i].size(); ++j) in_grads[i][j] += grad[offsets[i] + j];
    }
  };
  return MakeResult({rows, k}, std::move(out), xs, backward);
}

// --- Gradient check -----------------------------------------------------------

double GradCheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw ValidationError("grad_check: step must lie in (0, 1e-3]");
  Tensor leaf(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(&tape);
    y = f(leaf);
  }
  if (!y.defined() || y.size() != 1) throw ValidationError("grad_check: f must return a scalar");
  std::vector<double> analytic(static_cast<size_t>(x.size()), 0.0);
  if (y.requires_grad()) {
    tape.Backward(y);
    const Tensor g = tape.Gradient(leaf);
    analytic.assign(g.values().begin(), g.values().end());
  }

  TapeScope no_tape(nullptr);
  double worst = 0.0;
  std::vector<double> probe(x.values().begin(), x.values().end());
  for (size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Tensor(x.shape(), probe)).item();
    probe[i] = saved - h;
    const double down = f(Tensor(x.shape(), probe)).item();
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: f is non-finite at a perturbed point");
    }
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace hnk
