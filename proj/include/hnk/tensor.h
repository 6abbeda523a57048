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

#ifndef HNK_TENSOR_H_
#define HNK_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hnk {

using Shape = std::vector<int64_t>;

int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

// Dense row-major float64 array with shared storage. Copies of a Tensor alias
// the same buffer; use Clone() for a deep copy. Feature maps are laid out
// (channels, height, width) without a batch dimension.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, double value, bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

  std::span<const double> values() const { return impl_->values; }
  // Writable view for leaves (optimizer updates, initialization). Mutating a
  // tensor that is referenced by a live tape invalidates that tape.
  std::span<double> mutable_values() { return impl_->values; }
  double operator[](int64_t i) const { return impl_->values[static_cast<size_t>(i)]; }
  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  Tensor Clone() const;
  // Identity of the underlying storage.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Records primitive applications while it is the active tape of the calling
// thread (see TapeScope) and replays them in reverse for gradients. Gradient
// buffers live in the tape, not in the tensors, so one set of parameters can
// be differentiated by several tapes at once.
class Tape {
 public:
  // Receives the gradient of the node output and one writable gradient span
  // per input; spans of inputs that do not require grad are empty and must be
  // left alone. Contributions are accumulated (+=), never assigned.
  using BackwardFn = std::function<void(std::span<const double> out_grad,
                                        std::span<const std::span<double>> in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void Record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and propagates to every recorded input. The root
  // must be a single-element tensor produced on this tape.
  void Backward(const Tensor& root);

  // Gradient accumulated for `t` by the last Backward; zeros when `t` was not
  // reached.
  Tensor Gradient(const Tensor& t) const;
  bool HasGradient(const Tensor& t) const;

  size_t num_nodes() const { return nodes_.size(); }
  void Clear();

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::vector<double>> grads_;
};

// Makes `tape` the active tape of the current thread for the scope lifetime.
// Scopes nest; the previous tape is restored on exit.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* ActiveTape();

// Builds the output tensor of a custom primitive. When a tape is active and any
// input requires grad, the output is marked requires_grad and the node is
// recorded with `backward`. Used by the loss bank for fused losses.
Tensor MakeResult(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                  Tape::BackwardFn backward);

// Rejects (NumericError) if any value is NaN or infinite.
void CheckFinite(const Tensor& t, const char* primitive);

// ---------------------------------------------------------------------------
// Primitives. Convolutions use zero padding of k/2 so stride 1 preserves and
// stride 2 halves the spatial size (even sizes only for stride 2).

// x: (Ci, H, W), w: (Co, Ci, k, k), k odd.
Tensor Conv2d(const Tensor& x, const Tensor& w, int stride);
// x: (C, H, W), w: (C, k, k).
Tensor DepthwiseConv2d(const Tensor& x, const Tensor& w, int stride);
// x: (Ci, H, W), w: (Co, Ci).
Tensor PointwiseConv2d(const Tensor& x, const Tensor& w);
// x: (C, ...), b: (C). Broadcasts the bias over all trailing axes.
Tensor BiasAdd(const Tensor& x, const Tensor& b);

Tensor Relu(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor Swish(const Tensor& x);
// Natural log; every input value must be > 0.
Tensor Log(const Tensor& x);
// Softmax over axis 0 of a (C, H, W) or (C, N) tensor.
Tensor SoftmaxChannel(const Tensor& x);

// Bilinear resize of (C, H, W) to (C, out_h, out_w) with align_corners=true.
Tensor UpsampleBilinear(const Tensor& x, int64_t out_h, int64_t out_w);
// 2x2 average pooling with stride 2; H and W must be even.
Tensor DownsampleStride2(const Tensor& x);

Tensor Add(const Tensor& a, const Tensor& b);
Tensor AddN(const std::vector<Tensor>& xs);
// x * s where s is a single-element tensor; differentiable in both.
Tensor ScalarMul(const Tensor& x, const Tensor& s);
// x * c for a constant c.
Tensor Scale(const Tensor& x, double c);

// Fast normalized fusion: sum_i relu(w_i) / (eps + sum_j relu(w_j)) * x_i.
// weights has one entry per input; all inputs share a shape.
Tensor WeightedSum(const std::vector<Tensor>& xs, const Tensor& weights, double eps);

Tensor ReduceSum(const Tensor& x);
Tensor ReduceMean(const Tensor& x);

// Flat gather: out[i] = x.values()[indices[i]], shape (indices.size()).
Tensor Gather(const Tensor& x, std::vector<int64_t> indices);
// Reinterprets the data with a new shape of equal element count.
Tensor Reshape(const Tensor& x, Shape shape);
// (A*K, H, W) head map -> (H*W*A, K) rows ordered by (y, x, a).
Tensor AnchorRows(const Tensor& map, int64_t anchors_per_cell);
// Concatenates (N_i, K) tensors along the row axis.
Tensor ConcatRows(const std::vector<Tensor>& xs);

// ---------------------------------------------------------------------------

// Compares the tape gradient of f at x against central differences with step
// h and returns max_i |analytic - numeric| / max(1, |analytic|). f must map a
// tensor shaped like x to a single-element tensor.
double GradCheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace hnk

#endif  // HNK_TENSOR_H_
