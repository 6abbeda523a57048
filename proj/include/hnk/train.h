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

#ifndef HNK_TRAIN_H_
#define HNK_TRAIN_H_

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnk/assign.h"
#include "hnk/losses.h"
#include "hnk/metrics.h"
#include "hnk/model.h"
#include "hnk/scene.h"
#include "json.hpp"

namespace hnk {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  void Validate() const;
};

struct OptimState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    // Updates applied to this parameter; drives its bias correction.
    int64_t step = 0;
  };

  AdamWConfig hyper;
  double lr = 1e-3;
  int64_t step = 0;  // optim_step calls
  std::map<std::string, Moments> moments;
};

OptimState InitOptimState(const ModelParams& params, const AdamWConfig& hyper);

using GradientMap = std::map<std::string, std::vector<double>>;

// One AdamW update of the parameters in `trainable` groups. Parameters of
// other groups and their moments are left untouched.
void OptimStep(ModelParams& params, const GradientMap& grads, OptimState& state, const GroupSet& trainable);

struct PlateauConfig {
  int patience = 3;
  double min_delta = 1e-4;
  double factor = 0.1;
  double min_lr = 1e-7;
};

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  int stagnant = 0;
};

// Feeds one epoch's validation loss and returns the learning rate for the
// next epoch. A loss counts as an improvement only when it beats the best by
// more than min_delta.
double PlateauStep(double loss, double lr, PlateauState& state, const PlateauConfig& cfg);

// Learning rate after each entry of `history`, starting from lr0.
std::vector<double> PlateauTrace(std::span<const double> history, double lr0, const PlateauConfig& cfg = {});

struct StageSpec {
  GroupSet trainable;
  // The stage ends once the epoch-mean validation loss drops below this.
  double threshold = 0.0;
  int max_epochs = 60;
  std::optional<double> alpha;  // overrides LossWeights::alpha
  std::optional<double> beta;   // overrides LossWeights::beta
  std::optional<double> lr;     // overrides the base learning rate
};

struct StageSchedule {
  std::vector<StageSpec> stages;

  // {enc, det} with beta = 0, then {seg} with alpha = 0, then everything.
  static StageSchedule Default();
  void Validate() const;
};

struct TrainOptions {
  int batch_size = 8;
  uint64_t seed = 7;
  AdamWConfig optim;
  PlateauConfig plateau;
  int threads = 1;
  // When set, stage checkpoints, the final checkpoint and the log go here.
  std::string out_dir;
};

struct LossSummary {
  std::optional<double> det;
  std::optional<double> seg;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based over the whole run
  int stage = 0;  // 1-based
  int stage_epoch = 0;
  LossSummary train;
  LossSummary val;
  double lr = 0.0;  // rate used during the epoch
  std::array<uint64_t, 3> checksums{};  // per group after the epoch
  bool stage_end = false;
  bool converged = false;
};

struct StageRecord {
  int stage = 0;
  int epochs = 0;
  bool converged = false;
  std::array<uint64_t, 3> before{};
  std::array<uint64_t, 3> after{};
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> epochs;
  std::vector<StageRecord> stages;
  bool aborted = false;
  std::string abort_reason;
  int abort_stage = 0;
  int abort_epoch = 0;
  int64_t abort_batch = -1;  // 0-based within the epoch
};

// Per-sample supervision derived once from the ground truth.
struct PreparedSample {
  const Sample* sample = nullptr;
  Assignment assignment;
  Tensor onehot;
};

PreparedSample Prepare(const ModelConfig& cfg, std::span<const AnchorRef> anchors, const Sample& sample);

struct SampleLoss {
  Tensor total;
  std::optional<double> det;
  std::optional<double> seg;
};

// Heads whose loss weight is zero are not evaluated.
SampleLoss ComputeSampleLoss(const ModelConfig& cfg, const ModelParams& params, std::span<const AnchorRef> anchors,
                             const PreparedSample& prepared, const LossWeights& w);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult StagedTrain(const ModelConfig& cfg, ModelParams params, std::span<const Sample> train,
                        std::span<const Sample> val, const StageSchedule& schedule, const LossWeights& weights,
                        const TrainOptions& options, const EpochCallback& on_epoch = {});

nlohmann::json TrainLogJson(const TrainResult& result);

// Detection and segmentation metrics of the model on `samples`.
EvalReport Evaluate(const ModelConfig& cfg, const ModelParams& params, std::span<const Sample> samples,
                    double conf_threshold, double nms_threshold, int threads = 1);

}  // namespace hnk

#endif  // HNK_TRAIN_H_
