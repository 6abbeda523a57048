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

#include "hnk/train.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "hnk/errors.h"

namespace hnk {
namespace {

namespace fs = std::filesystem;

constexpr int kEnc = 0, kDet = 1, kSeg = 2;

ModelParams OneScalar(double w, ParamGroup group = ParamGroup::kEncoder) {
  ModelParams p;
  p.Add("w", group, Tensor({1}, {w}));
  return p;
}

TEST(AdamWTest, FirstStepMatchesClosedForm) {
  ModelParams p = OneScalar(1.0);
  OptimState s = InitOptimState(p, AdamWConfig{});
  OptimStep(p, {{"w", {1.0}}}, s, {ParamGroup::kEncoder});
  // m_hat = v_hat = 1 after bias correction.
  const double expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8) + 0.01);
  EXPECT_NEAR(p.Get("w").values()[0], expected, 1e-15);
  EXPECT_NEAR(p.Get("w").values()[0], 0.998990, 1e-6);
  EXPECT_EQ(s.step, 1);
  EXPECT_EQ(s.moments.at("w").step, 1);
}

TEST(AdamWTest, ZeroGradientWithoutDecayLeavesWeight) {
  ModelParams p = OneScalar(0.75);
  AdamWConfig h;
  h.weight_decay = 0.0;
  OptimState s = InitOptimState(p, h);
  for (int i = 0; i < 5; ++i) OptimStep(p, {{"w", {0.0}}}, s, {ParamGroup::kEncoder});
  EXPECT_EQ(p.Get("w").values()[0], 0.75);
}

TEST(AdamWTest, FrozenGroupsAndTheirMomentsAreUntouched) {
  ModelParams p;
  p.Add("a", ParamGroup::kEncoder, Tensor({2}, {1.0, 2.0}));
  p.Add("b", ParamGroup::kSegmentation, Tensor({2}, {3.0, 4.0}));
  OptimState s = InitOptimState(p, AdamWConfig{});
  const GradientMap g = {{"a", {0.5, -0.5}}, {"b", {1.0, 1.0}}};
  OptimStep(p, g, s, {ParamGroup::kEncoder});
  EXPECT_EQ(p.Get("b").values()[0], 3.0);
  EXPECT_EQ(p.Get("b").values()[1], 4.0);
  EXPECT_EQ(s.moments.at("b").step, 0);
  EXPECT_EQ(s.moments.at("b").m, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(s.moments.at("b").v, (std::vector<double>{0.0, 0.0}));
  EXPECT_NE(p.Get("a").values()[0], 1.0);
  // A frozen parameter needs no gradient at all.
  OptimStep(p, {{"a", {0.5, -0.5}}}, s, {ParamGroup::kEncoder});
  EXPECT_EQ(s.moments.at("a").step, 2);
}

TEST(AdamWTest, RejectsBadGradients) {
  ModelParams p = OneScalar(1.0);
  OptimState s = InitOptimState(p, AdamWConfig{});
  EXPECT_THROW(OptimStep(p, {{"w", {1.0, 2.0}}}, s, {ParamGroup::kEncoder}), ValidationError);
  EXPECT_THROW(OptimStep(p, {}, s, {ParamGroup::kEncoder}), ValidationError);
  EXPECT_EQ(p.Get("w").values()[0], 1.0);
  EXPECT_EQ(s.step, 0);
  AdamWConfig bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.Validate(), ValidationError);
}

TEST(PlateauTest, Traces) {
  EXPECT_EQ(PlateauTrace(std::vector<double>{5, 4, 3}, 1e-3), (std::vector<double>{1e-3, 1e-3, 1e-3}));
  EXPECT_EQ(PlateauTrace(std::vector<double>{5, 5, 5, 5}, 1e-3), (std::vector<double>{1e-3, 1e-3, 1e-3, 1e-4}));
  PlateauConfig quarter;
  quarter.min_delta = 0.25;
  // 1 - 0.75 is exactly 0.25: not an improvement, so three stagnant epochs.
  EXPECT_EQ(PlateauTrace(std::vector<double>{1, 0.75, 0.75, 0.75}, 1e-3, quarter),
            (std::vector<double>{1e-3, 1e-3, 1e-3, 1e-4}));
  EXPECT_EQ(PlateauTrace(std::vector<double>{1, 0.74, 0.74, 0.74}, 1e-3, quarter),
            (std::vector<double>{1e-3, 1e-3, 1e-3, 1e-3}));
}

TEST(PlateauTest, StagnationResetsAndBestOnlyMovesOnImprovement) {
  PlateauConfig cfg;
  PlateauState st;
  double lr = 1e-3;
  lr = PlateauStep(1.0, lr, st, cfg);
  lr = PlateauStep(0.99995, lr, st, cfg);  // within min_delta
  EXPECT_EQ(st.best, 1.0);
  EXPECT_EQ(st.stagnant, 1);
  lr = PlateauStep(0.5, lr, st, cfg);
  EXPECT_EQ(st.best, 0.5);
  EXPECT_EQ(st.stagnant, 0);
  EXPECT_EQ(lr, 1e-3);
}

TEST(PlateauTest, FloorAndMonotone) {
  const std::vector<double> trace = PlateauTrace(std::vector<double>(60, 2.0), 1e-3);
  EXPECT_EQ(trace.back(), 1e-7);
  for (size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]);
  for (double lr : trace) EXPECT_GE(lr, 1e-7);
}

TEST(ScheduleTest, DefaultAndValidation) {
  const StageSchedule s = StageSchedule::Default();
  ASSERT_EQ(s.stages.size(), 3u);
  EXPECT_EQ(s.stages[0].trainable, (GroupSet{ParamGroup::kEncoder, ParamGroup::kDetection}));
  EXPECT_EQ(s.stages[1].trainable, (GroupSet{ParamGroup::kSegmentation}));
  EXPECT_EQ(s.stages[2].trainable.size(), 3u);
  EXPECT_EQ(s.stages[0].beta, 0.0);
  EXPECT_EQ(s.stages[1].alpha, 0.0);
  EXPECT_NO_THROW(s.Validate());
  StageSchedule bad = s;
  bad.stages[1].trainable.clear();
  EXPECT_THROW(bad.Validate(), ValidationError);
  bad = s;
  bad.stages[0].max_epochs = 0;
  EXPECT_THROW(bad.Validate(), ValidationError);
  bad = s;
  bad.stages[2].lr = 0.0;
  EXPECT_THROW(bad.Validate(), ValidationError);
}

struct Tiny {
  ModelConfig cfg;
  std::vector<Sample> data;
  StageSchedule schedule = StageSchedule::Default();
  TrainOptions options;

  Tiny() {
    cfg.input_w = cfg.input_h = 64;
    cfg.backbone_channels = {4, 6, 8, 10, 12};
    cfg.fpn_channels = 8;
    cfg.bifpn_repeats = 1;
    cfg.det_head_layers = 1;
    cfg.seg_fuse_channels = 8;
    cfg.anchors.levels = {3, 4, 5};
    cfg.anchors.base_scale_constant = 1.0;
    SceneSpec spec;
    spec.width = spec.height = 64;
    spec.max_vehicle_size = 20;
    data = Generate(spec, 12);
    for (StageSpec& s : schedule.stages) {
      s.threshold = -1.0;
      s.max_epochs = 2;
    }
    options.batch_size = 4;
  }

  TrainResult Run(const EpochCallback& cb = {}) const {
    return StagedTrain(cfg, BuildModel(cfg, 3), std::span(data).subspan(0, 8), std::span(data).subspan(8), schedule,
                       LossWeights{}, options, cb);
  }
};

TEST(StagedTrainTest, FrozenGroupsKeepTheirChecksums) {
  const TrainResult r = Tiny().Run();
  ASSERT_FALSE(r.aborted) << r.abort_reason;
  ASSERT_EQ(r.stages.size(), 3u);
  ASSERT_EQ(r.epochs.size(), 6u);
  const StageRecord &s1 = r.stages[0], &s2 = r.stages[1], &s3 = r.stages[2];
  EXPECT_EQ(s1.before[kSeg], s1.after[kSeg]);
  EXPECT_NE(s1.before[kEnc], s1.after[kEnc]);
  EXPECT_NE(s1.before[kDet], s1.after[kDet]);
  EXPECT_EQ(s2.before[kEnc], s2.after[kEnc]);
  EXPECT_EQ(s2.before[kDet], s2.after[kDet]);
  EXPECT_NE(s2.before[kSeg], s2.after[kSeg]);
  for (int g : {kEnc, kDet, kSeg}) EXPECT_NE(s3.before[g], s3.after[g]);
  for (const EpochRecord& e : r.epochs) {
    if (e.stage == 1) {
      EXPECT_EQ(e.checksums[kSeg], s1.before[kSeg]);
    }
    if (e.stage == 2) {
      EXPECT_EQ(e.checksums[kEnc], s2.before[kEnc]);
      EXPECT_EQ(e.checksums[kDet], s2.before[kDet]);
    }
  }
  // Stage 1 trains detection only, stage 2 segmentation only.
  EXPECT_TRUE(r.epochs[0].train.det.has_value());
  EXPECT_FALSE(r.epochs[0].train.seg.has_value());
  EXPECT_FALSE(r.epochs[2].train.det.has_value());
  EXPECT_TRUE(r.epochs[2].train.seg.has_value());
  EXPECT_TRUE(r.epochs[4].train.det.has_value() && r.epochs[4].train.seg.has_value());
  EXPECT_EQ(r.params.Checksum(ParamGroup::kSegmentation), s3.after[kSeg]);
}

TEST(StagedTrainTest, UnreachableThresholdRunsToCapAndInfiniteStopsAfterOne) {
  Tiny t;
  for (StageSpec& s : t.schedule.stages) s.threshold = std::numeric_limits<double>::infinity();
  t.schedule.stages[2].lr = 2e-4;
  const TrainResult r = t.Run();
  ASSERT_FALSE(r.aborted);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.epochs[0].lr, t.options.optim.lr);
  EXPECT_EQ(r.epochs[1].lr, t.options.optim.lr);
  EXPECT_EQ(r.epochs[2].lr, 2e-4);
  for (const EpochRecord& e : r.epochs) {
    EXPECT_TRUE(e.converged);
    EXPECT_TRUE(e.stage_end);
  }
  for (const StageRecord& s : r.stages) EXPECT_EQ(s.epochs, 1);
}

TEST(StagedTrainTest, DeterministicAcrossRunsAndThreads) {
  Tiny t;
  const TrainResult a = t.Run(), b = t.Run();
  t.options.threads = 2;
  const TrainResult c = t.Run();
  EXPECT_EQ(SerializeParams(a.params), SerializeParams(b.params));
  EXPECT_EQ(SerializeParams(a.params), SerializeParams(c.params));
  EXPECT_EQ(TrainLogJson(a).dump(), TrainLogJson(b).dump());
  EXPECT_EQ(TrainLogJson(a).dump(), TrainLogJson(c).dump());
  t.options.threads = 1;
  t.options.seed = 8;
  EXPECT_NE(SerializeParams(a.params), SerializeParams(t.Run().params));
}

TEST(StagedTrainTest, NonFiniteInputAbortsAtFirstBatch) {
  Tiny t;
  SceneSpec spec;
  spec.width = spec.height = 64;
  spec.max_vehicle_size = 20;
  t.data = Generate(spec, 12);
  for (int i = 0; i < 8; ++i) t.data[static_cast<size_t>(i)].image.mutable_values()[5] = std::nan("");
  const TrainResult r = t.Run();
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.abort_stage, 1);
  EXPECT_EQ(r.abort_epoch, 1);
  EXPECT_EQ(r.abort_batch, 0);
  EXPECT_FALSE(r.abort_reason.empty());
  EXPECT_TRUE(TrainLogJson(r).dump().find("aborted") != std::string::npos);
}

TEST(StagedTrainTest, WritesCheckpointsAndLog) {
  Tiny t;
  const fs::path dir = fs::temp_directory_path() / "hnk_train_test_out";
  fs::remove_all(dir);
  t.options.out_dir = dir.string();
  const TrainResult r = t.Run();
  ASSERT_FALSE(r.aborted);
  for (const char* f : {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "model.ckpt", "train_log.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(SerializeParams(LoadCheckpoint((dir / "model.ckpt").string())), SerializeParams(r.params));
  std::ifstream in(dir / "train_log.json");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), TrainLogJson(r).dump(1) + "\n");
  fs::remove_all(dir);
}

TEST(StagedTrainTest, CallbackSeesEveryEpochAndLossFalls) {
  Tiny t;
  t.schedule.stages[0].max_epochs = 5;
  std::vector<EpochRecord> seen;
  const TrainResult r = t.Run([&](const EpochRecord& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), r.epochs.size());
  for (size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i].epoch, static_cast<int>(i) + 1);
  EXPECT_LT(seen[4].train.total, seen[0].train.total);
  EXPECT_TRUE(seen[4].stage_end);
}

TEST(EvaluateTest, ReportShape) {
  Tiny t;
  const ModelParams p = BuildModel(t.cfg, 1);
  const EvalReport a = Evaluate(t.cfg, p, t.data, 0.001, 0.6);
  const EvalReport b = Evaluate(t.cfg, p, t.data, 0.001, 0.6, 2);
  EXPECT_EQ(a.ToJson().dump(), b.ToJson().dump());
  for (const char* key : {"map50", "recall", "miou", "lane_accuracy"}) {
    EXPECT_TRUE(a.ToJson().contains(key)) << key;
  }
}

}  // namespace
}  // namespace hnk
