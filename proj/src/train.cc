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

#include "hnk/errors.h"
#include "hnk/parallel.h"
#include "hnk/rng.h"

namespace hnk {
namespace {

std::array<uint64_t, 3> Checksums(const ModelParams& params) {
  return {params.Checksum(ParamGroup::kEncoder), params.Checksum(ParamGroup::kDetection),
          params.Checksum(ParamGroup::kSegmentation)};
}

LossWeights StageWeights(const LossWeights& base, const StageSpec& stage) {
  LossWeights w = base;
  if (stage.alpha) w.alpha = *stage.alpha;
  if (stage.beta) w.beta = *stage.beta;
  return w;
}

struct LossSums {
  double det = 0.0;
  double seg = 0.0;
  double total = 0.0;
  bool has_det = false;
  bool has_seg = false;

  void Add(const SampleLoss& s) {
    total += s.total.item();
    if (s.det) {
      det += *s.det;
      has_det = true;
    }
    if (s.seg) {
      seg += *s.seg;
      has_seg = true;
    }
  }

  LossSummary Mean(size_t n) const {
    const double d = static_cast<double>(n);
    LossSummary out;
    out.total = total / d;
    if (has_det) out.det = det / d;
    if (has_seg) out.seg = seg / d;
    return out;
  }
};

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

nlohmann::json SummaryJson(const LossSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"det", opt(s.det)}, {"seg", opt(s.seg)}, {"total", s.total}};
}

std::string Hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// --- Optimizer ----------------------------------------------------------------------

void AdamWConfig::Validate() const {
  if (!(lr > 0.0)) throw ValidationError("adamw: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adamw: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adamw: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("adamw: weight_decay must be >= 0");
}

OptimState InitOptimState(const ModelParams& params, const AdamWConfig& hyper) {
  hyper.Validate();
  OptimState state;
  state.hyper = hyper;
  state.lr = hyper.lr;
  for (const auto& [name, entry] : params.entries()) {
    const auto n = static_cast<size_t>(entry.value.size());
    state.moments[name] = {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
  }
  return state;
}

void OptimStep(ModelParams& params, const GradientMap& grads, OptimState& state, const GroupSet& trainable) {
  // Validate everything before touching any parameter.
  for (const auto& [name, entry] : params.entries()) {
    if (!trainable.count(entry.group)) continue;
    auto g = grads.find(name);
    if (g == grads.end()) throw ValidationError("optim_step: no gradient for " + name);
    if (g->second.size() != static_cast<size_t>(entry.value.size())) {
      throw ValidationError("optim_step: gradient size mismatch for " + name);
    }
    auto m = state.moments.find(name);
    if (m == state.moments.end() || m->second.m.size() != g->second.size()) {
      throw ValidationError("optim_step: optimizer state does not match " + name);
    }
  }
  const AdamWConfig& h = state.hyper;
  ++state.step;
  for (auto& [name, entry] : params.mutable_entries()) {
    if (!trainable.count(entry.group)) continue;
    const std::vector<double>& g = grads.at(name);
    OptimState::Moments& mom = state.moments.at(name);
    ++mom.step;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(mom.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(mom.step));
    auto w = entry.value.mutable_values();
    for (size_t i = 0; i < g.size(); ++i) {
      mom.m[i] = h.beta1 * mom.m[i] + (1.0 - h.beta1) * g[i];
      mom.v[i] = h.beta2 * mom.v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      w[i] -= state.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * w[i]);
    }
  }
}

// --- Plateau scheduler ------------------------------------------------------------------

double PlateauStep(double loss, double lr, PlateauState& state, const PlateauConfig& cfg) {
  if (state.best - loss > cfg.min_delta) {
    state.best = loss;
    state.stagnant = 0;
    return lr;
  }
  if (++state.stagnant >= cfg.patience) {
    state.stagnant = 0;
    return std::max(lr * cfg.factor, cfg.min_lr);
  }
  return lr;
}

std::vector<double> PlateauTrace(std::span<const double> history, double lr0, const PlateauConfig& cfg) {
  PlateauState state;
  std::vector<double> out;
  double lr = lr0;
  for (double loss : history) {
    lr = PlateauStep(loss, lr, state, cfg);
    out.push_back(lr);
  }
  return out;
}

// --- Stage schedule ----------------------------------------------------------------------

StageSchedule StageSchedule::Default() {
  using G = ParamGroup;
  StageSchedule s;
  s.stages.push_back({{G::kEncoder, G::kDetection}, 0.05, 60, std::nullopt, 0.0});
  s.stages.push_back({{G::kSegmentation}, 0.10, 60, 0.0, std::nullopt});
  s.stages.push_back({{G::kEncoder, G::kDetection, G::kSegmentation}, 0.12, 60, std::nullopt, std::nullopt});
  return s;
}

void StageSchedule::Validate() const {
  if (stages.empty()) throw ValidationError("schedule: no stages");
  for (size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    const std::string where = "schedule: stage " + std::to_string(i + 1);
    if (s.trainable.empty()) throw ValidationError(where + " trains nothing");
    if (s.max_epochs < 1) throw ValidationError(where + " needs max_epochs >= 1");
    if (std::isnan(s.threshold)) throw ValidationError(where + " threshold is NaN");
    if ((s.alpha && !(*s.alpha >= 0.0)) || (s.beta && !(*s.beta >= 0.0))) {
      throw ValidationError(where + " loss weights must be >= 0");
    }
    if (s.lr && !(*s.lr > 0.0 && std::isfinite(*s.lr))) throw ValidationError(where + " lr must be positive");
  }
  if (stages.back().trainable.size() != 3) throw ValidationError("schedule: the last stage must train every group");
}

// --- Per-sample loss -----------------------------------------------------------------------

PreparedSample Prepare(const ModelConfig& cfg, std::span<const AnchorRef> anchors, const Sample& sample) {
  if (sample.width != cfg.input_w || sample.height != cfg.input_h) {
    throw ValidationError("sample size " + std::to_string(sample.width) + "x" + std::to_string(sample.height) +
                          " does not match the model input " + std::to_string(cfg.input_w) + "x" +
                          std::to_string(cfg.input_h));
  }
  for (const LabeledBox& b : sample.boxes) {
    if (b.class_id < 0 || b.class_id >= cfg.num_classes_det) {
      throw ValidationError("sample box class " + std::to_string(b.class_id) + " outside the detector classes");
    }
  }
  PreparedSample p;
  p.sample = &sample;
  std::vector<Box> boxes;
  for (const LabeledBox& b : sample.boxes) boxes.push_back(b.box);
  p.assignment = Assign(anchors, boxes);
  p.onehot = OneHot(sample.mask, cfg.num_seg_classes, sample.height, sample.width);
  return p;
}

SampleLoss ComputeSampleLoss(const ModelConfig& cfg, const ModelParams& params, std::span<const AnchorRef> anchors,
                             const PreparedSample& prepared, const LossWeights& w) {
  ForwardOptions options;
  options.detection = w.alpha != 0.0;
  options.segmentation = w.beta != 0.0;
  const ModelOutput out = Forward(cfg, params, prepared.sample->image, options);
  SampleLoss loss;
  Tensor det, seg;
  if (options.detection) {
    det = ComputeDetectionLoss(out.det_raw, prepared.assignment, prepared.sample->boxes, anchors, w).total;
    loss.det = det.item();
  }
  if (options.segmentation) {
    seg = SegLoss(SoftmaxChannel(out.seg_logits), prepared.onehot, w);
    loss.seg = seg.item();
  }
  loss.total = TotalLoss(det, seg, w);
  return loss;
}

// --- Staged training -------------------------------------------------------------------------

TrainResult StagedTrain(const ModelConfig& cfg, ModelParams params, std::span<const Sample> train,
                        std::span<const Sample> val, const StageSchedule& schedule, const LossWeights& weights,
                        const TrainOptions& options, const EpochCallback& on_epoch) {
  cfg.Validate();
  schedule.Validate();
  weights.Validate();
  options.optim.Validate();
  if (options.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (train.empty() || val.empty()) throw ValidationError("train: train and val splits must be non-empty");

  const std::vector<AnchorRef> anchors = GenerateGrid(cfg.anchors, cfg.input_w, cfg.input_h);
  std::vector<PreparedSample> train_prep, val_prep;
  for (const Sample& s : train) train_prep.push_back(Prepare(cfg, anchors, s));
  for (const Sample& s : val) val_prep.push_back(Prepare(cfg, anchors, s));

  namespace fs = std::filesystem;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  TrainResult result;
  OptimState optim = InitOptimState(params, options.optim);
  Rng rng(options.seed);
  std::vector<size_t> order(train_prep.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  const size_t n_batches = (order.size() + static_cast<size_t>(options.batch_size) - 1) /
                           static_cast<size_t>(options.batch_size);
  int global_epoch = 0;

  for (size_t si = 0; si < schedule.stages.size() && !result.aborted; ++si) {
    const StageSpec& stage = schedule.stages[si];
    const LossWeights w = StageWeights(weights, stage);
    params.SetTrainable(stage.trainable);
    std::vector<std::string> trainable_names;
    for (const auto& [name, entry] : params.entries()) {
      if (stage.trainable.count(entry.group)) trainable_names.push_back(name);
    }
    optim.lr = stage.lr.value_or(options.optim.lr);
    PlateauState plateau;
    StageRecord record;
    record.stage = static_cast<int>(si + 1);
    record.before = Checksums(params);

    for (int e = 1; e <= stage.max_epochs; ++e) {
      ++global_epoch;
      EpochRecord ep;
      ep.epoch = global_epoch;
      ep.stage = record.stage;
      ep.stage_epoch = e;
      ep.lr = optim.lr;
      rng.Shuffle(order);
      LossSums train_sums;
      for (size_t b = 0; b < n_batches && !result.aborted; ++b) {
        const size_t begin = b * static_cast<size_t>(options.batch_size);
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(options.batch_size));
        const size_t count = end - begin;
        std::vector<SampleLoss> losses(count);
        std::vector<std::vector<std::vector<double>>> grads(count);
        try {
          ParallelFor(static_cast<int64_t>(count), options.threads, [&](int64_t k) {
            const PreparedSample& p = train_prep[order[begin + static_cast<size_t>(k)]];
            Tape tape;
            TapeScope scope(&tape);
            SampleLoss loss = ComputeSampleLoss(cfg, params, anchors, p, w);
            if (!std::isfinite(loss.total.item())) throw NumericError("non-finite loss");
            tape.Backward(loss.total);
            auto& g = grads[static_cast<size_t>(k)];
            for (const std::string& name : trainable_names) {
              const Tensor grad = tape.Gradient(params.Get(name));
              g.emplace_back(grad.values().begin(), grad.values().end());
            }
            losses[static_cast<size_t>(k)] = std::move(loss);
          });
        } catch (const NumericError& err) {
          result.aborted = true;
          result.abort_reason = err.what();
          result.abort_stage = record.stage;
          result.abort_epoch = global_epoch;
          result.abort_batch = static_cast<int64_t>(b);
          break;
        }
        GradientMap batch_grad;
        for (size_t t = 0; t < trainable_names.size(); ++t) {
          std::vector<double> sum = std::move(grads[0][t]);
          for (size_t k = 1; k < count; ++k) {
            for (size_t i = 0; i < sum.size(); ++i) sum[i] += grads[k][t][i];
          }
          for (double& v : sum) v /= static_cast<double>(count);
          batch_grad.emplace(trainable_names[t], std::move(sum));
        }
        OptimStep(params, batch_grad, optim, stage.trainable);
        for (const SampleLoss& l : losses) train_sums.Add(l);
      }
      if (result.aborted) break;
      ep.train = train_sums.Mean(order.size());

      std::vector<SampleLoss> val_losses(val_prep.size());
      {
        params.SetTrainable({});
        ParallelFor(static_cast<int64_t>(val_prep.size()), options.threads, [&](int64_t k) {
          TapeScope no_tape(nullptr);
          val_losses[static_cast<size_t>(k)] = ComputeSampleLoss(cfg, params, anchors, val_prep[static_cast<size_t>(k)], w);
        });
        params.SetTrainable(stage.trainable);
      }
      LossSums val_sums;
      for (const SampleLoss& l : val_losses) val_sums.Add(l);
      ep.val = val_sums.Mean(val_prep.size());
      if (!std::isfinite(ep.val.total)) {
        result.aborted = true;
        result.abort_reason = "non-finite validation loss";
        result.abort_stage = record.stage;
        result.abort_epoch = global_epoch;
        break;
      }
      ep.checksums = Checksums(params);
      ep.converged = ep.val.total < stage.threshold;
      ep.stage_end = ep.converged || e == stage.max_epochs;
      optim.lr = PlateauStep(ep.val.total, optim.lr, plateau, options.plateau);
      result.epochs.push_back(ep);
      record.epochs = e;
      record.converged = ep.converged;
      if (on_epoch) on_epoch(ep);
      if (ep.stage_end) break;
    }
    record.after = Checksums(params);
    result.stages.push_back(record);
    if (!options.out_dir.empty() && !result.aborted) {
      SaveCheckpoint(params, (fs::path(options.out_dir) / ("stage" + std::to_string(record.stage) + ".ckpt")).string());
    }
  }
  params.SetTrainable({});
  if (!options.out_dir.empty()) {
    if (!result.aborted) SaveCheckpoint(params, (fs::path(options.out_dir) / "model.ckpt").string());
    WriteText(fs::path(options.out_dir) / "train_log.json", TrainLogJson(result).dump(1) + "\n");
  }
  result.params = std::move(params);
  return result;
}

nlohmann::json TrainLogJson(const TrainResult& result) {
  nlohmann::json log = nlohmann::json::array();
  for (const EpochRecord& e : result.epochs) {
    log.push_back({{"epoch", e.epoch},
                   {"stage", e.stage},
                   {"stage_epoch", e.stage_epoch},
                   {"train_losses", SummaryJson(e.train)},
                   {"val_losses", SummaryJson(e.val)},
                   {"lr", e.lr},
                   {"stage_end", e.stage_end},
                   {"converged", e.converged},
                   {"checksums", {{"enc", Hex(e.checksums[0])}, {"det", Hex(e.checksums[1])}, {"seg", Hex(e.checksums[2])}}}});
  }
  if (result.aborted) {
    log.push_back({{"aborted", true},
                   {"reason", result.abort_reason},
                   {"stage", result.abort_stage},
                   {"epoch", result.abort_epoch},
                   {"batch", result.abort_batch}});
  }
  return log;
}

// --- Evaluation --------------------------------------------------------------------------------

EvalReport Evaluate(const ModelConfig& cfg, const ModelParams& params, std::span<const Sample> samples,
                    double conf_threshold, double nms_threshold, int threads) {
  const std::vector<AnchorRef> anchors = GenerateGrid(cfg.anchors, cfg.input_w, cfg.input_h);
  std::vector<Prediction> preds(samples.size());
  ParallelFor(static_cast<int64_t>(samples.size()), threads, [&](int64_t i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    if (s.width != cfg.input_w || s.height != cfg.input_h) {
      throw ValidationError("evaluate: sample size does not match the model input");
    }
    preds[static_cast<size_t>(i)] = Predict(cfg, params, anchors, s.image, conf_threshold, nms_threshold);
  });
  EvalReport report;
  report.confusion = ConfusionMatrix(static_cast<int>(cfg.num_seg_classes));
  report.images = static_cast<int64_t>(samples.size());
  for (int64_t cls = 0; cls < cfg.num_classes_det; ++cls) {
    std::vector<ImageDetections> per_image(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
      for (const Detection& d : preds[i].detections) {
        if (d.class_id == cls) per_image[i].predictions.push_back({d.box, d.score});
      }
      for (const LabeledBox& b : samples[i].boxes) {
        if (b.class_id == cls) per_image[i].ground_truth.push_back(b.box);
      }
    }
    report.per_class.push_back(AveragePrecision(per_image, 0.5, conf_threshold));
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    report.confusion.Accumulate(preds[i].seg_mask, samples[i].mask);
    report.lanes.Add(preds[i].seg_mask, samples[i].mask);
    report.skipped_degenerate += preds[i].skipped_degenerate;
  }
  FinishDetectionMetrics(report);
  return report;
}

}  // namespace hnk
