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

#include "hnk/cli.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "hnk/anchors.h"
#include "hnk/config.h"
#include "hnk/errors.h"
#include "hnk/parallel.h"
#include "hnk/verify.h"

namespace hnk {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Flags {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::optional<int64_t> n;
  std::optional<int> epochs;
  std::optional<double> conf;
  std::optional<double> nms;
  std::string checkpoint;
  std::string image;
  std::string split = "val";
  int k = 9;
  int iters = 100;
};

RunConfig ResolveConfig(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : LoadRunConfig(f.config);
  if (f.epochs) {
    for (StageSpec& s : cfg.schedule.stages) s.max_epochs = *f.epochs;
  }
  if (f.conf) cfg.eval.conf = *f.conf;
  if (f.nms) cfg.eval.nms = *f.nms;
  cfg.train.threads = ThreadsFromEnv();
  return cfg;
}

void WriteJson(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << doc.dump(1) << "\n";
}

fs::path RequireOut(const Flags& f) {
  if (f.out.empty()) throw ValidationError("--out DIR is required");
  fs::create_directories(f.out);
  return fs::path(f.out);
}

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

Splits LoadSplits(const RunConfig& cfg) {
  Splits s;
  if (!cfg.data.train_manifest.empty()) {
    s.train = LoadDataset(cfg.data.train_manifest, cfg.data.classes).samples;
    if (cfg.data.val_manifest.empty()) throw ValidationError("data.val_manifest is required with train_manifest");
    s.val = LoadDataset(cfg.data.val_manifest, cfg.data.classes).samples;
    return s;
  }
  std::vector<Sample> all = Generate(cfg.data.scene, cfg.data.train_count + cfg.data.val_count);
  const auto cut = all.begin() + static_cast<std::ptrdiff_t>(cfg.data.train_count);
  s.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(cut));
  s.val.assign(std::make_move_iterator(cut), std::make_move_iterator(all.end()));
  return s;
}

ModelParams LoadMatchingCheckpoint(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ValidationError("--checkpoint PATH is required");
  ModelParams params = LoadCheckpoint(path);
  const ModelParams expected = BuildModel(cfg.model, 0);
  bool same = params.entries().size() == expected.entries().size();
  for (const auto& [name, entry] : expected.entries()) {
    same = same && params.Contains(name) && params.Get(name).shape() == entry.value.shape() &&
           params.GroupOf(name) == entry.group;
  }
  if (!same) throw ValidationError(path + ": checkpoint does not match the model config");
  return params;
}

std::string Fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int Synth(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  if (f.seed) cfg.data.scene.seed = *f.seed;
  cfg.Validate();
  const int64_t n = f.n.value_or(cfg.data.train_count + cfg.data.val_count);
  const fs::path dir = RequireOut(f);
  const std::vector<Sample> samples = Generate(cfg.data.scene, n);
  SaveDataset(dir.string(), samples, cfg.data.classes);
  int64_t boxes = 0, dropped = 0;
  for (const Sample& s : samples) {
    boxes += static_cast<int64_t>(s.boxes.size());
    dropped += s.dropped_vehicles;
  }
  out << "wrote " << n << " samples (" << boxes << " vehicles, " << dropped << " not placed) to " << dir.string()
      << "\n";
  return kExitOk;
}

int AnchorsFit(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  if (f.seed) cfg.train.seed = *f.seed;
  cfg.Validate();
  const fs::path dir = RequireOut(f);
  const Splits data = LoadSplits(cfg);
  std::vector<BoxSize> sizes;
  for (const Sample& s : data.train) {
    for (const LabeledBox& b : s.boxes) sizes.push_back({b.box.width(), b.box.height()});
  }
  const KMeansResult fit = KMeansFit(sizes, f.k, cfg.train.seed, f.iters);
  std::vector<BoxSize> fitted;
  json clusters = json::array();
  for (const SizeCluster& c : fit.clusters) {
    fitted.push_back({c.w, c.h});
    clusters.push_back({{"w", c.w}, {"h", c.h}, {"members", c.member_count}});
  }
  const std::vector<BoxSize> configured = PriorSizes(cfg.model.anchors);
  const std::vector<BoxSize> paper = PriorSizes(AnchorConfig{});
  json report = {{"boxes", sizes.size()},
                 {"clusters", clusters},
                 {"distortion_history", fit.distortion_history},
                 {"iterations", fit.iterations},
                 {"mean_best_iou",
                  {{"fitted", MeanBestIou(sizes, fitted)},
                   {"configured", MeanBestIou(sizes, configured)},
                   {"default", MeanBestIou(sizes, paper)}}}};
  if (fit.clusters.size() == 9) {
    const DerivedAnchors derived =
        DeriveScalesRatios(fit.clusters, cfg.model.anchors.levels, cfg.model.anchors.base_scale_constant);
    json ratios = json::array();
    for (const auto& [w, h] : derived.config.ratios) ratios.push_back({w, h});
    report["derived"] = {{"scales", derived.config.scales},
                         {"ratios", ratios},
                         {"levels", derived.config.levels},
                         {"base_scale_constant", derived.config.base_scale_constant}};
    report["warnings"] = derived.warnings;
    report["mean_best_iou"]["derived_grid"] = MeanBestIou(sizes, PriorSizes(derived.config));
  }
  WriteJson(dir / "anchors.json", report);
  out << "fitted " << fit.clusters.size() << " clusters to " << sizes.size() << " boxes; mean best IoU fitted "
      << Fixed(report["mean_best_iou"]["fitted"].get<double>()) << ", default "
      << Fixed(report["mean_best_iou"]["default"].get<double>()) << "\n";
  return kExitOk;
}

int Train(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  if (f.seed) cfg.train.seed = *f.seed;
  cfg.Validate();
  const fs::path dir = RequireOut(f);
  WriteJson(dir / "config.json", RunConfigToJson(cfg));
  const Splits data = LoadSplits(cfg);
  TrainOptions options = cfg.train;
  options.out_dir = dir.string();
  const TrainResult result =
      StagedTrain(cfg.model, BuildModel(cfg.model, cfg.train.seed), data.train, data.val, cfg.schedule, cfg.losses,
                  options, [&](const EpochRecord& e) {
                    out << "epoch " << e.epoch << " stage " << e.stage << " lr " << e.lr << " train "
                        << Fixed(e.train.total) << " val " << Fixed(e.val.total)
                        << (e.converged ? " converged" : "") << "\n";
                    out.flush();
                  });
  if (result.aborted) {
    out << "aborted: " << result.abort_reason << " (stage " << result.abort_stage << ", epoch " << result.abort_epoch
        << ", batch " << result.abort_batch << ")\n";
    return kExitNumeric;
  }
  const EvalReport report = Evaluate(cfg.model, result.params, data.val, cfg.eval.conf, cfg.eval.nms, options.threads);
  WriteJson(dir / "eval_report.json", report.ToJson());
  out << "val " << report.ToJson().dump() << "\n";
  return kExitOk;
}

int Eval(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  cfg.Validate();
  if (f.split != "train" && f.split != "val") throw ValidationError("--split must be train or val");
  const fs::path dir = RequireOut(f);
  const ModelParams params = LoadMatchingCheckpoint(cfg, f.checkpoint);
  const Splits data = LoadSplits(cfg);
  const std::vector<Sample>& samples = f.split == "train" ? data.train : data.val;
  const EvalReport report = Evaluate(cfg.model, params, samples, cfg.eval.conf, cfg.eval.nms, cfg.train.threads);
  const json doc = report.ToJson();
  WriteJson(dir / "eval_report.json", doc);
  out << doc.dump(1) << "\n";
  return kExitOk;
}

int PredictCmd(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  cfg.Validate();
  if (f.image.empty()) throw ValidationError("--image PATH is required");
  const fs::path dir = RequireOut(f);
  const ModelParams params = LoadMatchingCheckpoint(cfg, f.checkpoint);
  const Tensor image = ReadPpm(f.image);
  const std::vector<AnchorRef> anchors = GenerateGrid(cfg.model.anchors, cfg.model.input_w, cfg.model.input_h);
  const Prediction pred = Predict(cfg.model, params, anchors, image, cfg.eval.conf, cfg.eval.nms);
  json dets = json::array();
  for (const Detection& d : pred.detections) {
    dets.push_back({{"x1", d.box.x1},
                    {"y1", d.box.y1},
                    {"x2", d.box.x2},
                    {"y2", d.box.y2},
                    {"score", d.score},
                    {"category", cfg.data.classes[static_cast<size_t>(d.class_id)]}});
  }
  WriteJson(dir / "predictions.json", {{"detections", dets}, {"skipped_degenerate", pred.skipped_degenerate}});
  WritePgm((dir / "mask.pgm").string(), pred.seg_mask, cfg.model.input_w, cfg.model.input_h);
  out << dets.size() << " detections; mask written to " << (dir / "mask.pgm").string() << "\n";
  return kExitOk;
}

int Info(const Flags& f, std::ostream& out) {
  RunConfig cfg = ResolveConfig(f);
  cfg.Validate();
  const CostReport cost = CountParamsFlops(cfg.model);
  const int64_t anchors = CountAnchors(cfg.model.anchors, cfg.model.input_w, cfg.model.input_h);
  json layers = json::array();
  for (const LayerCost& l : cost.layers) {
    out << "  " << l.name << "  params " << l.params << "  macs " << l.macs << "\n";
    layers.push_back({{"name", l.name}, {"params", l.params}, {"macs", l.macs}});
  }
  out << "total params " << cost.params << ", MACs " << cost.macs << ", anchors " << anchors << " for "
      << cfg.model.input_w << "x" << cfg.model.input_h << "\n";
  if (!f.out.empty()) {
    WriteJson(RequireOut(f) / "info.json",
              {{"params", cost.params}, {"macs", cost.macs}, {"anchors", anchors}, {"layers", layers}});
  }
  return kExitOk;
}

int Selftest(const Flags& f, std::ostream& out) {
  const std::vector<CheckResult> results = RunSelftest();
  json report = json::array();
  bool ok = true;
  for (const CheckResult& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (" << Fixed(r.seconds, 1) << " s)\n";
    report.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    ok = ok && r.passed;
  }
  if (!f.out.empty()) WriteJson(RequireOut(f) / "selftest.json", report);
  out << (ok ? "all suites passed\n" : "selftest failed\n");
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid detection and segmentation toolkit", "hnk"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&f](CLI::App* cmd) {
    cmd->add_option("--config", f.config, "JSON run config");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Seed override");
  };
  auto eval_flags = [&f](CLI::App* cmd) {
    cmd->add_option("--conf", f.conf, "Confidence threshold");
    cmd->add_option("--nms", f.nms, "NMS IoU threshold");
  };
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  synth->add_option("--n", f.n, "Number of samples");
  CLI::App* anchors = app.add_subcommand("anchors", "Anchor tools");
  anchors->require_subcommand(1);
  CLI::App* fit = anchors->add_subcommand("fit", "Fit anchor priors by IoU k-means");
  common(fit);
  fit->add_option("--k", f.k, "Number of clusters");
  fit->add_option("--iters", f.iters, "Maximum k-means iterations");
  CLI::App* train = app.add_subcommand("train", "Run the staged training schedule");
  common(train);
  train->add_option("--epochs", f.epochs, "Per-stage epoch cap");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  common(eval);
  eval_flags(eval);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  eval->add_option("--split", f.split, "train or val");
  CLI::App* predict = app.add_subcommand("predict", "Predict one PPM image");
  common(predict);
  eval_flags(predict);
  predict->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  predict->add_option("--image", f.image, "Input PPM image");
  CLI::App* info = app.add_subcommand("info", "Parameter and MAC counts");
  common(info);
  CLI::App* selftest = app.add_subcommand("selftest", "Run the gradient and oracle suites");
  common(selftest);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInvalid;
  }

  try {
    if (synth->parsed()) return Synth(f, out);
    if (fit->parsed()) return AnchorsFit(f, out);
    if (train->parsed()) return Train(f, out);
    if (eval->parsed()) return Eval(f, out);
    if (predict->parsed()) return PredictCmd(f, out);
    if (info->parsed()) return Info(f, out);
    if (selftest->parsed()) return Selftest(f, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  err << app.help();
  return kExitInvalid;
}

}  // namespace hnk
