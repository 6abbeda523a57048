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

#include "hnk/config.h"

#include <fstream>
#include <set>
#include <sstream>

#include "hnk/errors.h"

namespace hnk {
namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects any key never asked for.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ValidationError("config: " + path_ + " must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.count(key)) throw ValidationError("config: unknown key " + Where(key));
    }
  }

  const json* Find(const std::string& key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  std::string Where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void Get(const std::string& key, T& out) {
    if (const json* v = Find(key)) out = Convert<T>(*v, Where(key));
  }

  template <typename T>
  static T Convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError("config: " + where + " must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ValidationError("config: " + where + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return static_cast<T>(v.get<uint64_t>());
        if (v.get<int64_t>() < 0) throw ValidationError("config: " + where + " must be >= 0");
      }
      return static_cast<T>(v.get<int64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ValidationError("config: " + where + " must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ValidationError("config: " + where + " must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ValidationError("config: " + where + " must be an array");
      T out;
      for (size_t i = 0; i < v.size(); ++i) {
        out.push_back(Convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

ParamGroup ParseGroup(const std::string& name, const std::string& where) {
  if (name == "enc") return ParamGroup::kEncoder;
  if (name == "det") return ParamGroup::kDetection;
  if (name == "seg") return ParamGroup::kSegmentation;
  throw ValidationError("config: " + where + ": unknown group \"" + name + "\" (use enc, det, seg)");
}

void ParseModel(const json& doc, ModelConfig& m) {
  Section s(doc, "model");
  s.Get("input_w", m.input_w);
  s.Get("input_h", m.input_h);
  s.Get("backbone_channels", m.backbone_channels);
  s.Get("fpn_channels", m.fpn_channels);
  s.Get("bifpn_repeats", m.bifpn_repeats);
  s.Get("det_head_layers", m.det_head_layers);
  s.Get("num_classes_det", m.num_classes_det);
  s.Get("num_seg_classes", m.num_seg_classes);
  s.Get("seg_fuse_channels", m.seg_fuse_channels);
}

void ParseAnchors(const json& doc, AnchorConfig& a) {
  Section s(doc, "anchors");
  s.Get("levels", a.levels);
  s.Get("base_scale_constant", a.base_scale_constant);
  s.Get("scales", a.scales);
  if (const json* r = s.Find("ratios")) {
    const auto pairs = Section::Convert<std::vector<std::vector<double>>>(*r, "anchors.ratios");
    a.ratios.clear();
    for (const auto& p : pairs) {
      if (p.size() != 2) throw ValidationError("config: anchors.ratios entries must be [w, h] pairs");
      a.ratios.emplace_back(p[0], p[1]);
    }
  }
}

void ParseLosses(const json& doc, LossWeights& w) {
  Section s(doc, "losses");
  s.Get("alpha", w.alpha);
  s.Get("beta", w.beta);
  s.Get("alpha1", w.alpha1);
  s.Get("alpha2", w.alpha2);
  s.Get("alpha3", w.alpha3);
  s.Get("lambda_seg", w.lambda_seg);
  s.Get("phi", w.phi);
  s.Get("gamma_focal", w.gamma_focal);
  s.Get("alpha_focal", w.alpha_focal);
  s.Get("delta2", w.delta2);
}

void ParseTrain(const json& doc, RunConfig& cfg) {
  Section s(doc, "train");
  TrainOptions& t = cfg.train;
  s.Get("batch_size", t.batch_size);
  s.Get("seed", t.seed);
  s.Get("lr", t.optim.lr);
  s.Get("beta1", t.optim.beta1);
  s.Get("beta2", t.optim.beta2);
  s.Get("eps", t.optim.eps);
  s.Get("weight_decay", t.optim.weight_decay);
  s.Get("patience", t.plateau.patience);
  s.Get("min_delta", t.plateau.min_delta);
  s.Get("lr_factor", t.plateau.factor);
  s.Get("min_lr", t.plateau.min_lr);
  if (const json* stages = s.Find("stages")) {
    if (!stages->is_array()) throw ValidationError("config: train.stages must be an array");
    cfg.schedule.stages.clear();
    for (size_t i = 0; i < stages->size(); ++i) {
      const std::string where = "train.stages[" + std::to_string(i) + "]";
      Section st((*stages)[i], where);
      StageSpec spec;
      std::vector<std::string> groups;
      st.Get("trainable", groups);
      for (const std::string& g : groups) spec.trainable.insert(ParseGroup(g, where));
      st.Get("threshold", spec.threshold);
      st.Get("max_epochs", spec.max_epochs);
      for (const char* key : {"alpha", "beta", "lr"}) {
        const json* v = st.Find(key);
        if (v == nullptr || v->is_null()) continue;
        const std::string k = key;
        (k == "alpha" ? spec.alpha : k == "beta" ? spec.beta : spec.lr) = Section::Convert<double>(*v, st.Where(key));
      }
      cfg.schedule.stages.push_back(spec);
    }
  }
}

void ParseScene(const json& doc, SceneSpec& sc) {
  Section s(doc, "data.scene");
  s.Get("seed", sc.seed);
  s.Get("width", sc.width);
  s.Get("height", sc.height);
  s.Get("min_vehicles", sc.min_vehicles);
  s.Get("max_vehicles", sc.max_vehicles);
  s.Get("min_vehicle_size", sc.min_vehicle_size);
  s.Get("max_vehicle_size", sc.max_vehicle_size);
  s.Get("max_aspect", sc.max_aspect);
  s.Get("horizon", sc.horizon);
  s.Get("top_width", sc.top_width);
  s.Get("bottom_width", sc.bottom_width);
  s.Get("road_jitter", sc.road_jitter);
  s.Get("lane_count", sc.lane_count);
  s.Get("lane_thickness", sc.lane_thickness);
  s.Get("noise", sc.noise);
}

void ParseData(const json& doc, DataConfig& d) {
  Section s(doc, "data");
  if (const json* scene = s.Find("scene")) ParseScene(*scene, d.scene);
  s.Get("train_count", d.train_count);
  s.Get("val_count", d.val_count);
  s.Get("train_manifest", d.train_manifest);
  s.Get("val_manifest", d.val_manifest);
  s.Get("classes", d.classes);
}

void ParseEval(const json& doc, EvalConfig& e) {
  Section s(doc, "eval");
  s.Get("conf", e.conf);
  s.Get("nms", e.nms);
}

}  // namespace

void RunConfig::Validate() const {
  model.Validate();
  losses.Validate();
  schedule.Validate();
  train.optim.Validate();
  if (train.batch_size < 1) throw ValidationError("config: train.batch_size must be >= 1");
  if (train.plateau.patience < 1) throw ValidationError("config: train.patience must be >= 1");
  if (!(train.plateau.min_delta >= 0.0)) throw ValidationError("config: train.min_delta must be >= 0");
  if (!(train.plateau.factor > 0.0 && train.plateau.factor < 1.0)) {
    throw ValidationError("config: train.lr_factor must be in (0, 1)");
  }
  if (!(train.plateau.min_lr > 0.0)) throw ValidationError("config: train.min_lr must be > 0");
  data.scene.Validate();
  if (data.train_count < 1 || data.val_count < 1) throw ValidationError("config: data counts must be >= 1");
  if (data.classes.empty()) throw ValidationError("config: data.classes must not be empty");
  if (static_cast<int64_t>(data.classes.size()) != model.num_classes_det) {
    throw ValidationError("config: data.classes has " + std::to_string(data.classes.size()) +
                          " names but model.num_classes_det is " + std::to_string(model.num_classes_det));
  }
  if (data.train_manifest.empty() &&
      (data.scene.width != model.input_w || data.scene.height != model.input_h)) {
    throw ValidationError("config: data.scene size must equal the model input size");
  }
  if (!(eval.conf >= 0.0 && eval.conf <= 1.0)) throw ValidationError("config: eval.conf must be in [0, 1]");
  if (!(eval.nms > 0.0 && eval.nms <= 1.0)) throw ValidationError("config: eval.nms must be in (0, 1]");
}

RunConfig ParseRunConfig(const json& doc) {
  RunConfig cfg;
  Section root(doc, "");
  if (const json* v = root.Find("model")) ParseModel(*v, cfg.model);
  if (const json* v = root.Find("anchors")) ParseAnchors(*v, cfg.model.anchors);
  if (const json* v = root.Find("losses")) ParseLosses(*v, cfg.losses);
  if (const json* v = root.Find("train")) ParseTrain(*v, cfg);
  cfg.data.scene.width = cfg.model.input_w;
  cfg.data.scene.height = cfg.model.input_h;
  if (const json* v = root.Find("data")) ParseData(*v, cfg.data);
  if (const json* v = root.Find("eval")) ParseEval(*v, cfg.eval);
  return cfg;
}

RunConfig LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot read " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config: " + path + ": " + e.what());
  }
  return ParseRunConfig(doc);
}

json RunConfigToJson(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const AnchorConfig& a = m.anchors;
  json ratios = json::array();
  for (const auto& [w, h] : a.ratios) ratios.push_back({w, h});
  json stages = json::array();
  for (const StageSpec& st : cfg.schedule.stages) {
    json groups = json::array();
    for (ParamGroup g : st.trainable) groups.push_back(GroupName(g));
    stages.push_back({{"trainable", groups},
                      {"threshold", st.threshold},
                      {"max_epochs", st.max_epochs},
                      {"alpha", st.alpha ? json(*st.alpha) : json(nullptr)},
                      {"beta", st.beta ? json(*st.beta) : json(nullptr)},
                      {"lr", st.lr ? json(*st.lr) : json(nullptr)}});
  }
  const LossWeights& w = cfg.losses;
  const TrainOptions& t = cfg.train;
  const SceneSpec& sc = cfg.data.scene;
  return {
      {"model",
       {{"input_w", m.input_w},
        {"input_h", m.input_h},
        {"backbone_channels", m.backbone_channels},
        {"fpn_channels", m.fpn_channels},
        {"bifpn_repeats", m.bifpn_repeats},
        {"det_head_layers", m.det_head_layers},
        {"num_classes_det", m.num_classes_det},
        {"num_seg_classes", m.num_seg_classes},
        {"seg_fuse_channels", m.seg_fuse_channels}}},
      {"anchors",
       {{"levels", a.levels}, {"base_scale_constant", a.base_scale_constant}, {"scales", a.scales}, {"ratios", ratios}}},
      {"losses",
       {{"alpha", w.alpha},
        {"beta", w.beta},
        {"alpha1", w.alpha1},
        {"alpha2", w.alpha2},
        {"alpha3", w.alpha3},
        {"lambda_seg", w.lambda_seg},
        {"phi", w.phi},
        {"gamma_focal", w.gamma_focal},
        {"alpha_focal", w.alpha_focal},
        {"delta2", w.delta2}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"seed", t.seed},
        {"lr", t.optim.lr},
        {"beta1", t.optim.beta1},
        {"beta2", t.optim.beta2},
        {"eps", t.optim.eps},
        {"weight_decay", t.optim.weight_decay},
        {"patience", t.plateau.patience},
        {"min_delta", t.plateau.min_delta},
        {"lr_factor", t.plateau.factor},
        {"min_lr", t.plateau.min_lr},
        {"stages", stages}}},
      {"data",
       {{"scene",
         {{"seed", sc.seed},
          {"width", sc.width},
          {"height", sc.height},
          {"min_vehicles", sc.min_vehicles},
          {"max_vehicles", sc.max_vehicles},
          {"min_vehicle_size", sc.min_vehicle_size},
          {"max_vehicle_size", sc.max_vehicle_size},
          {"max_aspect", sc.max_aspect},
          {"horizon", sc.horizon},
          {"top_width", sc.top_width},
          {"bottom_width", sc.bottom_width},
          {"road_jitter", sc.road_jitter},
          {"lane_count", sc.lane_count},
          {"lane_thickness", sc.lane_thickness},
          {"noise", sc.noise}}},
        {"train_count", cfg.data.train_count},
        {"val_count", cfg.data.val_count},
        {"train_manifest", cfg.data.train_manifest},
        {"val_manifest", cfg.data.val_manifest},
        {"classes", cfg.data.classes}}},
      {"eval", {{"conf", cfg.eval.conf}, {"nms", cfg.eval.nms}}}};
}

}  // namespace hnk
