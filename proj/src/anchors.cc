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

#include "hnk/anchors.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hnk/errors.h"
#include "hnk/rng.h"

namespace hnk {
namespace {

double ClusterCost(std::span<const BoxSize> sizes, const std::vector<int64_t>& members,
                   const BoxSize& centroid) {
  double cost = 0.0;
  for (int64_t m : members) cost += 1.0 - OriginIou(sizes[static_cast<size_t>(m)], centroid);
  return cost;
}

// Up to `cap` evenly spaced order statistics of the distinct values.
std::vector<double> Quantiles(std::vector<double> values, size_t cap) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() <= cap) return values;
  std::vector<double> picked;
  for (size_t i = 0; i < cap; ++i) picked.push_back(values[i * (values.size() - 1) / (cap - 1)]);
  return picked;
}

// Moves `centroid` to a size with lower summed 1 - IoU over `members`, if one
// is found. Candidates: member mean, a grid of member width/height quantiles,
// then a shrinking pattern search in log space around the best.
BoxSize ImproveCentroid(std::span<const BoxSize> sizes, const std::vector<int64_t>& members,
                        BoxSize centroid) {
  double best = ClusterCost(sizes, members, centroid);
  auto consider = [&](const BoxSize& c) {
    if (!(c.w > 0.0 && c.h > 0.0)) return false;
    const double cost = ClusterCost(sizes, members, c);
    if (cost < best) {
      best = cost;
      centroid = c;
      return true;
    }
    return false;
  };

  BoxSize mean{0.0, 0.0};
  std::vector<double> ws, hs;
  for (int64_t m : members) {
    mean.w += sizes[static_cast<size_t>(m)].w;
    mean.h += sizes[static_cast<size_t>(m)].h;
    ws.push_back(sizes[static_cast<size_t>(m)].w);
    hs.push_back(sizes[static_cast<size_t>(m)].h);
  }
  mean.w /= static_cast<double>(members.size());
  mean.h /= static_cast<double>(members.size());
  consider(mean);
  const auto wq = Quantiles(ws, 16);
  const auto hq = Quantiles(hs, 16);
  for (double w : wq) {
    for (double h : hq) consider({w, h});
  }

  constexpr double kSteps[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  int budget = 2000;
  for (double step = 0.05; step > 1e-9 && budget > 0; --budget) {
    bool moved = false;
    for (const auto& d : kSteps) {
      const BoxSize base = centroid;
      if (consider({base.w * std::exp(d[0] * step), base.h * std::exp(d[1] * step)})) {
        moved = true;
        break;
      }
    }
    if (!moved) step *= 0.5;
  }
  return centroid;
}

}  // namespace

int AnchorConfig::max_level() const { return *std::max_element(levels.begin(), levels.end()); }

void AnchorConfig::Validate() const {
  if (levels.empty()) throw ValidationError("anchors: levels must not be empty");
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1 || levels[i] > 12) throw ValidationError("anchors: level out of range");
    if (i > 0 && levels[i] <= levels[i - 1]) throw ValidationError("anchors: levels must ascend");
  }
  if (!(base_scale_constant > 0.0)) throw ValidationError("anchors: base_scale_constant must be positive");
  if (scales.empty() || ratios.empty()) throw ValidationError("anchors: need at least one scale and one ratio");
  for (size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw ValidationError("anchors: scales must be positive");
    if (i > 0 && scales[i] < scales[i - 1]) throw ValidationError("anchors: scales must ascend");
  }
  for (const auto& [rw, rh] : ratios) {
    if (!(rw > 0.0 && rh > 0.0)) throw ValidationError("anchors: ratio multipliers must be positive");
  }
}

double OriginIou(const BoxSize& a, const BoxSize& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

int64_t CountAnchors(const AnchorConfig& cfg, int64_t input_w, int64_t input_h) {
  cfg.Validate();
  const int64_t div = int64_t{1} << cfg.max_level();
  if (input_w <= 0 || input_h <= 0 || input_w % div != 0 || input_h % div != 0) {
    throw ValidationError("anchors: input " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                          " is not divisible by " + std::to_string(div));
  }
  int64_t cells = 0;
  for (int level : cfg.levels) cells += (input_w >> level) * (input_h >> level);
  return cells * cfg.anchors_per_cell();
}

std::vector<AnchorRef> GenerateGrid(const AnchorConfig& cfg, int64_t input_w, int64_t input_h) {
  std::vector<AnchorRef> anchors;
  anchors.reserve(static_cast<size_t>(CountAnchors(cfg, input_w, input_h)));
  for (int level : cfg.levels) {
    const int64_t gw = input_w >> level, gh = input_h >> level;
    const double stride = std::ldexp(1.0, level);
    for (int64_t y = 0; y < gh; ++y) {
      for (int64_t x = 0; x < gw; ++x) {
        for (double scale : cfg.scales) {
          for (const auto& [rw, rh] : cfg.ratios) {
            anchors.push_back({static_cast<double>(x), static_cast<double>(y),
                               cfg.base_scale_constant * scale * rw, cfg.base_scale_constant * scale * rh,
                               level, stride});
          }
        }
      }
    }
  }
  return anchors;
}

std::vector<BoxSize> PriorSizes(const AnchorConfig& cfg) {
  std::vector<BoxSize> priors;
  for (int level : cfg.levels) {
    const double base = cfg.base_scale_constant * std::ldexp(1.0, level);
    for (double scale : cfg.scales) {
      for (const auto& [rw, rh] : cfg.ratios) priors.push_back({base * scale * rw, base * scale * rh});
    }
  }
  return priors;
}

double MeanBestIou(std::span<const BoxSize> sizes, std::span<const BoxSize> priors) {
  if (sizes.empty() || priors.empty()) throw ValidationError("mean_best_iou: empty input");
  double total = 0.0;
  for (const BoxSize& s : sizes) {
    double best = 0.0;
    for (const BoxSize& p : priors) best = std::max(best, OriginIou(s, p));
    total += best;
  }
  return total / static_cast<double>(sizes.size());
}

KMeansResult KMeansFit(std::span<const BoxSize> sizes, int k, uint64_t seed, int max_iters) {
  if (k <= 0) throw ValidationError("kmeans: k must be positive");
  for (const BoxSize& s : sizes) {
    if (!(s.w > 0.0 && s.h > 0.0)) throw ValidationError("kmeans: sizes must be positive");
  }
  {
    std::vector<std::pair<double, double>> distinct;
    for (const BoxSize& s : sizes) distinct.emplace_back(s.w, s.h);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<size_t>(k) > distinct.size()) {
      throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(distinct.size()) +
                            " distinct sizes");
    }
  }
  const size_t n = sizes.size();
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<BoxSize> centroids;
  centroids.push_back(sizes[static_cast<size_t>(rng.UniformInt(static_cast<int64_t>(n)))]);
  std::vector<double> nearest(n);
  while (centroids.size() < static_cast<size_t>(k)) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (const BoxSize& c : centroids) d = std::min(d, 1.0 - OriginIou(sizes[i], c));
      nearest[i] = d * d;
      total += nearest[i];
    }
    const double target = rng.Uniform() * total;
    double running = 0.0;
    size_t pick = n;
    for (size_t i = 0; i < n; ++i) {
      if (nearest[i] <= 0.0) continue;
      running += nearest[i];
      pick = i;
      if (running > target) break;
    }
    centroids.push_back(sizes[pick]);
  }

  std::vector<int> assignment(n, -1);
  std::vector<double> distance(n);
  auto assign = [&]() {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = 1.0 - OriginIou(sizes[i], centroids[static_cast<size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assignment[i] = best;
      distance[i] = best_d;
      total += best_d;
    }
    return total / static_cast<double>(n);
  };
  auto reseed_empty = [&]() {
    for (int guard = 0; guard < k; ++guard) {
      std::vector<int64_t> counts(static_cast<size_t>(k), 0);
      for (int a : assignment) ++counts[static_cast<size_t>(a)];
      auto empty = std::find(counts.begin(), counts.end(), 0);
      if (empty == counts.end()) return;
      size_t far = 0;
      for (size_t i = 1; i < n; ++i) {
        if (distance[i] > distance[far]) far = i;
      }
      centroids[static_cast<size_t>(empty - counts.begin())] = sizes[far];
      assign();
    }
  };

  KMeansResult result;
  result.distortion_history.push_back(assign());
  reseed_empty();
  result.distortion_history.back() = std::accumulate(distance.begin(), distance.end(), 0.0) / static_cast<double>(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    for (int c = 0; c < k; ++c) {
      std::vector<int64_t> members;
      for (size_t i = 0; i < n; ++i) {
        if (assignment[i] == c) members.push_back(static_cast<int64_t>(i));
      }
      if (!members.empty()) centroids[static_cast<size_t>(c)] = ImproveCentroid(sizes, members, centroids[static_cast<size_t>(c)]);
    }
    const std::vector<int> previous = assignment;
    assign();
    reseed_empty();
    result.distortion_history.push_back(std::accumulate(distance.begin(), distance.end(), 0.0) /
                                        static_cast<double>(n));
    result.iterations = iter + 1;
    if (assignment == previous) break;
  }

  for (int c = 0; c < k; ++c) {
    const auto count = std::count(assignment.begin(), assignment.end(), c);
    result.clusters.push_back({centroids[static_cast<size_t>(c)].w, centroids[static_cast<size_t>(c)].h, count});
  }
  std::stable_sort(result.clusters.begin(), result.clusters.end(),
                   [](const SizeCluster& a, const SizeCluster& b) { return a.w * a.h < b.w * b.h; });
  return result;
}

std::vector<double> KMeans1d(std::vector<double> values, int k) {
  const size_t n = values.size();
  if (k <= 0 || static_cast<size_t>(k) > n) throw ValidationError("kmeans1d: need 1 <= k <= n");
  std::sort(values.begin(), values.end());
  std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + values[i];
    prefix_sq[i + 1] = prefix_sq[i] + values[i] * values[i];
  }
  // Sum of squared deviations of values[i, j).
  auto sse = [&](size_t i, size_t j) {
    const double cnt = static_cast<double>(j - i);
    const double s = prefix[j] - prefix[i];
    return std::max(0.0, (prefix_sq[j] - prefix_sq[i]) - s * s / cnt);
  };
  const double inf = std::numeric_limits<double>::infinity();
  const size_t kk = static_cast<size_t>(k);
  std::vector<std::vector<double>> cost(kk + 1, std::vector<double>(n + 1, inf));
  std::vector<std::vector<size_t>> split(kk + 1, std::vector<size_t>(n + 1, 0));
  cost[0][0] = 0.0;
  for (size_t m = 1; m <= kk; ++m) {
    for (size_t j = m; j <= n; ++j) {
      for (size_t i = m - 1; i < j; ++i) {
        if (cost[m - 1][i] == inf) continue;
        const double c = cost[m - 1][i] + sse(i, j);
        if (c < cost[m][j]) {
          cost[m][j] = c;
          split[m][j] = i;
        }
      }
    }
  }
  std::vector<double> centroids(kk);
  size_t j = n;
  for (size_t m = kk; m >= 1; --m) {
    const size_t i = split[m][j];
    centroids[m - 1] = (prefix[j] - prefix[i]) / static_cast<double>(j - i);
    j = i;
  }
  return centroids;
}

DerivedAnchors DeriveScalesRatios(std::span<const SizeCluster> clusters, const std::vector<int>& levels,
                                  double base_scale_constant) {
  if (clusters.size() != 9) {
    throw ValidationError("derive_scales_ratios: expected 9 clusters, got " + std::to_string(clusters.size()));
  }
  if (levels.empty() || !(base_scale_constant > 0.0)) {
    throw ValidationError("derive_scales_ratios: need levels and a positive base_scale_constant");
  }
  std::vector<double> aspect, size;
  for (const SizeCluster& c : clusters) {
    if (!(c.w > 0.0 && c.h > 0.0)) throw ValidationError("derive_scales_ratios: cluster sizes must be positive");
    aspect.push_back(std::sqrt(c.w / c.h));
    size.push_back(std::sqrt(c.w * c.h));
  }

  const double smallest = *std::min_element(size.begin(), size.end());
  int ref_level = levels.front();
  for (int level : levels) {
    const double base = base_scale_constant * std::ldexp(1.0, level);
    const double ref = base_scale_constant * std::ldexp(1.0, ref_level);
    if (std::abs(std::log(smallest / base)) < std::abs(std::log(smallest / ref))) ref_level = level;
  }
  const double ref_base = base_scale_constant * std::ldexp(1.0, ref_level);
  for (double& s : size) s /= ref_base;

  DerivedAnchors out;
  out.config.levels = levels;
  out.config.base_scale_constant = base_scale_constant;
  const std::vector<double> ratio_centroids = KMeans1d(aspect, 3);
  std::vector<double> scale_centroids = KMeans1d(size, 3);
  const double first = scale_centroids.front();
  for (double& s : scale_centroids) s /= first;
  out.config.scales = scale_centroids;
  out.config.ratios.clear();
  for (double r : ratio_centroids) out.config.ratios.emplace_back(r, 1.0 / r);

  auto has_duplicates = [](const std::vector<double>& v) {
    for (size_t i = 1; i < v.size(); ++i) {
      if (std::abs(v[i] - v[i - 1]) <= 1e-12 * std::abs(v[i])) return true;
    }
    return false;
  };
  if (has_duplicates(ratio_centroids)) out.warnings.push_back("ratios: duplicate centroids (no aspect spread)");
  if (has_duplicates(scale_centroids)) out.warnings.push_back("scales: duplicate centroids (no size spread)");
  return out;
}

}  // namespace hnk
