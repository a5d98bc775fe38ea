#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "owss/data.hpp"
#include "owss/errors.hpp"
#include "owss/metrics.hpp"
#include "owss/net.hpp"
#include "owss/openworld.hpp"
#include "owss/trainer.hpp"

namespace owss {

struct EvalOptions {
  StrategyId strategy = StrategyId::Gs;
  bool use_cont = true;  // fuse the contrastive norm score
  double delta = 0.6;
  double xi = 1.0;
  double t_th = 0.5;
  double eta = 0.5;
  double zeta = 0.2;
  double rho = 0.4;
};

struct SceneEval {
  FeatMap sem;
  FeatMap cont;
  std::vector<double> s_strategy;
  std::vector<double> s_cont;
  std::vector<double> s_fused;
  std::vector<uint8_t> unknown_mask;
  std::vector<int> sem_argmax;  // 0-based class indices
};

struct SplitMetrics {
  double aupr = 0;
  double fpr95 = 0;
  double miou_known = 0;
  double prevalence = 0;  // unknown share of evaluated (non-void) pixels
  long eval_pixels = 0;
  std::optional<double> frac_known_in_tube;
  std::optional<double> frac_unknown_below;
};

template <class S>
FeatMap to_featmap(const Tensor<S>& batch_out, int image, int height,
                   int width) {
  const int k = batch_out.shape().back();
  FeatMap fm;
  fm.height = height;
  fm.width = width;
  fm.dim = k;
  fm.values.resize(static_cast<size_t>(height) * width * k);
  const long offset = static_cast<long>(image) * height * width * k;
  const auto& d = batch_out.data();
  for (size_t i = 0; i < fm.values.size(); ++i)
    fm.values[i] = static_cast<double>(d[offset + i]);
  return fm;
}

template <class S>
SceneEval eval_scene(const Model<S>& model, const SegScene& scene,
                     const GaussianBank& bank, const EvalOptions& opt) {
  std::vector<const SegScene*> one = {&scene};
  auto fwd = model.forward(nullptr, scenes_to_tensor<S>(one));
  SceneEval out;
  out.sem = to_featmap(fwd.sem, 0, scene.height, scene.width);
  out.cont = to_featmap(fwd.cont, 0, scene.height, scene.width);
  out.sem_argmax = argmax_lastdim(fwd.sem);

  const GaussianBank* bank_ptr = bank.empty() ? nullptr : &bank;
  out.s_strategy = strategy_score(opt.strategy, out.sem, bank_ptr, opt.t_th);
  const long n = out.sem.pixels();
  out.s_cont.resize(n);
  for (long p = 0; p < n; ++p)
    out.s_cont[p] = cont_unknown_score(out.cont.values.data() + p * out.cont.dim,
                                       out.cont.dim, opt.xi);
  if (opt.use_cont) {
    UnknownScores fused = fuse(out.s_strategy, out.s_cont, scene.height,
                               scene.width, opt.delta);
    out.s_fused = std::move(fused.s_fused);
    out.unknown_mask = std::move(fused.unknown_mask);
  } else {
    out.s_fused = out.s_strategy;
    out.unknown_mask.resize(n);
    for (long p = 0; p < n; ++p)
      out.unknown_mask[p] = out.s_fused[p] > opt.delta ? 1 : 0;
  }
  for (double v : out.s_fused)
    if (!std::isfinite(v)) throw NumericError("eval: non-finite unknown score");
  return out;
}

template <class S>
SplitMetrics eval_split(const Model<S>& model, const SegSplit& split,
                        const GaussianBank& bank, const EvalOptions& opt,
                        std::vector<SceneEval>* keep = nullptr) {
  const int k = model.config().num_classes;
  BinaryEval be;
  ConfusionAccumulator conf(k);
  long unknown_px = 0;
  long known_tube = 0, known_total = 0, unk_below = 0, unk_total = 0;

  for (const auto& scene : split.scenes) {
    SceneEval se = eval_scene(model, scene, bank, opt);
    for (size_t p = 0; p < scene.labels.size(); ++p) {
      const uint8_t lab = scene.labels[p];
      if (lab == kVoidLabel) continue;
      const bool unknown = is_unknown_label(lab, k);
      be.add(se.s_fused[p], unknown);
      unknown_px += unknown;
      if (!unknown) conf.add(lab - 1, se.sem_argmax[p]);

      const double* f = se.cont.values.data() + p * se.cont.dim;
      double n2 = 0;
      for (int j = 0; j < se.cont.dim; ++j) n2 += f[j] * f[j];
      const double norm = std::sqrt(n2);
      if (unknown) {
        ++unk_total;
        unk_below += norm < opt.rho;
      } else {
        ++known_total;
        known_tube += norm > 1.0 - opt.zeta && norm < 1.0 + opt.zeta;
      }
    }
    if (keep) keep->push_back(std::move(se));
  }

  SplitMetrics m;
  m.eval_pixels = static_cast<long>(be.size());
  m.prevalence = m.eval_pixels == 0
                     ? 0.0
                     : static_cast<double>(unknown_px) / m.eval_pixels;
  m.aupr = aupr(be);
  m.fpr95 = fpr_at_95tpr(be);
  std::vector<int> classes(k);
  for (int c = 0; c < k; ++c) classes[c] = c;
  m.miou_known = miou(conf, classes);
  if (known_total > 0)
    m.frac_known_in_tube = static_cast<double>(known_tube) / known_total;
  if (unk_total > 0)
    m.frac_unknown_below = static_cast<double>(unk_below) / unk_total;
  return m;
}

struct DiscoveryOutput {
  int num_discovered = 0;
  DiscoveryMatch match;
  std::vector<std::vector<int>> per_scene_ids;  // 0 = not flagged unknown
};

// Sequential novel-class discovery over the split: scenes in file order,
// pixels in raster order, on the semantic decoder's pre-softmax features of
// unknown-flagged pixels.
template <class S>
DiscoveryOutput run_discovery(const Model<S>& model, const SegSplit& split,
                              const GaussianBank& bank, const EvalOptions& opt) {
  const int k = model.config().num_classes;
  DiscoveryState state(k, opt.eta);
  DiscoveryOutput out;
  std::vector<int> all_ids, all_gt;
  for (const auto& scene : split.scenes) {
    SceneEval se = eval_scene(model, scene, bank, opt);
    std::vector<int> ids(scene.labels.size(), 0);
    for (size_t p = 0; p < scene.labels.size(); ++p) {
      if (se.unknown_mask[p])
        ids[p] = state.discover(se.sem.values.data() + p * se.sem.dim);
      const uint8_t lab = scene.labels[p];
      if (lab == kVoidLabel) continue;
      all_ids.push_back(ids[p]);
      all_gt.push_back(is_unknown_label(lab, k) ? lab : 0);
    }
    out.per_scene_ids.push_back(std::move(ids));
  }
  out.num_discovered = state.num_classes();
  out.match = match_discovered(all_ids, all_gt);
  out.match.num_discovered = state.num_classes();
  return out;
}

struct SimilarityOutput {
  // per ground-truth unknown class id
  std::map<int, long> pixels;
  std::map<int, long> gauss_correct;
  std::map<int, long> ma_correct;
  std::vector<std::vector<uint8_t>> per_scene_similar;  // class id, 0 = none

  double gauss_accuracy(int cls) const {
    return pixels.count(cls) && pixels.at(cls) > 0
               ? static_cast<double>(gauss_correct.at(cls)) / pixels.at(cls)
               : 0.0;
  }
  double ma_accuracy(int cls) const {
    return pixels.count(cls) && pixels.at(cls) > 0
               ? static_cast<double>(ma_correct.at(cls)) / pixels.at(cls)
               : 0.0;
  }
};

// Most-similar known class for every unknown-flagged pixel, scored against
// the manifest lookup for pixels whose ground truth is an unknown class.
// The maximum-activation baseline is reported alongside.
template <class S>
SimilarityOutput run_similarity(const Model<S>& model, const SegSplit& split,
                                const GaussianBank& bank,
                                const ClassManifest& manifest,
                                const EvalOptions& opt) {
  const int k = model.config().num_classes;
  SimilarityOutput out;
  for (const auto& scene : split.scenes) {
    SceneEval se = eval_scene(model, scene, bank, opt);
    std::vector<uint8_t> sim_map(scene.labels.size(), 0);
    for (size_t p = 0; p < scene.labels.size(); ++p) {
      if (!se.unknown_mask[p]) continue;
      const double* f = se.sem.values.data() + p * se.sem.dim;
      const int gauss_id = similarity(f, bank) + 1;
      const int ma_id = se.sem_argmax[p] + 1;
      sim_map[p] = static_cast<uint8_t>(gauss_id);
      const uint8_t lab = scene.labels[p];
      if (!is_unknown_label(lab, k)) continue;
      const ClassInfo* info = manifest.find(lab);
      if (!info || info->most_similar == 0) continue;
      ++out.pixels[lab];
      out.gauss_correct[lab] += gauss_id == info->most_similar;
      out.ma_correct[lab] += ma_id == info->most_similar;
    }
    out.per_scene_similar.push_back(std::move(sim_map));
  }
  for (const auto& [cls, n] : out.pixels) {
    (void)n;
    out.gauss_correct.emplace(cls, 0);
    out.ma_correct.emplace(cls, 0);
  }
  return out;
}

}  // namespace owss
