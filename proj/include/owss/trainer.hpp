#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "owss/data.hpp"
#include "owss/errors.hpp"
#include "owss/losses.hpp"
#include "owss/metrics.hpp"
#include "owss/net.hpp"
#include "owss/rng.hpp"
#include "owss/stats.hpp"

namespace owss {

struct TrainConfig {
  int epochs = 60;
  int batch = 8;
  double lr = 0.004;
  LossWeights weights;
  bool aug_scale = true;
  bool aug_crop = true;
  bool aug_flip = true;
  uint64_t seed = 7;
  // When off, the contrastive decoder receives no loss (and no gradient) and
  // its score is not fused at evaluation time.
  bool use_cont = true;
};

struct EpochRecord {
  int epoch = 0;
  double ce = 0;
  double feat = 0;  // already weighted contribution is w2 * feat
  double cont = 0;
  double obj = 0;
  double total = 0;
  double lr_last = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  ClassStats sem_stats;
  ClassStats cont_stats;
  bool nan_abort = false;
  int completed_epochs = 0;
};

// One-cycle schedule: cosine ramp from lr0/25 to lr0 over the first 30% of
// steps, cosine decay to lr0/1e4 over the remainder.
inline double lr_at(long step, long total_steps, double lr0) {
  if (step < 0 || step >= total_steps)
    throw UsageError("lr_at: step outside [0, total_steps)");
  const double lr_start = lr0 / 25.0;
  const double lr_end = lr0 / 1e4;
  const long warm = std::llround(0.3 * static_cast<double>(total_steps));
  constexpr double kPi = 3.14159265358979323846;
  if (step <= warm) {
    if (warm == 0) return lr0;
    const double t = static_cast<double>(step) / warm;
    return lr_start + (lr0 - lr_start) * 0.5 * (1.0 - std::cos(kPi * t));
  }
  const long span = total_steps - 1 - warm;
  if (span <= 0) return lr_end;
  const double t = static_cast<double>(step - warm) / span;
  return lr_end + (lr0 - lr_end) * 0.5 * (1.0 + std::cos(kPi * t));
}

// Adam moments, kept in double regardless of the parameter element type.
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;  // increments once per batch
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  template <class S>
  static OptimizerState for_model(const Model<S>& model) {
    OptimizerState st;
    st.m.resize(model.params().size());
    st.v.resize(model.params().size());
    for (size_t i = 0; i < model.params().size(); ++i) {
      st.m[i].assign(model.params()[i].data.size(), 0.0);
      st.v[i].assign(model.params()[i].data.size(), 0.0);
    }
    return st;
  }
};

// Standard bias-corrected Adam update over all parameter tensors. Gradients
// are aligned with params by index; an empty gradient means zero.
template <class S>
void adam_step(std::vector<typename Model<S>::Param>& params,
               const std::vector<std::vector<S>>& grads, OptimizerState& state,
               double lr_t) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DataError("adam_step: parameter/gradient count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i];
    if (g.empty()) continue;
    if (g.size() != p.size())
      throw DataError("adam_step: gradient shape mismatch for '" +
                      params[i].name + "'");
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = static_cast<S>(static_cast<double>(p[j]) -
                            lr_t * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// Random scale / crop / flip; labels move with nearest-neighbor sampling so
// no new label values can appear.
SegScene augment_scene(const SegScene& scene, bool do_scale, bool do_crop,
                       bool do_flip, Rng& rng);

template <class S>
Tensor<S> scenes_to_tensor(const std::vector<const SegScene*>& batch) {
  const int b = static_cast<int>(batch.size());
  const int h = batch[0]->height, w = batch[0]->width;
  std::vector<S> data(static_cast<size_t>(b) * h * w * 3);
  size_t o = 0;
  for (const SegScene* s : batch)
    for (uint8_t v : s->rgb) data[o++] = static_cast<S>(v) / S(255);
  return Tensor<S>({b, h, w, 3}, std::move(data));
}

// Mean IoU of the semantic head over known-class pixels of a split.
template <class S>
double eval_sem_miou(const Model<S>& model, const SegSplit& split) {
  const int k = model.config().num_classes;
  ConfusionAccumulator conf(k);
  for (const auto& scene : split.scenes) {
    std::vector<const SegScene*> one = {&scene};
    auto fwd = model.forward(nullptr, scenes_to_tensor<S>(one));
    const std::vector<int> pred = argmax_lastdim(fwd.sem);
    for (size_t p = 0; p < scene.labels.size(); ++p)
      if (is_known_label(scene.labels[p], k))
        conf.add(scene.labels[p] - 1, pred[p]);
  }
  std::vector<int> classes(k);
  for (int c = 0; c < k; ++c) classes[c] = c;
  return miou(conf, classes);
}

// Joint training of both decoder heads with per-epoch statistics snapshots.
// The feature and contrastive losses are inactive during epoch 1 (no
// snapshot exists yet). On a non-finite loss the parameters and statistics
// roll back to the last completed epoch and nan_abort is set.
template <class S>
TrainResult train(Model<S>& model, const SegSplit& train_split,
                  const TrainConfig& cfg,
                  const std::function<void(int, const TrainResult&)>& on_epoch =
                      {}) {
  const int k = model.config().num_classes;
  const long hw = static_cast<long>(train_split.height) * train_split.width;
  const int n = static_cast<int>(train_split.scenes.size());
  if (n == 0) throw DataError("train: empty training split");
  for (const auto& s : train_split.scenes)
    for (uint8_t lab : s.labels)
      if (is_unknown_label(lab, k))
        throw DataError("train: training split contains unknown class ids");

  const ClassWeightTable wtable = class_weights(label_histogram(train_split, k));

  TrainResult res;
  res.sem_stats = ClassStats(k);
  res.cont_stats = ClassStats(k);
  OptimizerState opt = OptimizerState::for_model(model);

  const long steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  auto params_backup = model.params();
  ClassStats sem_backup = res.sem_stats;
  ClassStats cont_backup = res.cont_stats;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  const double w2_active = cfg.weights.w2;
  const double w3_active = cfg.use_cont ? cfg.weights.w3 : 0.0;
  const double w4_active = cfg.use_cont ? cfg.weights.w4 : 0.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (res.sem_stats.epoch() != epoch)
      throw NumericError("train: statistics epoch tag out of sync");
    Rng erng(hash_combine(cfg.seed, static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[erng.uniform_int(0, i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    long batches = 0;
    bool aborted = false;

    for (int start = 0; start < n; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, n - start);
      std::vector<SegScene> augmented;
      augmented.reserve(bsz);
      std::vector<const SegScene*> batch;
      std::vector<uint8_t> labels;
      labels.reserve(bsz * hw);
      for (int i = 0; i < bsz; ++i) {
        augmented.push_back(augment_scene(train_split.scenes[order[start + i]],
                                          cfg.aug_scale, cfg.aug_crop,
                                          cfg.aug_flip, erng));
        batch.push_back(&augmented.back());
      }
      for (const auto& s : augmented)
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());

      Tape<S> tape;
      auto fwd = model.forward(&tape, scenes_to_tensor<S>(batch));

      Tensor<S> ce = semantic_ce(fwd.sem, labels, wtable);
      Tensor<S> feat = (epoch >= 2 && w2_active > 0)
                           ? feature_loss(fwd.sem, labels, res.sem_stats)
                           : Tensor<S>::scalar(S(0));
      Tensor<S> total = sdec_loss(ce, feat, cfg.weights);

      double cont_val = 0, obj_val = 0;
      if (w3_active > 0 && epoch >= 2) {
        Tensor<S> cont_rows = reshape(fwd.cont, {static_cast<int>(bsz * hw), k});
        Tensor<S> cont_sum = Tensor<S>::scalar(S(0));
        for (int b = 0; b < bsz; ++b) {
          auto means = image_class_means(cont_rows, labels, b * hw,
                                         (b + 1) * hw, k);
          cont_sum = add(cont_sum,
                         contrastive_loss(means, res.cont_stats,
                                          cfg.weights.tau));
        }
        cont_val = static_cast<double>(cont_sum.item());
        total = add(total, mul_scalar(cont_sum, static_cast<S>(w3_active)));
      }
      if (w4_active > 0) {
        Tensor<S> obj = objectosphere_loss(fwd.cont, labels, cfg.weights.xi, k);
        obj_val = static_cast<double>(obj.item());
        total = add(total, mul_scalar(obj, static_cast<S>(w4_active)));
      }

      const double total_val = static_cast<double>(total.item());
      if (!std::isfinite(total_val)) {
        model.params() = params_backup;
        res.sem_stats = sem_backup;
        res.cont_stats = cont_backup;
        res.nan_abort = true;
        aborted = true;
        break;
      }

      tape.backward(total);

      // class statistics from the current forward pass, before the update
      std::vector<uint8_t> preds(labels.size());
      const std::vector<int> amax = argmax_lastdim(fwd.sem);
      for (size_t p = 0; p < preds.size(); ++p)
        preds[p] = static_cast<uint8_t>(amax[p] + 1);
      res.sem_stats.update(fwd.sem, labels, preds);
      res.cont_stats.update(fwd.cont, labels, preds);

      std::vector<std::vector<S>> grads(model.params().size());
      for (const auto& [idx, leaf] : fwd.leaves)
        if (tape.has_grad(leaf.node())) grads[idx] = leaf.grad();

      rec.lr_last = lr_at(step, total_steps, cfg.lr);
      adam_step<S>(model.params(), grads, opt, rec.lr_last);
      ++step;

      rec.ce += static_cast<double>(ce.item());
      rec.feat += static_cast<double>(feat.item());
      rec.cont += cont_val;
      rec.obj += obj_val;
      rec.total += total_val;
      ++batches;
    }

    if (aborted) break;
    if (batches > 0) {
      rec.ce /= batches;
      rec.feat /= batches;
      rec.cont /= batches;
      rec.obj /= batches;
      rec.total /= batches;
    }
    res.history.push_back(rec);
    res.sem_stats.snapshot_epoch();
    res.cont_stats.snapshot_epoch();
    res.completed_epochs = epoch;
    params_backup = model.params();
    sem_backup = res.sem_stats;
    cont_backup = res.cont_stats;
    if (on_epoch) on_epoch(epoch, res);
  }
  return res;
}

}  // namespace owss
