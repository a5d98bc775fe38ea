#include "owss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace owss {

namespace {

struct SweepState {
  std::vector<size_t> order;  // indices sorted by score descending
  long total_pos = 0;
  long total_neg = 0;
};

SweepState prepare_sweep(const BinaryEval& eval) {
  if (eval.scores.size() != eval.labels.size())
    throw std::invalid_argument("BinaryEval: length mismatch");
  if (eval.size() == 0) throw std::invalid_argument("BinaryEval: empty");
  for (double s : eval.scores)
    if (!std::isfinite(s))
      throw std::invalid_argument("BinaryEval: non-finite score");
  SweepState st;
  st.order.resize(eval.size());
  std::iota(st.order.begin(), st.order.end(), size_t{0});
  std::stable_sort(st.order.begin(), st.order.end(),
                   [&](size_t a, size_t b) {
                     return eval.scores[a] > eval.scores[b];
                   });
  for (uint8_t l : eval.labels)
    l ? ++st.total_pos : ++st.total_neg;
  if (st.total_pos == 0 || st.total_neg == 0)
    throw std::invalid_argument(
        "BinaryEval: degenerate ground truth (single class)");
  return st;
}

}  // namespace

double aupr(const BinaryEval& eval) {
  const SweepState st = prepare_sweep(eval);
  double ap = 0.0;
  double prev_recall = 0.0;
  long tp = 0, fp = 0;
  size_t i = 0;
  const size_t n = st.order.size();
  while (i < n) {
    const double threshold = eval.scores[st.order[i]];
    // consume the whole tie group
    while (i < n && eval.scores[st.order[i]] == threshold) {
      eval.labels[st.order[i]] ? ++tp : ++fp;
      ++i;
    }
    const double recall = static_cast<double>(tp) / st.total_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double fpr_at_95tpr(const BinaryEval& eval) {
  const SweepState st = prepare_sweep(eval);
  long tp = 0, fp = 0;
  size_t i = 0;
  const size_t n = st.order.size();
  while (i < n) {
    const double threshold = eval.scores[st.order[i]];
    while (i < n && eval.scores[st.order[i]] == threshold) {
      eval.labels[st.order[i]] ? ++tp : ++fp;
      ++i;
    }
    if (static_cast<double>(tp) / st.total_pos >= 0.95)
      return static_cast<double>(fp) / st.total_neg;
  }
  return 1.0;  // TPR reaches 0.95 only when all samples are taken
}

ConfusionAccumulator::ConfusionAccumulator(int num_classes) : k_(num_classes) {
  if (num_classes < 1)
    throw std::invalid_argument("ConfusionAccumulator: need >= 1 class");
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

void ConfusionAccumulator::add(int gt, int pred) {
  if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_)
    throw std::invalid_argument("ConfusionAccumulator: class out of range");
  ++counts_[gt * k_ + pred];
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.k_ != k_)
    throw std::invalid_argument("ConfusionAccumulator: merge size mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

long ConfusionAccumulator::total() const {
  long t = 0;
  for (long c : counts_) t += c;
  return t;
}

long ConfusionAccumulator::true_positives(int cls) const {
  return counts_.at(cls * k_ + cls);
}

long ConfusionAccumulator::false_positives(int cls) const {
  long fp = 0;
  for (int g = 0; g < k_; ++g)
    if (g != cls) fp += counts_[g * k_ + cls];
  return fp;
}

long ConfusionAccumulator::false_negatives(int cls) const {
  long fn = 0;
  for (int p = 0; p < k_; ++p)
    if (p != cls) fn += counts_[cls * k_ + p];
  return fn;
}

double miou(const ConfusionAccumulator& conf, const std::vector<int>& classes) {
  if (classes.empty()) throw std::invalid_argument("miou: empty class set");
  double acc = 0.0;
  int used = 0;
  for (int c : classes) {
    const long tp = conf.true_positives(c);
    const long uni = tp + conf.false_positives(c) + conf.false_negatives(c);
    if (uni == 0) continue;
    acc += static_cast<double>(tp) / uni;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("miou: no class with nonzero union");
  return acc / used;
}

DiscoveryMatch match_discovered(const std::vector<int>& discovered,
                                const std::vector<int>& gt_unknown) {
  if (discovered.size() != gt_unknown.size())
    throw std::invalid_argument("match_discovered: length mismatch");
  std::set<int> gt_ids, disc_ids;
  for (int g : gt_unknown)
    if (g != 0) gt_ids.insert(g);
  for (int d : discovered)
    if (d != 0) disc_ids.insert(d);

  DiscoveryMatch out;
  out.num_discovered = static_cast<int>(disc_ids.size());
  for (int g : gt_ids) {
    int best_id = 0;
    double best_iou = -1.0;
    for (int d : disc_ids) {
      long inter = 0, uni = 0;
      for (size_t p = 0; p < discovered.size(); ++p) {
        const bool in_g = gt_unknown[p] == g;
        const bool in_d = discovered[p] == d;
        inter += in_g && in_d;
        uni += in_g || in_d;
      }
      const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
      if (iou > best_iou) {  // strict: ties keep the lower discovered id
        best_iou = iou;
        best_id = d;
      }
    }
    out.best[g] = {best_id, best_iou < 0 ? 0.0 : best_iou};
  }
  return out;
}

}  // namespace owss
