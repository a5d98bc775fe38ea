#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace owss {

// Flattened pixel scores (higher = more unknown) with binary ground truth
// (1 = unknown). Void pixels must never be added.
struct BinaryEval {
  std::vector<double> scores;
  std::vector<uint8_t> labels;

  void add(double score, bool positive) {
    scores.push_back(score);
    labels.push_back(positive ? 1 : 0);
  }
  size_t size() const { return scores.size(); }
};

// Average precision by step integration over distinct thresholds, descending,
// with tied scores grouped: AP = sum_i (R_i - R_{i-1}) * P_i.
double aupr(const BinaryEval& eval);

// False positive rate at the first descending-threshold operating point where
// TPR >= 0.95. No interpolation.
double fpr_at_95tpr(const BinaryEval& eval);

// K x K confusion counts plus merge, for mIoU over known classes.
class ConfusionAccumulator {
 public:
  ConfusionAccumulator() = default;
  explicit ConfusionAccumulator(int num_classes);

  void add(int gt, int pred);
  void merge(const ConfusionAccumulator& other);

  int num_classes() const { return k_; }
  long count(int gt, int pred) const { return counts_.at(gt * k_ + pred); }
  long total() const;

  long true_positives(int cls) const;
  long false_positives(int cls) const;
  long false_negatives(int cls) const;

 private:
  int k_ = 0;
  std::vector<long> counts_;
};

// Mean IoU over the requested classes; classes with zero union are excluded.
double miou(const ConfusionAccumulator& conf, const std::vector<int>& classes);

struct DiscoveryMatch {
  // ground-truth unknown class id -> (best discovered id, IoU)
  std::map<int, std::pair<int, double>> best;
  int num_discovered = 0;  // N_U
};

// For each ground-truth unknown class, the discovered class maximizing IoU
// (ties to the lower discovered id). `discovered` holds per-pixel discovered
// ids (0 = pixel not assigned to any discovered class); `gt_unknown` holds
// per-pixel ground-truth unknown ids (0 = pixel not unknown). Both are aligned
// over the same pixel region.
DiscoveryMatch match_discovered(const std::vector<int>& discovered,
                                const std::vector<int>& gt_unknown);

}  // namespace owss
