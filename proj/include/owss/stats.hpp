#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "owss/tensor.hpp"

namespace owss {

// Per-class running mean/variance of activation vectors, restricted to
// true-positive pixels, with an end-of-epoch snapshot used by the losses and
// by Gaussian inference. Accumulation is always in double, regardless of the
// network element type.
class ClassStats {
 public:
  struct Snapshot {
    bool present = false;
    uint64_t count = 0;
    std::vector<double> mean;  // mu_k, length K
    std::vector<double> var;   // sigma_k^2, length K (population convention)
  };

  ClassStats() = default;
  explicit ClassStats(int num_classes);

  int num_classes() const { return k_; }
  int epoch() const { return epoch_; }
  uint64_t running_count(int cls) const { return count_.at(cls); }
  std::vector<double> running_mean(int cls) const { return mean_.at(cls); }
  std::vector<double> running_var(int cls) const;

  // Welford update from one activation vector of a true-positive pixel.
  void add(int cls, const double* feat);

  // Batch update over NHWC feature maps: only pixels whose ground-truth and
  // predicted class agree contribute; void and mismatched pixels are skipped.
  // labels/predictions hold raw ids (1..K known, anything else ignored).
  template <class S>
  void update(const Tensor<S>& feats, const std::vector<uint8_t>& labels,
              const std::vector<uint8_t>& predictions) {
    if (feats.shape().empty() || feats.shape().back() != k_)
      throw std::invalid_argument("ClassStats::update: feature dim mismatch");
    const long n = feats.size() / k_;
    if (static_cast<long>(labels.size()) != n ||
        static_cast<long>(predictions.size()) != n)
      throw std::invalid_argument("ClassStats::update: label count mismatch");
    const auto& fd = feats.data();
    std::vector<double> row(static_cast<size_t>(k_));
    for (long p = 0; p < n; ++p) {
      const int lab = labels[p];
      if (lab < 1 || lab > k_ || predictions[p] != lab) continue;
      for (int j = 0; j < k_; ++j) row[j] = static_cast<double>(fd[p * k_ + j]);
      add(lab - 1, row.data());
    }
  }

  // Freezes running statistics into the snapshot, resets the accumulators and
  // advances the epoch. Classes with no true positives this epoch keep their
  // previous snapshot entry.
  void snapshot_epoch();

  const Snapshot& snapshot(int cls) const { return snap_.at(cls); }
  bool has_snapshot(int cls) const { return snap_.at(cls).present; }
  bool any_snapshot() const;
  void set_snapshot(int cls, Snapshot s) { snap_.at(cls) = std::move(s); }
  void set_epoch(int e) { epoch_ = e; }

  // Chan-style parallel merge of running accumulators; both sides must have
  // the same class count and epoch.
  static ClassStats merge(const ClassStats& a, const ClassStats& b);

 private:
  int k_ = 0;
  int epoch_ = 1;
  std::vector<uint64_t> count_;
  std::vector<std::vector<double>> mean_;
  std::vector<std::vector<double>> m2_;
  std::vector<Snapshot> snap_;
};

}  // namespace owss
