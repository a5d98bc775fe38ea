#include "owss/stats.hpp"

#include <stdexcept>

namespace owss {

ClassStats::ClassStats(int num_classes) : k_(num_classes) {
  if (num_classes < 1)
    throw std::invalid_argument("ClassStats: need at least one class");
  count_.assign(k_, 0);
  mean_.assign(k_, std::vector<double>(k_, 0.0));
  m2_.assign(k_, std::vector<double>(k_, 0.0));
  snap_.assign(k_, Snapshot{});
}

std::vector<double> ClassStats::running_var(int cls) const {
  const auto& m2 = m2_.at(cls);
  const uint64_t n = count_.at(cls);
  std::vector<double> out(m2.size(), 0.0);
  if (n == 0) return out;
  for (size_t j = 0; j < m2.size(); ++j) out[j] = m2[j] / static_cast<double>(n);
  return out;
}

void ClassStats::add(int cls, const double* feat) {
  auto& mean = mean_.at(cls);
  auto& m2 = m2_[cls];
  const double n = static_cast<double>(++count_[cls]);
  for (int j = 0; j < k_; ++j) {
    const double delta = feat[j] - mean[j];
    mean[j] += delta / n;
    m2[j] += delta * (feat[j] - mean[j]);
  }
}

void ClassStats::snapshot_epoch() {
  for (int c = 0; c < k_; ++c) {
    if (count_[c] > 0) {
      Snapshot s;
      s.present = true;
      s.count = count_[c];
      s.mean = mean_[c];
      s.var = running_var(c);
      snap_[c] = std::move(s);
    }
    count_[c] = 0;
    std::fill(mean_[c].begin(), mean_[c].end(), 0.0);
    std::fill(m2_[c].begin(), m2_[c].end(), 0.0);
  }
  ++epoch_;
}

bool ClassStats::any_snapshot() const {
  for (const auto& s : snap_)
    if (s.present) return true;
  return false;
}

ClassStats ClassStats::merge(const ClassStats& a, const ClassStats& b) {
  if (a.k_ != b.k_)
    throw std::invalid_argument("ClassStats::merge: class count mismatch");
  if (a.epoch_ != b.epoch_)
    throw std::invalid_argument("ClassStats::merge: epoch mismatch");
  ClassStats out = a;
  for (int c = 0; c < a.k_; ++c) {
    const uint64_t na = a.count_[c], nb = b.count_[c];
    if (nb == 0) continue;
    if (na == 0) {
      out.count_[c] = nb;
      out.mean_[c] = b.mean_[c];
      out.m2_[c] = b.m2_[c];
      continue;
    }
    const double da = static_cast<double>(na), db = static_cast<double>(nb);
    const double dn = da + db;
    out.count_[c] = na + nb;
    for (int j = 0; j < a.k_; ++j) {
      const double delta = b.mean_[c][j] - a.mean_[c][j];
      out.mean_[c][j] = a.mean_[c][j] + delta * db / dn;
      out.m2_[c][j] = a.m2_[c][j] + b.m2_[c][j] + delta * delta * da * db / dn;
    }
  }
  return out;
}

}  // namespace owss
