#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <vector>

#include "owss/data.hpp"
#include "owss/errors.hpp"
#include "owss/stats.hpp"
#include "owss/tensor.hpp"

namespace owss {

struct LossWeights {
  double w1 = 0.9;  // semantic cross-entropy
  double w2 = 0.1;  // feature loss
  double w3 = 0.5;  // contrastive loss
  double w4 = 0.5;  // objectosphere loss
  double tau = 0.1;
  double xi = 1.0;
};

struct ClassWeightTable {
  std::vector<double> omega;  // index 0 -> class id 1
};

// Inverse-frequency weights: omega_k = total / (K * count_k); absent classes
// get weight 0 with a warning.
inline ClassWeightTable class_weights(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) total += c;
  if (total == 0) throw DataError("class_weights: all-zero label histogram");
  const double k = static_cast<double>(counts.size());
  ClassWeightTable t;
  t.omega.resize(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      std::cerr << "warning: class " << i + 1
                << " absent from the training set; weight set to 0\n";
      t.omega[i] = 0.0;
    } else {
      t.omega[i] = static_cast<double>(total) / (k * counts[i]);
    }
  }
  return t;
}

namespace detail {

template <class S>
Tensor<S> as_rows(const Tensor<S>& feats, int num_classes) {
  if (feats.shape().empty() || feats.shape().back() != num_classes)
    throw DataError("loss: feature dimension mismatch");
  const int n = static_cast<int>(feats.size() / num_classes);
  return reshape(feats, {n, num_classes});
}

inline void check_labels(const std::vector<uint8_t>& labels, long rows,
                         int num_known) {
  if (static_cast<long>(labels.size()) != rows)
    throw DataError("loss: label count mismatch");
  for (uint8_t lab : labels)
    if (lab != kVoidLabel && lab > num_known)
      throw DataError("loss: label id " + std::to_string(lab) +
                      " outside {1.." + std::to_string(num_known) + "} u {void}");
}

}  // namespace detail

// Weighted cross-entropy over non-void pixels:
//   L = -(1/|Omega|) sum_p omega_{Y_p} log softmax(f_p)[Y_p]
template <class S>
Tensor<S> semantic_ce(const Tensor<S>& sem_feats,
                      const std::vector<uint8_t>& labels,
                      const ClassWeightTable& weights) {
  const int k = static_cast<int>(weights.omega.size());
  Tensor<S> rows = detail::as_rows(sem_feats, k);
  detail::check_labels(labels, rows.shape()[0], k);

  std::vector<int> pixel_idx, class_idx;
  std::vector<S> w;
  for (size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == kVoidLabel) continue;
    pixel_idx.push_back(static_cast<int>(p));
    class_idx.push_back(labels[p] - 1);
    w.push_back(static_cast<S>(weights.omega[labels[p] - 1]));
  }
  if (pixel_idx.empty()) return Tensor<S>::scalar(S(0));

  Tensor<S> lsm = log(softmax_lastdim(select_rows(rows, pixel_idx)));
  Tensor<S> picked = gather_lastdim(lsm, class_idx);
  Tensor<S> weighted = mul(picked, Tensor<S>({static_cast<int>(w.size())}, w));
  return mul_scalar(sum_all(weighted), S(-1.0 / pixel_idx.size()));
}

// Standardized distance to the previous-epoch class means:
//   L = (1/|Omega|) sum_k sum_{p in Omega_k} || (f_p - mu_k) / max(sigma_k, eps) ||_2
// Classes without a snapshot entry are skipped; with no snapshot at all the
// loss is an exact zero signal.
template <class S>
Tensor<S> feature_loss(const Tensor<S>& sem_feats,
                       const std::vector<uint8_t>& labels,
                       const ClassStats& snapshot, double eps = 1e-6) {
  const int k = snapshot.num_classes();
  Tensor<S> rows = detail::as_rows(sem_feats, k);
  detail::check_labels(labels, rows.shape()[0], k);
  if (!snapshot.any_snapshot()) return Tensor<S>::scalar(S(0));

  std::vector<std::vector<int>> per_class(k);
  long known_total = 0;
  for (size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] == kVoidLabel) continue;
    per_class[labels[p] - 1].push_back(static_cast<int>(p));
    ++known_total;
  }
  if (known_total == 0) return Tensor<S>::scalar(S(0));

  Tensor<S> acc = Tensor<S>::scalar(S(0));
  for (int c = 0; c < k; ++c) {
    if (per_class[c].empty() || !snapshot.has_snapshot(c)) continue;
    const auto& snap = snapshot.snapshot(c);
    std::vector<S> neg_mu(k), inv_sigma(k);
    for (int j = 0; j < k; ++j) {
      neg_mu[j] = static_cast<S>(-snap.mean[j]);
      inv_sigma[j] =
          static_cast<S>(1.0 / std::max(std::sqrt(snap.var[j]), eps));
    }
    Tensor<S> d = add_rowvec(select_rows(rows, per_class[c]),
                             Tensor<S>({k}, neg_mu));
    Tensor<S> z = mul_rowvec(d, Tensor<S>({k}, inv_sigma));
    acc = add(acc, sum_all(l2norm_lastdim(z)));
  }
  return mul_scalar(acc, S(1.0 / known_total));
}

// w1 * ce + w2 * feat
template <class S>
Tensor<S> sdec_loss(const Tensor<S>& ce, const Tensor<S>& feat,
                    const LossWeights& w) {
  if (!std::isfinite(static_cast<double>(ce.item())) ||
      !std::isfinite(static_cast<double>(feat.item())))
    throw NumericError("sdec_loss: non-finite component");
  return add(mul_scalar(ce, static_cast<S>(w.w1)),
             mul_scalar(feat, static_cast<S>(w.w2)));
}

// w3 * cont + w4 * obj
template <class S>
Tensor<S> cdec_loss(const Tensor<S>& cont, const Tensor<S>& obj,
                    const LossWeights& w) {
  if (!std::isfinite(static_cast<double>(cont.item())) ||
      !std::isfinite(static_cast<double>(obj.item())))
    throw NumericError("cdec_loss: non-finite component");
  return add(mul_scalar(cont, static_cast<S>(w.w3)),
             mul_scalar(obj, static_cast<S>(w.w4)));
}

// Per-image mean contrastive feature of each class present in the pixel range
// [begin, end) of the flattened batch. Keys are 0-based class indices.
template <class S>
std::map<int, Tensor<S>> image_class_means(const Tensor<S>& cont_rows,
                                           const std::vector<uint8_t>& labels,
                                           long begin, long end,
                                           int num_known) {
  if (cont_rows.shape().size() != 2 || cont_rows.shape()[1] != num_known)
    throw DataError("image_class_means: expects [N, K] rows");
  std::vector<std::vector<int>> per_class(num_known);
  for (long p = begin; p < end; ++p) {
    const uint8_t lab = labels[p];
    if (lab == kVoidLabel || lab > num_known || lab == 0) continue;
    per_class[lab - 1].push_back(static_cast<int>(p));
  }
  std::map<int, Tensor<S>> out;
  for (int c = 0; c < num_known; ++c) {
    if (per_class[c].empty()) continue;
    const int m = static_cast<int>(per_class[c].size());
    Tensor<S> sel = select_rows(cont_rows, per_class[c]);
    Tensor<S> ones = Tensor<S>::full({1, m}, S(1));
    out.emplace(c, mul_scalar(matmul(ones, sel), S(1.0 / m)));
  }
  return out;
}

// InfoNCE-style loss against the normalized previous-epoch means:
//   L = -sum_{k present} log softmax(f_hat_k . mu_bar / tau)[k]
// Classes absent from the image are kept as negatives via their snapshot
// means; zero-norm features or means are skipped with a warning.
template <class S>
Tensor<S> contrastive_loss(const std::map<int, Tensor<S>>& means,
                           const ClassStats& snapshot, double tau) {
  if (tau <= 0) throw UsageError("contrastive_loss: tau must be > 0");
  if (!snapshot.any_snapshot()) return Tensor<S>::scalar(S(0));
  const int k = snapshot.num_classes();

  std::vector<int> cols;  // snapshot classes usable as negatives
  std::vector<std::vector<double>> normed;
  for (int c = 0; c < k; ++c) {
    if (!snapshot.has_snapshot(c)) continue;
    const auto& mu = snapshot.snapshot(c).mean;
    double n = 0;
    for (double v : mu) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) {
      std::cerr << "warning: contrastive_loss skips class " << c + 1
                << " with zero-norm snapshot mean\n";
      continue;
    }
    std::vector<double> u(mu);
    for (double& v : u) v /= n;
    cols.push_back(c);
    normed.push_back(std::move(u));
  }
  if (cols.empty()) return Tensor<S>::scalar(S(0));

  // K x C matrix of normalized snapshot means, one column per class
  const int ncols = static_cast<int>(cols.size());
  std::vector<S> mt(static_cast<size_t>(k) * ncols);
  for (int j = 0; j < ncols; ++j)
    for (int i = 0; i < k; ++i)
      mt[static_cast<size_t>(i) * ncols + j] = static_cast<S>(normed[j][i]);
  Tensor<S> mu_mat({k, ncols}, mt);

  Tensor<S> total = Tensor<S>::scalar(S(0));
  bool any = false;
  for (const auto& [cls, fbar] : means) {
    int pos = -1;
    for (int j = 0; j < ncols; ++j)
      if (cols[j] == cls) pos = j;
    if (pos < 0) continue;  // no snapshot for this class yet
    Tensor<S> n = l2norm_lastdim(fbar);
    if (n.data()[0] == S(0)) {
      std::cerr << "warning: contrastive_loss skips class " << cls + 1
                << " with zero-norm image mean\n";
      continue;
    }
    Tensor<S> fhat = div_snode(fbar, reshape(n, {1}));
    Tensor<S> logits = mul_scalar(matmul(fhat, mu_mat), static_cast<S>(1.0 / tau));
    Tensor<S> lsm = log(softmax_lastdim(logits));
    Tensor<S> picked = gather_lastdim(lsm, {pos});
    total = add(total, mul_scalar(sum_all(picked), S(-1)));
    any = true;
  }
  return any ? total : Tensor<S>::scalar(S(0));
}

// Hinge on the squared feature norm, mean over all pixels:
//   known:  max(xi - |f|^2, 0)      void/unknown:  |f|^2
template <class S>
Tensor<S> objectosphere_loss(const Tensor<S>& cont_feats,
                             const std::vector<uint8_t>& labels, double xi,
                             int num_known) {
  if (xi <= 0) throw UsageError("objectosphere_loss: xi must be > 0");
  Tensor<S> rows = detail::as_rows(cont_feats, num_known);
  const long n = rows.shape()[0];
  if (static_cast<long>(labels.size()) != n)
    throw DataError("objectosphere_loss: label count mismatch");

  std::vector<S> known_mask(n), other_mask(n);
  for (long p = 0; p < n; ++p) {
    const bool known = is_known_label(labels[p], num_known);
    known_mask[p] = known ? S(1) : S(0);
    other_mask[p] = known ? S(0) : S(1);
  }
  Tensor<S> ns = sum_lastdim(mul(rows, rows));
  Tensor<S> hinge = relu(add_scalar(mul_scalar(ns, S(-1)), static_cast<S>(xi)));
  Shape mshape = {static_cast<int>(n)};
  Tensor<S> term = add(mul(hinge, Tensor<S>(mshape, known_mask)),
                       mul(ns, Tensor<S>(mshape, other_mask)));
  return mean_all(term);
}

}  // namespace owss
