#include "owss/openworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace owss {

GaussianBank GaussianBank::from_stats(const ClassStats& stats, double var_floor) {
  GaussianBank bank;
  bank.dim = stats.num_classes();
  for (int c = 0; c < stats.num_classes(); ++c) {
    if (!stats.has_snapshot(c)) continue;
    const auto& s = stats.snapshot(c);
    Entry e;
    e.mean = s.mean;
    e.var = s.var;
    for (double& v : e.var) v = std::max(v, var_floor);
    bank.classes.emplace(c, std::move(e));
  }
  return bank;
}

double gaussian_score(const double* f, const GaussianBank& bank, int cls) {
  auto it = bank.classes.find(cls);
  if (it == bank.classes.end())
    throw std::invalid_argument("gaussian_score: no Gaussian for class " +
                                std::to_string(cls));
  const auto& e = it->second;
  double md2 = 0.0;
  for (int j = 0; j < bank.dim; ++j) {
    const double d = f[j] - e.mean[j];
    md2 += d * d / e.var[j];
  }
  return std::exp(-0.5 * md2);
}

double sem_unknown_score(const double* f, const GaussianBank& bank) {
  if (bank.empty())
    throw std::invalid_argument("sem_unknown_score: empty Gaussian bank");
  double best = 0.0;
  for (const auto& [cls, entry] : bank.classes) {
    (void)entry;
    best = std::max(best, gaussian_score(f, bank, cls));
  }
  return 1.0 - best;
}

double cont_unknown_score(const double* f_d, int dim, double xi) {
  if (xi <= 0) throw std::invalid_argument("cont_unknown_score: xi must be > 0");
  double n2 = 0.0;
  for (int j = 0; j < dim; ++j) n2 += f_d[j] * f_d[j];
  return std::max(0.0, 1.0 - n2 / xi);
}

UnknownScores fuse(const std::vector<double>& s_sem,
                   const std::vector<double>& s_cont, int height, int width,
                   double delta) {
  const size_t n = static_cast<size_t>(height) * width;
  if (s_sem.size() != n || s_cont.size() != n)
    throw std::invalid_argument("fuse: map size mismatch");
  for (size_t i = 0; i < n; ++i)
    if (s_sem[i] < 0.0 || s_sem[i] > 1.0 || s_cont[i] < 0.0 || s_cont[i] > 1.0)
      throw std::invalid_argument("fuse: scores must lie in [0, 1]");
  UnknownScores out;
  out.height = height;
  out.width = width;
  out.s_sem = s_sem;
  out.s_cont = s_cont;
  out.s_fused.resize(n);
  out.unknown_mask.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.s_fused[i] = 0.5 * (s_sem[i] + s_cont[i]);
    out.unknown_mask[i] = out.s_fused[i] > delta ? 1 : 0;
  }
  return out;
}

StrategyId parse_strategy(const std::string& name) {
  if (name == "Th") return StrategyId::Th;
  if (name == "MA") return StrategyId::MA;
  if (name == "Dmu") return StrategyId::Dmu;
  if (name == "Gs") return StrategyId::Gs;
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected Th|MA|Dmu|Gs)");
}

std::string strategy_name(StrategyId id) {
  switch (id) {
    case StrategyId::Th: return "Th";
    case StrategyId::MA: return "MA";
    case StrategyId::Dmu: return "Dmu";
    case StrategyId::Gs: return "Gs";
  }
  return "?";
}

namespace {

void softmax_row(const double* f, int k, std::vector<double>& out) {
  out.resize(k);
  double m = f[0];
  for (int j = 1; j < k; ++j) m = std::max(m, f[j]);
  double z = 0.0;
  for (int j = 0; j < k; ++j) {
    out[j] = std::exp(f[j] - m);
    z += out[j];
  }
  for (int j = 0; j < k; ++j) out[j] /= z;
}

}  // namespace

std::vector<double> strategy_score(StrategyId strategy, const FeatMap& sem_feats,
                                   const GaussianBank* bank, double t_th) {
  const long n = sem_feats.pixels();
  const int k = sem_feats.dim;
  std::vector<double> out(static_cast<size_t>(n));
  if ((strategy == StrategyId::Dmu || strategy == StrategyId::Gs) &&
      (bank == nullptr || bank->empty()))
    throw std::invalid_argument("strategy " +
                                strategy_name(strategy) +
                                " requires class statistics");
  std::vector<double> sm;
  for (long p = 0; p < n; ++p) {
    const double* f = sem_feats.values.data() + p * k;
    switch (strategy) {
      case StrategyId::Th: {
        softmax_row(f, k, sm);
        int above = 0;
        for (int j = 0; j < k; ++j) above += sm[j] > t_th;
        out[p] = std::min(above, 2) / 2.0;
        break;
      }
      case StrategyId::MA: {
        softmax_row(f, k, sm);
        out[p] = 1.0 - *std::max_element(sm.begin(), sm.end());
        break;
      }
      case StrategyId::Dmu: {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [cls, e] : bank->classes) {
          double d2 = 0.0;
          for (int j = 0; j < k; ++j) {
            const double d = f[j] - e.mean[j];
            d2 += d * d;
          }
          best = std::min(best, d2);
        }
        out[p] = 1.0 - std::exp(-0.5 * best);
        break;
      }
      case StrategyId::Gs:
        out[p] = sem_unknown_score(f, *bank);
        break;
    }
  }
  return out;
}

DiscoveryState::DiscoveryState(int dim, double eta) : dim_(dim), eta_(eta) {
  if (dim < 1) throw std::invalid_argument("DiscoveryState: bad dimension");
  if (eta <= 0.0 || eta >= 1.0)
    throw std::invalid_argument("DiscoveryState: eta must lie in (0, 1)");
  join_dist_ = std::sqrt(-2.0 * std::log(eta));
}

int DiscoveryState::discover(const double* f) {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (size_t g = 0; g < mavs_.size(); ++g) {
    double d2 = 0.0;
    const auto& m = mavs_[g];
    for (int j = 0; j < dim_; ++j) {
      const double d = f[j] - m[j];
      d2 += d * d;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(g);
    }
  }
  if (best >= 0 && std::sqrt(best_d2) <= join_dist_) {
    auto& m = mavs_[best];
    const double n = static_cast<double>(++counts_[best]);
    for (int j = 0; j < dim_; ++j) m[j] += (f[j] - m[j]) / n;
    return best + 1;
  }
  mavs_.emplace_back(f, f + dim_);
  counts_.push_back(1);
  return static_cast<int>(mavs_.size());
}

int similarity(const double* f, const GaussianBank& bank) {
  if (bank.empty()) throw std::invalid_argument("similarity: empty Gaussian bank");
  int best_cls = -1;
  double best = -1.0;
  for (const auto& [cls, entry] : bank.classes) {
    (void)entry;
    const double s = gaussian_score(f, bank, cls);
    if (s > best) {  // strict: ties keep the lowest class index
      best = s;
      best_cls = cls;
    }
  }
  return best_cls;
}

HypersphereDiag hypersphere_diagnostics(const FeatMap& cont_feats,
                                        const std::vector<uint8_t>& labels,
                                        int num_known, double zeta, double rho) {
  if (static_cast<long>(labels.size()) != cont_feats.pixels())
    throw std::invalid_argument("hypersphere_diagnostics: label count mismatch");
  long known = 0, known_in = 0, unknown = 0, unknown_below = 0;
  for (long p = 0; p < cont_feats.pixels(); ++p) {
    const int lab = labels[p];
    if (lab == 255) continue;
    const double* f = cont_feats.values.data() + p * cont_feats.dim;
    double n2 = 0.0;
    for (int j = 0; j < cont_feats.dim; ++j) n2 += f[j] * f[j];
    const double norm = std::sqrt(n2);
    if (lab >= 1 && lab <= num_known) {
      ++known;
      if (norm > 1.0 - zeta && norm < 1.0 + zeta) ++known_in;
    } else {
      ++unknown;
      if (norm < rho) ++unknown_below;
    }
  }
  HypersphereDiag out;
  if (known > 0)
    out.frac_known_in_tube = static_cast<double>(known_in) / known;
  if (unknown > 0)
    out.frac_unknown_below = static_cast<double>(unknown_below) / unknown;
  return out;
}

}  // namespace owss
