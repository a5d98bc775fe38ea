#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "owss/stats.hpp"

namespace owss {

// Inference-side feature map, H x W rows of K-dim activation vectors.
struct FeatMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<double> values;  // row-major, pixel-major, K contiguous

  const double* at(int y, int x) const {
    return values.data() + (static_cast<long>(y) * width + x) * dim;
  }
  long pixels() const { return static_cast<long>(height) * width; }
};

// Per-class diagonal Gaussians frozen from a ClassStats snapshot.
struct GaussianBank {
  struct Entry {
    std::vector<double> mean;
    std::vector<double> var;  // floored, strictly positive
  };

  int dim = 0;
  std::map<int, Entry> classes;  // key: class index 0..K-1

  bool has(int cls) const { return classes.count(cls) != 0; }
  bool empty() const { return classes.empty(); }

  // Classes without a snapshot carry no Gaussian; they are excluded here and
  // reported by the caller.
  static GaussianBank from_stats(const ClassStats& stats,
                                 double var_floor = 1e-12);
};

// Squared exponential kernel score exp(-1/2 (f-mu)^T Sigma^-1 (f-mu)).
double gaussian_score(const double* f, const GaussianBank& bank, int cls);

// 1 - max_k s_k(f); in [0, 1).
double sem_unknown_score(const double* f, const GaussianBank& bank);

// max(0, 1 - |f|^2 / xi); 1 at the origin, 0 past the hypersphere radius.
double cont_unknown_score(const double* f_d, int dim, double xi);

struct UnknownScores {
  int height = 0;
  int width = 0;
  std::vector<double> s_sem;
  std::vector<double> s_cont;
  std::vector<double> s_fused;
  std::vector<uint8_t> unknown_mask;  // s_fused > delta
};

// Pixel-wise mean of the two score maps, thresholded at delta.
UnknownScores fuse(const std::vector<double>& s_sem,
                   const std::vector<double>& s_cont, int height, int width,
                   double delta);

enum class StrategyId { Th, MA, Dmu, Gs };

StrategyId parse_strategy(const std::string& name);
std::string strategy_name(StrategyId id);

// Per-pixel unknown-ness in [0,1] from the semantic decoder features:
//   Th : count of softmax activations above t_th, two or more meaning unknown
//   MA : 1 - max softmax activation
//   Dmu: min distance to a class mean, mapped through the unit-variance kernel
//   Gs : sem_unknown_score over the Gaussian bank
std::vector<double> strategy_score(StrategyId strategy, const FeatMap& sem_feats,
                                   const GaussianBank* bank, double t_th);

// Growing set of unknown-class mean activation vectors. Joining an existing
// class requires kernel similarity exp(-1/2 d^2) >= eta to its nearest MAV,
// so larger eta splits finer; MAVs update by running mean.
class DiscoveryState {
 public:
  DiscoveryState(int dim, double eta);

  // Returns the 1-based discovered class id for f, creating one if needed.
  int discover(const double* f);

  int num_classes() const { return static_cast<int>(mavs_.size()); }
  double eta() const { return eta_; }
  double join_distance() const { return join_dist_; }
  const std::vector<double>& mav(int id) const { return mavs_.at(id - 1); }
  uint64_t count(int id) const { return counts_.at(id - 1); }

 private:
  int dim_;
  double eta_;
  double join_dist_;
  std::vector<std::vector<double>> mavs_;
  std::vector<uint64_t> counts_;
};

// Most similar known class: argmax_k s_k(f), ties to the lowest class index.
int similarity(const double* f, const GaussianBank& bank);

struct HypersphereDiag {
  // Fractions absent (not zero) when the corresponding pixel set is empty.
  std::optional<double> frac_known_in_tube;
  std::optional<double> frac_unknown_below;
};

// Known-pixel norms inside (1-zeta, 1+zeta); unknown-pixel norms below rho.
// labels hold raw ids: 1..K known, K+1..254 unknown, 255 void (ignored).
HypersphereDiag hypersphere_diagnostics(const FeatMap& cont_feats,
                                        const std::vector<uint8_t>& labels,
                                        int num_known, double zeta, double rho);

}  // namespace owss
