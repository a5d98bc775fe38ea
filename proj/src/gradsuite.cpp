#include "owss/gradsuite.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "owss/gradcheck.hpp"
#include "owss/losses.hpp"
#include "owss/net.hpp"
#include "owss/rng.hpp"

namespace owss {

namespace {

constexpr double kTol = 1e-5;
constexpr double kEps = 1e-4;
constexpr double kKinkMargin = 1e-3;

std::vector<uint8_t> random_labels(Rng& rng, int n, int num_known,
                                   double void_prob) {
  std::vector<uint8_t> labels(n);
  while (true) {
    int known = 0;
    for (auto& l : labels) {
      if (rng.bernoulli(void_prob)) {
        l = kVoidLabel;
      } else {
        l = static_cast<uint8_t>(rng.uniform_int(1, num_known));
        ++known;
      }
    }
    if (known > 0) return labels;
  }
}

ClassStats random_snapshot(Rng& rng, int k, double present_prob) {
  ClassStats stats(k);
  bool any = false;
  for (int c = 0; c < k; ++c) {
    if (!rng.bernoulli(present_prob) && (any || c + 1 < k)) continue;
    ClassStats::Snapshot s;
    s.present = true;
    s.count = 16;
    s.mean.resize(k);
    s.var.resize(k);
    for (int j = 0; j < k; ++j) {
      s.mean[j] = rng.gaussian();
      s.var[j] = rng.uniform(0.25, 2.0);
    }
    stats.set_snapshot(c, std::move(s));
    any = true;
  }
  return stats;
}

Tensor<double> random_tensor(Rng& rng, Shape shape, double scale) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = scale * rng.gaussian();
  return Tensor<double>(std::move(shape), std::move(data));
}

double case_semantic_ce(Rng& rng) {
  const int k = rng.uniform_int(3, 5);
  const auto labels = random_labels(rng, 16, k, 0.2);
  std::vector<long> counts(k, 0);
  for (uint8_t l : labels)
    if (l != kVoidLabel) ++counts[l - 1];
  for (auto& c : counts)
    if (c == 0) c = 1;  // keep every weight finite
  const ClassWeightTable table = class_weights(counts);
  const Tensor<double> x = random_tensor(rng, {1, 4, 4, k}, 1.5);
  return grad_check(
      [&](Tape<double>&, const Tensor<double>& v) {
        return semantic_ce(v, labels, table);
      },
      x, kEps);
}

double case_feature_loss(Rng& rng) {
  const int k = 4;
  const auto labels = random_labels(rng, 16, k, 0.25);
  const ClassStats stats = random_snapshot(rng, k, 0.8);
  const Tensor<double> x = random_tensor(rng, {1, 4, 4, k}, 1.0);
  return grad_check(
      [&](Tape<double>&, const Tensor<double>& v) {
        return feature_loss(v, labels, stats);
      },
      x, kEps);
}

double case_contrastive(Rng& rng) {
  const int k = 4;
  const auto labels = random_labels(rng, 16, k, 0.25);
  const ClassStats stats = random_snapshot(rng, k, 1.0);
  const Tensor<double> x = random_tensor(rng, {16, k}, 1.0);
  return grad_check(
      [&](Tape<double>&, const Tensor<double>& v) {
        auto means = image_class_means(v, labels, 0, 16, k);
        return contrastive_loss(means, stats, 0.1);
      },
      x, kEps);
}

double case_objectosphere(Rng& rng) {
  const int k = 4;
  const double xi = 1.0;
  const auto labels = random_labels(rng, 16, k, 0.4);
  // keep every squared norm away from the hinge
  Tensor<double> x({1, 4, 4, k}, std::vector<double>(16 * k));
  while (true) {
    std::vector<double> data(16 * k);
    for (auto& v : data) v = 0.6 * rng.gaussian();
    bool ok = true;
    for (int p = 0; p < 16 && ok; ++p) {
      double n2 = 0;
      for (int j = 0; j < k; ++j) n2 += data[p * k + j] * data[p * k + j];
      ok = std::fabs(xi - n2) > kKinkMargin;
    }
    if (ok) {
      x = Tensor<double>({1, 4, 4, k}, std::move(data));
      break;
    }
  }
  return grad_check(
      [&](Tape<double>&, const Tensor<double>& v) {
        return objectosphere_loss(v, labels, xi, k);
      },
      x, kEps);
}

// Full dual-decoder loss through the real model, finite-differenced against
// every parameter tensor in turn.
double case_end_to_end(Rng& rng) {
  ModelConfig mc;
  mc.num_classes = 3;
  mc.base_width = 3;
  mc.depth = 2;
  mc.input_channels = 3;

  const int h = 4, w = 4;
  LossWeights lw;
  ClassWeightTable table;
  table.omega = {1.0, 1.2, 0.8};

  for (int attempt = 0; attempt < 64; ++attempt) {
    mc.seed = rng.next_u64();
    Model<double> model(mc);
    // widen the init so activations are not uniformly tiny
    for (auto& p : model.params())
      for (auto& v : p.data) v = v * 2.0 + 0.02 * rng.gaussian();
    const Tensor<double> images = random_tensor(rng, {1, h, w, 3}, 0.8);
    const auto labels = random_labels(rng, h * w, mc.num_classes, 0.3);
    const ClassStats sem_stats = random_snapshot(rng, mc.num_classes, 1.0);
    const ClassStats cont_stats = random_snapshot(rng, mc.num_classes, 1.0);

    auto loss_fn = [&](const Model<double>& m, Tape<double>* tape,
                       const std::string* oname,
                       const Tensor<double>* otensor) {
      auto fwd = m.forward(tape, images, oname, otensor);
      Tensor<double> ce = semantic_ce(fwd.sem, labels, table);
      Tensor<double> feat = feature_loss(fwd.sem, labels, sem_stats);
      Tensor<double> total = sdec_loss(ce, feat, lw);
      Tensor<double> rows = reshape(fwd.cont, {h * w, mc.num_classes});
      auto means = image_class_means(rows, labels, 0, h * w, mc.num_classes);
      Tensor<double> cont = contrastive_loss(means, cont_stats, lw.tau);
      Tensor<double> obj =
          objectosphere_loss(fwd.cont, labels, lw.xi, mc.num_classes);
      return add(total, cdec_loss(cont, obj, lw));
    };

    // resample when any ReLU input or vector norm sits next to a kink
    double margin = std::numeric_limits<double>::infinity();
    kink_margin_probe() = &margin;
    loss_fn(model, nullptr, nullptr, nullptr);
    kink_margin_probe() = nullptr;
    if (margin < kKinkMargin) continue;

    double worst = 0;
    for (const auto& p : model.params()) {
      const Tensor<double> x(p.shape, p.data);
      const std::string name = p.name;
      const double err = grad_check(
          [&](Tape<double>&, const Tensor<double>& v) {
            return loss_fn(model, nullptr, &name, &v);
          },
          x, kEps);
      worst = std::max(worst, err);
    }
    return worst;
  }
  throw NumericError("gradient suite: could not sample a kink-free instance");
}

}  // namespace

GradSuiteResult run_gradient_suite(int instances, uint64_t seed, bool corrupt) {
  const bool saved = corrupt_relu_backward();
  corrupt_relu_backward() = corrupt;
  GradSuiteResult out;
  struct Entry {
    const char* name;
    double (*fn)(Rng&);
  };
  const Entry entries[] = {
      {"semantic_cross_entropy", case_semantic_ce},
      {"feature_loss", case_feature_loss},
      {"contrastive_loss", case_contrastive},
      {"objectosphere_loss", case_objectosphere},
      {"end_to_end_dual_decoder", case_end_to_end},
  };
  for (const auto& e : entries) {
    GradSuiteResult::Case c;
    c.name = e.name;
    c.tolerance = kTol;
    for (int i = 0; i < instances; ++i) {
      Rng rng(hash_combine(seed, hash_combine(uint64_t(&e - entries), i)));
      c.max_err = std::max(c.max_err, e.fn(rng));
    }
    c.pass = c.max_err < c.tolerance;
    out.cases.push_back(c);
  }
  out.pass = true;
  for (const auto& c : out.cases) out.pass = out.pass && c.pass;
  corrupt_relu_backward() = saved;
  return out;
}

std::string format_gradient_report(const GradSuiteResult& result) {
  std::ostringstream os;
  for (const auto& c : result.cases) {
    char line[160];
    std::snprintf(line, sizeof line, "%-26s max_rel_err=%.3e  tol=%.0e  %s\n",
                  c.name.c_str(), c.max_err, c.tolerance,
                  c.pass ? "ok" : "FAIL");
    os << line;
  }
  os << (result.pass ? "gradient suite: all cases ok"
                     : "gradient suite: FAILURES present")
     << "\n";
  return os.str();
}

}  // namespace owss
