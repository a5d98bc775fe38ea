#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "owss/errors.hpp"
#include "owss/rng.hpp"
#include "owss/tensor.hpp"

namespace owss {

struct ModelConfig {
  int num_classes = 4;  // K: channel count of both decoder outputs
  int input_channels = 3;
  int base_width = 16;
  int depth = 2;  // number of stride-2 encoder stages
  uint64_t seed = 7;
};

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.num_classes == b.num_classes &&
         a.input_channels == b.input_channels && a.base_width == b.base_width &&
         a.depth == b.depth && a.seed == b.seed;
}

// Small encoder with two structurally identical, unshared decoder heads.
// Encoder: depth stride-2 3x3 conv + ReLU stages. Each head mirrors it with
// nearest-neighbor upsampling, 3x3 convs, and per-stage skip additions, then
// projects to K channels with a 1x1 conv. Output resolution equals input
// resolution; the semantic head emits pre-softmax logits, the contrastive
// head unconstrained features.
template <class S>
class Model {
 public:
  struct Param {
    std::string name;
    Shape shape;
    std::vector<S> data;
  };

  struct Forward {
    Tensor<S> sem;
    Tensor<S> cont;
    // (param index, bound leaf) pairs, populated when a tape is supplied
    std::vector<std::pair<int, Tensor<S>>> leaves;
  };

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg.num_classes < 2) throw UsageError("model: K must be >= 2");
    if (cfg.depth < 1) throw UsageError("model: depth must be >= 1");
    if (cfg.base_width < 1) throw UsageError("model: base_width must be >= 1");
    build_params();
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  long num_params() const {
    long n = 0;
    for (const auto& p : params_) n += static_cast<long>(p.data.size());
    return n;
  }

  Param* find_param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Runs both heads. With a tape, every parameter is bound as a
  // requires-grad leaf (reported through Forward::leaves); without one the
  // pass is a pure constant computation. override_name/override_tensor swap
  // in an external tensor for a single named parameter (gradient checking).
  Forward forward(Tape<S>* tape, const Tensor<S>& images,
                  const std::string* override_name = nullptr,
                  const Tensor<S>* override_tensor = nullptr) const {
    if (images.shape().size() != 4 || images.shape()[3] != cfg_.input_channels)
      throw UsageError("model: images must be [B,H,W," +
                       std::to_string(cfg_.input_channels) + "]");
    const int h = images.shape()[1], w = images.shape()[2];
    const int div = 1 << cfg_.depth;
    if (h % div != 0 || w % div != 0)
      throw UsageError("model: spatial size " + std::to_string(h) + "x" +
                       std::to_string(w) + " not divisible by " +
                       std::to_string(div));

    Forward out;
    auto bind = [&](int idx) -> Tensor<S> {
      const Param& p = params_[idx];
      if (override_name && p.name == *override_name) return *override_tensor;
      if (!tape) return Tensor<S>(p.shape, p.data);
      Tensor<S> leaf = tape->leaf(p.shape, p.data, true);
      out.leaves.emplace_back(idx, leaf);
      return leaf;
    };

    // encoder
    std::vector<Tensor<S>> stages;
    Tensor<S> x = images;
    int pi = 0;
    for (int j = 0; j < cfg_.depth; ++j) {
      Tensor<S> wt = bind(pi++);
      Tensor<S> bt = bind(pi++);
      x = relu(add_rowvec(conv2d(x, wt, 2, 1), bt));
      stages.push_back(x);
    }

    auto decode = [&]() -> Tensor<S> {
      Tensor<S> hND = stages.back();
      for (int j = cfg_.depth - 1; j >= 1; --j) {
        Tensor<S> wt = bind(pi++);
        Tensor<S> bt = bind(pi++);
        hND = add_rowvec(conv2d(upsample2x(hND), wt, 1, 1), bt);
        hND = relu(add(hND, stages[j - 1]));
      }
      Tensor<S> w0 = bind(pi++);
      Tensor<S> b0 = bind(pi++);
      hND = relu(add_rowvec(conv2d(upsample2x(hND), w0, 1, 1), b0));
      Tensor<S> w1 = bind(pi++);
      Tensor<S> b1 = bind(pi++);
      return add_rowvec(conv2d(hND, w1, 1, 0), b1);
    };

    out.sem = decode();
    out.cont = decode();
    return out;
  }

 private:
  int stage_channels(int j) const {  // channels after encoder stage j
    return cfg_.base_width << j;
  }

  void add_conv(Rng& rng, const std::string& name, int kh, int kw, int cin,
                int cout) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(kh * kw * cin));
    Param w;
    w.name = name + ".w";
    w.shape = {kh, kw, cin, cout};
    w.data.resize(static_cast<size_t>(kh) * kw * cin * cout);
    for (auto& v : w.data)
      v = static_cast<S>(rng.uniform(-bound, bound));
    params_.push_back(std::move(w));
    Param b;
    b.name = name + ".b";
    b.shape = {cout};
    b.data.assign(static_cast<size_t>(cout), S(0));
    params_.push_back(std::move(b));
  }

  void build_params() {
    Rng rng(cfg_.seed);
    for (int j = 0; j < cfg_.depth; ++j)
      add_conv(rng, "enc" + std::to_string(j), 3, 3,
               j == 0 ? cfg_.input_channels : stage_channels(j - 1),
               stage_channels(j));
    for (const char* head : {"sem", "cont"}) {
      for (int j = cfg_.depth - 1; j >= 1; --j)
        add_conv(rng, std::string(head) + ".dec" + std::to_string(j), 3, 3,
                 stage_channels(j), stage_channels(j - 1));
      add_conv(rng, std::string(head) + ".refine", 3, 3, cfg_.base_width,
               cfg_.base_width);
      add_conv(rng, std::string(head) + ".out", 1, 1, cfg_.base_width,
               cfg_.num_classes);
    }
  }

  ModelConfig cfg_;
  std::vector<Param> params_;
};

}  // namespace owss
