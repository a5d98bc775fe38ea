#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace owss {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor: non-positive extent");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Flipped on for harness self-tests only: makes the ReLU backward rule wrong
// so a finite-difference sweep must report failure.
inline bool& corrupt_relu_backward() {
  static bool flag = false;
  return flag;
}

// When set, forward passes record the smallest distance to a gradient kink
// (ReLU inputs, L2 norms). Finite-difference sweeps use it to resample
// instances that sit too close to a kink.
inline double*& kink_margin_probe() {
  static double* ptr = nullptr;
  return ptr;
}

namespace detail {
template <class S>
inline void probe_kink(S v) {
  double* p = kink_margin_probe();
  if (p) *p = std::min(*p, std::fabs(static_cast<double>(v)));
}
}  // namespace detail

template <class S>
class Tape;

// Dense row-major tensor. Either a free constant (no tape) or a handle to a
// node on a Tape, in which case it participates in backward.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(std::move(data))) {
    if (shape_numel(shape_) != static_cast<long>(data_->size()))
      throw std::invalid_argument("tensor: shape/data size mismatch " +
                                  shape_str(shape_));
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor zeros(Shape shape) {
    long n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(n), S(0)));
  }

  static Tensor full(Shape shape, S v) {
    long n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<S>(static_cast<size_t>(n), v));
  }

  const Shape& shape() const { return shape_; }
  long size() const { return data_ ? static_cast<long>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  const std::vector<S>& data() const { return *data_; }
  const std::shared_ptr<std::vector<S>>& storage() const { return data_; }

  S item() const {
    if (size() != 1) throw std::logic_error("item(): tensor is not scalar");
    return (*data_)[0];
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape<S>* tape() const { return tape_; }
  int node() const { return node_; }
  bool requires_grad() const { return requires_grad_; }

  // Valid after Tape::backward; throws if no gradient reached this tensor.
  const std::vector<S>& grad() const;

 private:
  friend class Tape<S>;

  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;
};

// Records primitive ops in topological order; backward replays in reverse.
template <class S>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const std::vector<S>&)>;

  Tensor<S> leaf(Shape shape, std::vector<S> data, bool requires_grad) {
    return adopt(Tensor<S>(std::move(shape), std::move(data)), requires_grad);
  }

  // Registers an existing constant tensor as a tape leaf.
  Tensor<S> adopt(const Tensor<S>& t, bool requires_grad) {
    Tensor<S> out = t;
    out.tape_ = this;
    out.requires_grad_ = requires_grad;
    out.node_ = add_node(out.shape_, out.data_, {}, nullptr, "leaf");
    return out;
  }

  // Used by the primitive ops to append a computed node.
  Tensor<S> record(Tensor<S> value, std::vector<int> parents, BackFn back,
                   const char* op) {
    value.tape_ = this;
    value.node_ =
        add_node(value.shape_, value.data_, std::move(parents), std::move(back), op);
    return value;
  }

  void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.tape() == nullptr)
      throw std::logic_error("backward: loss is detached from any tape");
    if (loss.tape() != this)
      throw std::logic_error("backward: loss belongs to a different tape");
    if (loss.size() != 1)
      throw std::logic_error("backward: loss must be scalar, got " +
                             shape_str(loss.shape()));
    grads_.assign(nodes_.size(), {});
    buf(loss.node())[0] = S(1);
    for (int id = loss.node(); id >= 0; --id) {
      if (grads_[id].empty()) continue;
      const Node& n = nodes_[id];
      if (n.back) n.back(*this, grads_[id]);
    }
  }

  std::vector<S>& buf(int id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(nodes_[id].value->size(), S(0));
    return g;
  }

  const std::vector<S>& grad(int node_id) const {
    if (!has_grad(node_id))
      throw std::logic_error("grad: no gradient recorded for node " +
                             std::to_string(node_id));
    return grads_[node_id];
  }

  bool has_grad(int node_id) const {
    return node_id >= 0 && node_id < static_cast<int>(grads_.size()) &&
           !grads_[node_id].empty();
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::shared_ptr<std::vector<S>> value;
    std::vector<int> parents;
    BackFn back;
    const char* op;
  };

  int add_node(const Shape& shape, const std::shared_ptr<std::vector<S>>& value,
               std::vector<int> parents, BackFn back, const char* op) {
    nodes_.push_back(Node{shape, value, std::move(parents), std::move(back), op});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
};

template <class S>
const std::vector<S>& Tensor<S>::grad() const {
  if (!tape_) throw std::logic_error("grad(): tensor is not on a tape");
  return tape_->grad(node_);
}

namespace detail {

template <class S>
inline Tape<S>* joint_tape(const Tensor<S>& a) {
  return a.tape();
}

template <class S>
inline Tape<S>* joint_tape(const Tensor<S>& a, const Tensor<S>& b) {
  Tape<S>* ta = a.tape();
  Tape<S>* tb = b.tape();
  if (ta && tb && ta != tb)
    throw std::logic_error("op: operands recorded on different tapes");
  return ta ? ta : tb;
}

template <class S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (same shape; no broadcasting beyond the dedicated
// scalar-node and row-vector variants below)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tape<S>* tape = detail::joint_tape(a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  const int pa = a.node(), pb = b.node();
  std::vector<int> parents;
  if (pa >= 0 && a.tape() == tape) parents.push_back(pa);
  if (pb >= 0 && b.tape() == tape) parents.push_back(pb);
  const bool ga = a.on_tape(), gb = b.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, pb, ga, gb](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (gb) {
          auto& d = t.buf(pb);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
      },
      "add");
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tape<S>* tape = detail::joint_tape(a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  const int pa = a.node(), pb = b.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (b.on_tape()) parents.push_back(pb);
  const bool ga = a.on_tape(), gb = b.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, pb, ga, gb](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (gb) {
          auto& d = t.buf(pb);
          for (size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
      },
      "sub");
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tape<S>* tape = detail::joint_tape(a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  auto bv = b.storage();
  const int pa = a.node(), pb = b.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (b.on_tape()) parents.push_back(pb);
  const bool ga = a.on_tape(), gb = b.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, pb, ga, gb, av, bv](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*bv)[i];
        }
        if (gb) {
          auto& d = t.buf(pb);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*av)[i];
        }
      },
      "mul");
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "div");
  Tape<S>* tape = detail::joint_tape(a, b);
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] /= bd[i];
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  auto bv = b.storage();
  const int pa = a.node(), pb = b.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (b.on_tape()) parents.push_back(pb);
  const bool ga = a.on_tape(), gb = b.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, pb, ga, gb, av, bv](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] / (*bv)[i];
        }
        if (gb) {
          auto& d = t.buf(pb);
          for (size_t i = 0; i < g.size(); ++i) {
            const S bi = (*bv)[i];
            d[i] -= g[i] * (*av)[i] / (bi * bi);
          }
        }
      },
      "div");
}

// ---------------------------------------------------------------------------
// scalar (runtime constant) variants
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data());
  for (auto& v : out) v += c;
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      },
      "add_scalar");
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, c](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * c;
      },
      "mul_scalar");
}

// a * s and a / s where s is a single-element tensor (scalar broadcast).
template <class S>
Tensor<S> mul_snode(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.size() != 1) throw std::invalid_argument("mul_snode: s must be scalar");
  Tape<S>* tape = detail::joint_tape(a, s);
  const S sv = s.data()[0];
  std::vector<S> out(a.data());
  for (auto& v : out) v *= sv;
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  const int pa = a.node(), ps = s.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (s.on_tape()) parents.push_back(ps);
  const bool ga = a.on_tape(), gs = s.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, ps, ga, gs, sv, av](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * sv;
        }
        if (gs) {
          S acc = 0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * (*av)[i];
          t.buf(ps)[0] += acc;
        }
      },
      "mul_snode");
}

template <class S>
Tensor<S> div_snode(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.size() != 1) throw std::invalid_argument("div_snode: s must be scalar");
  Tape<S>* tape = detail::joint_tape(a, s);
  const S sv = s.data()[0];
  std::vector<S> out(a.data());
  for (auto& v : out) v /= sv;
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  const int pa = a.node(), ps = s.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (s.on_tape()) parents.push_back(ps);
  const bool ga = a.on_tape(), gs = s.on_tape();
  return tape->record(
      std::move(r), std::move(parents),
      [pa, ps, ga, gs, sv, av](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] / sv;
        }
        if (gs) {
          S acc = 0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * (*av)[i];
          t.buf(ps)[0] -= acc / (sv * sv);
        }
      },
      "div_snode");
}

// ---------------------------------------------------------------------------
// row-vector (last-axis) broadcast: a[..., K] op v[K]
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
inline long rowvec_check(const Tensor<S>& a, const Tensor<S>& v, const char* op) {
  if (a.shape().empty() || v.shape().size() != 1 ||
      a.shape().back() != v.shape()[0])
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(v.shape()));
  return a.size() / v.size();
}
}  // namespace detail

template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  const long rows = detail::rowvec_check(a, v, "add_rowvec");
  const long k = v.size();
  Tape<S>* tape = detail::joint_tape(a, v);
  std::vector<S> out(a.data());
  const auto& vd = v.data();
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < k; ++j) out[r * k + j] += vd[j];
  Tensor<S> res(a.shape(), std::move(out));
  if (!tape) return res;
  const int pa = a.node(), pv = v.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (v.on_tape()) parents.push_back(pv);
  const bool ga = a.on_tape(), gv = v.on_tape();
  return tape->record(
      std::move(res), std::move(parents),
      [pa, pv, ga, gv, rows, k](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (gv) {
          auto& d = t.buf(pv);
          for (long r = 0; r < rows; ++r)
            for (long j = 0; j < k; ++j) d[j] += g[r * k + j];
        }
      },
      "add_rowvec");
}

template <class S>
Tensor<S> mul_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  const long rows = detail::rowvec_check(a, v, "mul_rowvec");
  const long k = v.size();
  Tape<S>* tape = detail::joint_tape(a, v);
  std::vector<S> out(a.data());
  const auto& vd = v.data();
  for (long r = 0; r < rows; ++r)
    for (long j = 0; j < k; ++j) out[r * k + j] *= vd[j];
  Tensor<S> res(a.shape(), std::move(out));
  if (!tape) return res;
  auto av = a.storage();
  auto vv = v.storage();
  const int pa = a.node(), pv = v.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (v.on_tape()) parents.push_back(pv);
  const bool ga = a.on_tape(), gv = v.on_tape();
  return tape->record(
      std::move(res), std::move(parents),
      [pa, pv, ga, gv, rows, k, av, vv](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {
          auto& d = t.buf(pa);
          for (long r = 0; r < rows; ++r)
            for (long j = 0; j < k; ++j) d[r * k + j] += g[r * k + j] * (*vv)[j];
        }
        if (gv) {
          auto& d = t.buf(pv);
          for (long r = 0; r < rows; ++r)
            for (long j = 0; j < k; ++j) d[j] += g[r * k + j] * (*av)[r * k + j];
        }
      },
      "mul_rowvec");
}

// ---------------------------------------------------------------------------
// unary ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  Tape<S>* tape = a.tape();
  if (kink_margin_probe())
    for (S v : a.data()) detail::probe_kink(v);
  std::vector<S> out(a.data());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, av](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        // subgradient at exactly 0 is 0
        const S scale = corrupt_relu_backward() ? S(1.001) : S(1);
        for (size_t i = 0; i < g.size(); ++i)
          if ((*av)[i] > S(0)) d[i] += g[i] * scale;
      },
      "relu");
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data());
  for (auto& v : out) v = std::log(v);
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto av = a.storage();
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, av](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] / (*av)[i];
      },
      "log");
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data());
  for (auto& v : out) v = std::exp(v);
  Tensor<S> r(a.shape(), std::move(out));
  if (!tape) return r;
  auto rv = r.storage();
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, rv](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*rv)[i];
      },
      "exp");
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  Tape<S>* tape = a.tape();
  S acc = 0;
  for (S v : a.data()) acc += v;
  Tensor<S> r = Tensor<S>::scalar(acc);
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (auto& v : d) v += g[0];
      },
      "sum_all");
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  Tape<S>* tape = a.tape();
  S acc = 0;
  for (S v : a.data()) acc += v;
  const S inv = S(1) / static_cast<S>(a.size());
  Tensor<S> r = Tensor<S>::scalar(acc * inv);
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, inv](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (auto& v : d) v += g[0] * inv;
      },
      "mean_all");
}

// [..., K] -> [...]; sums the last axis.
template <class S>
Tensor<S> sum_lastdim(const Tensor<S>& a) {
  if (a.shape().size() < 2)
    throw std::invalid_argument("sum_lastdim: rank must be >= 2");
  const long k = a.shape().back();
  const long rows = a.size() / k;
  Tape<S>* tape = a.tape();
  std::vector<S> out(static_cast<size_t>(rows), S(0));
  const auto& ad = a.data();
  for (long r = 0; r < rows; ++r) {
    S acc = 0;
    for (long j = 0; j < k; ++j) acc += ad[r * k + j];
    out[r] = acc;
  }
  Shape oshape(a.shape().begin(), a.shape().end() - 1);
  Tensor<S> res(std::move(oshape), std::move(out));
  if (!tape) return res;
  const int pa = a.node();
  return tape->record(
      std::move(res), {pa},
      [pa, rows, k](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (long r = 0; r < rows; ++r)
          for (long j = 0; j < k; ++j) d[r * k + j] += g[r];
      },
      "sum_lastdim");
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tape<S>* tape = a.tape();
  Tensor<S> r(std::move(new_shape), a.data());
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      },
      "reshape");
}

// Contiguous 1-D slice of a flattened tensor.
template <class S>
Tensor<S> slice(const Tensor<S>& a, long begin, long len) {
  if (begin < 0 || len <= 0 || begin + len > a.size())
    throw std::invalid_argument("slice: range out of bounds");
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data().begin() + begin, a.data().begin() + begin + len);
  Tensor<S> r({static_cast<int>(len)}, std::move(out));
  if (!tape) return r;
  const int pa = a.node();
  return tape->record(
      std::move(r), {pa},
      [pa, begin](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i) d[begin + i] += g[i];
      },
      "slice");
}

// Gathers rows of a [N, K] tensor: out[i, :] = a[rows[i], :].
template <class S>
Tensor<S> select_rows(const Tensor<S>& a, std::vector<int> rows) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("select_rows: expects a rank-2 tensor");
  const long n = a.shape()[0], k = a.shape()[1];
  for (int r : rows)
    if (r < 0 || r >= n) throw std::invalid_argument("select_rows: index out of range");
  if (rows.empty()) throw std::invalid_argument("select_rows: empty selection");
  Tape<S>* tape = a.tape();
  std::vector<S> out(rows.size() * k);
  const auto& ad = a.data();
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(ad.begin() + static_cast<long>(rows[i]) * k, k,
                out.begin() + static_cast<long>(i) * k);
  Tensor<S> res({static_cast<int>(rows.size()), static_cast<int>(k)},
                std::move(out));
  if (!tape) return res;
  const int pa = a.node();
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  return tape->record(
      std::move(res), {pa},
      [pa, idx, k](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < idx->size(); ++i) {
          S* dst = d.data() + static_cast<long>((*idx)[i]) * k;
          const S* src = g.data() + static_cast<long>(i) * k;
          for (long j = 0; j < k; ++j) dst[j] += src[j];
        }
      },
      "select_rows");
}

// out[i] = a[i, idx[i]] for a [N, K] tensor.
template <class S>
Tensor<S> gather_lastdim(const Tensor<S>& a, std::vector<int> idx) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("gather_lastdim: expects a rank-2 tensor");
  const long n = a.shape()[0], k = a.shape()[1];
  if (static_cast<long>(idx.size()) != n)
    throw std::invalid_argument("gather_lastdim: index count mismatch");
  for (int j : idx)
    if (j < 0 || j >= k) throw std::invalid_argument("gather_lastdim: index out of range");
  Tape<S>* tape = a.tape();
  std::vector<S> out(static_cast<size_t>(n));
  const auto& ad = a.data();
  for (long i = 0; i < n; ++i) out[i] = ad[i * k + idx[i]];
  Tensor<S> res({static_cast<int>(n)}, std::move(out));
  if (!tape) return res;
  const int pa = a.node();
  auto iv = std::make_shared<std::vector<int>>(std::move(idx));
  return tape->record(
      std::move(res), {pa},
      [pa, iv, k](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (size_t i = 0; i < g.size(); ++i)
          d[static_cast<long>(i) * k + (*iv)[i]] += g[i];
      },
      "gather_lastdim");
}

// ---------------------------------------------------------------------------
// softmax / norms
// ---------------------------------------------------------------------------

// Softmax along the last axis, max-subtracted.
template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& a) {
  if (a.shape().empty())
    throw std::invalid_argument("softmax_lastdim: rank must be >= 1");
  const long k = a.shape().back();
  const long rows = a.size() / k;
  Tape<S>* tape = a.tape();
  std::vector<S> out(a.data().size());
  const auto& ad = a.data();
  for (long r = 0; r < rows; ++r) {
    const S* x = ad.data() + r * k;
    S* y = out.data() + r * k;
    S m = x[0];
    for (long j = 1; j < k; ++j) m = std::max(m, x[j]);
    S z = 0;
    for (long j = 0; j < k; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (long j = 0; j < k; ++j) y[j] /= z;
  }
  Tensor<S> res(a.shape(), std::move(out));
  if (!tape) return res;
  auto yv = res.storage();
  const int pa = a.node();
  return tape->record(
      std::move(res), {pa},
      [pa, yv, rows, k](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (long r = 0; r < rows; ++r) {
          const S* y = yv->data() + r * k;
          const S* gr = g.data() + r * k;
          S dot = 0;
          for (long j = 0; j < k; ++j) dot += gr[j] * y[j];
          for (long j = 0; j < k; ++j) d[r * k + j] += y[j] * (gr[j] - dot);
        }
      },
      "softmax");
}

// Euclidean norm along the last axis: [..., K] -> [...].
template <class S>
Tensor<S> l2norm_lastdim(const Tensor<S>& a) {
  if (a.shape().size() < 2)
    throw std::invalid_argument("l2norm_lastdim: rank must be >= 2");
  const long k = a.shape().back();
  const long rows = a.size() / k;
  Tape<S>* tape = a.tape();
  std::vector<S> out(static_cast<size_t>(rows));
  const auto& ad = a.data();
  for (long r = 0; r < rows; ++r) {
    S acc = 0;
    for (long j = 0; j < k; ++j) {
      const S v = ad[r * k + j];
      acc += v * v;
    }
    out[r] = std::sqrt(acc);
    if (kink_margin_probe()) detail::probe_kink(out[r]);
  }
  Shape oshape(a.shape().begin(), a.shape().end() - 1);
  Tensor<S> res(std::move(oshape), std::move(out));
  if (!tape) return res;
  auto av = a.storage();
  auto nv = res.storage();
  const int pa = a.node();
  return tape->record(
      std::move(res), {pa},
      [pa, av, nv, rows, k](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (long r = 0; r < rows; ++r) {
          const S n = std::max((*nv)[r], S(1e-30));
          const S s = g[r] / n;
          for (long j = 0; j < k; ++j) d[r * k + j] += s * (*av)[r * k + j];
        }
      },
      "l2norm");
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const long m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  Tape<S>* tape = detail::joint_tape(a, b);
  std::vector<S> out(static_cast<size_t>(m * p), S(0));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (long i = 0; i < m; ++i)
    for (long kk = 0; kk < n; ++kk) {
      const S av = ad[i * n + kk];
      const S* brow = bd.data() + kk * p;
      S* orow = out.data() + i * p;
      for (long j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  Tensor<S> res({static_cast<int>(m), static_cast<int>(p)}, std::move(out));
  if (!tape) return res;
  auto av = a.storage();
  auto bv = b.storage();
  const int pa = a.node(), pb = b.node();
  std::vector<int> parents;
  if (a.on_tape()) parents.push_back(pa);
  if (b.on_tape()) parents.push_back(pb);
  const bool ga = a.on_tape(), gb = b.on_tape();
  return tape->record(
      std::move(res), std::move(parents),
      [pa, pb, ga, gb, av, bv, m, n, p](Tape<S>& t, const std::vector<S>& g) {
        if (ga) {  // dA = G * B^T
          auto& d = t.buf(pa);
          for (long i = 0; i < m; ++i)
            for (long kk = 0; kk < n; ++kk) {
              S acc = 0;
              const S* grow = g.data() + i * p;
              const S* brow = bv->data() + kk * p;
              for (long j = 0; j < p; ++j) acc += grow[j] * brow[j];
              d[i * n + kk] += acc;
            }
        }
        if (gb) {  // dB = A^T * G
          auto& d = t.buf(pb);
          for (long kk = 0; kk < n; ++kk)
            for (long i = 0; i < m; ++i) {
              const S av_ = (*av)[i * n + kk];
              const S* grow = g.data() + i * p;
              S* drow = d.data() + kk * p;
              for (long j = 0; j < p; ++j) drow[j] += av_ * grow[j];
            }
        }
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// spatial ops (NHWC)
// ---------------------------------------------------------------------------

// Nearest-neighbor 2x upsample of a [B, H, W, C] tensor.
template <class S>
Tensor<S> upsample2x(const Tensor<S>& a) {
  if (a.shape().size() != 4)
    throw std::invalid_argument("upsample2x: expects [B,H,W,C]");
  const long b = a.shape()[0], h = a.shape()[1], w = a.shape()[2],
             c = a.shape()[3];
  Tape<S>* tape = a.tape();
  std::vector<S> out(static_cast<size_t>(b * 4 * h * w * c));
  const auto& ad = a.data();
  const long ho = 2 * h, wo = 2 * w;
  for (long bi = 0; bi < b; ++bi)
    for (long y = 0; y < ho; ++y)
      for (long x = 0; x < wo; ++x) {
        const S* src = ad.data() + ((bi * h + y / 2) * w + x / 2) * c;
        S* dst = out.data() + ((bi * ho + y) * wo + x) * c;
        std::copy_n(src, c, dst);
      }
  Tensor<S> res({static_cast<int>(b), static_cast<int>(ho),
                 static_cast<int>(wo), static_cast<int>(c)},
                std::move(out));
  if (!tape) return res;
  const int pa = a.node();
  return tape->record(
      std::move(res), {pa},
      [pa, b, h, w, c, ho, wo](Tape<S>& t, const std::vector<S>& g) {
        auto& d = t.buf(pa);
        for (long bi = 0; bi < b; ++bi)
          for (long y = 0; y < ho; ++y)
            for (long x = 0; x < wo; ++x) {
              S* dst = d.data() + ((bi * h + y / 2) * w + x / 2) * c;
              const S* src = g.data() + ((bi * ho + y) * wo + x) * c;
              for (long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
      },
      "upsample2x");
}

// 2-D convolution, NHWC input [B,H,W,Cin], HWIO weight [kh,kw,Cin,Cout].
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw std::invalid_argument("conv2d: expects [B,H,W,Cin] and [kh,kw,Cin,Cout]");
  if (x.shape()[3] != w.shape()[2])
    throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: bad stride");
  const long b = x.shape()[0], h = x.shape()[1], wd = x.shape()[2],
             ci = x.shape()[3];
  const long kh = w.shape()[0], kw = w.shape()[1], co = w.shape()[3];
  const long ho = (h + 2 * pad - kh) / stride + 1;
  const long wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  Tape<S>* tape = detail::joint_tape(x, w);
  std::vector<S> out(static_cast<size_t>(b * ho * wo * co), S(0));
  const auto& xd = x.data();
  const auto& wdta = w.data();
  for (long bi = 0; bi < b; ++bi)
    for (long oy = 0; oy < ho; ++oy)
      for (long ox = 0; ox < wo; ++ox) {
        S* orow = out.data() + ((bi * ho + oy) * wo + ox) * co;
        for (long ky = 0; ky < kh; ++ky) {
          const long iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (long kx = 0; kx < kw; ++kx) {
            const long ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            const S* xrow = xd.data() + ((bi * h + iy) * wd + ix) * ci;
            const S* wrow = wdta.data() + (ky * kw + kx) * ci * co;
            for (long c = 0; c < ci; ++c) {
              const S xv = xrow[c];
              const S* wc = wrow + c * co;
              for (long o = 0; o < co; ++o) orow[o] += xv * wc[o];
            }
          }
        }
      }
  Tensor<S> res({static_cast<int>(b), static_cast<int>(ho), static_cast<int>(wo),
                 static_cast<int>(co)},
                std::move(out));
  if (!tape) return res;
  auto xv = x.storage();
  auto wv = w.storage();
  const int px = x.node(), pw = w.node();
  std::vector<int> parents;
  if (x.on_tape()) parents.push_back(px);
  if (w.on_tape()) parents.push_back(pw);
  const bool gx = x.on_tape(), gw = w.on_tape();
  const long st = stride, pd = pad;
  return tape->record(
      std::move(res), std::move(parents),
      [=](Tape<S>& t, const std::vector<S>& g) {
        std::vector<S>* dx = gx ? &t.buf(px) : nullptr;
        std::vector<S>* dw = gw ? &t.buf(pw) : nullptr;
        for (long bi = 0; bi < b; ++bi)
          for (long oy = 0; oy < ho; ++oy)
            for (long ox = 0; ox < wo; ++ox) {
              const S* grow = g.data() + ((bi * ho + oy) * wo + ox) * co;
              for (long ky = 0; ky < kh; ++ky) {
                const long iy = oy * st + ky - pd;
                if (iy < 0 || iy >= h) continue;
                for (long kx = 0; kx < kw; ++kx) {
                  const long ix = ox * st + kx - pd;
                  if (ix < 0 || ix >= wd) continue;
                  const long xoff = ((bi * h + iy) * wd + ix) * ci;
                  const long woff = (ky * kw + kx) * ci * co;
                  for (long c = 0; c < ci; ++c) {
                    const S* wc = wv->data() + woff + c * co;
                    S gacc = 0;
                    if (dw) {
                      const S xval = (*xv)[xoff + c];
                      S* dwc = dw->data() + woff + c * co;
                      if (dx) {
                        for (long o = 0; o < co; ++o) {
                          const S gv = grow[o];
                          gacc += gv * wc[o];
                          dwc[o] += gv * xval;
                        }
                        (*dx)[xoff + c] += gacc;
                      } else {
                        for (long o = 0; o < co; ++o) dwc[o] += grow[o] * xval;
                      }
                    } else if (dx) {
                      for (long o = 0; o < co; ++o) gacc += grow[o] * wc[o];
                      (*dx)[xoff + c] += gacc;
                    }
                  }
                }
              }
            }
      },
      "conv2d");
}

// ---------------------------------------------------------------------------
// non-differentiable utilities
// ---------------------------------------------------------------------------

// Per-row argmax over the last axis; ties resolve to the lowest index.
template <class S>
std::vector<int> argmax_lastdim(const Tensor<S>& a) {
  const long k = a.shape().back();
  const long rows = a.size() / k;
  std::vector<int> out(static_cast<size_t>(rows));
  const auto& ad = a.data();
  for (long r = 0; r < rows; ++r) {
    int best = 0;
    S bv = ad[r * k];
    for (long j = 1; j < k; ++j)
      if (ad[r * k + j] > bv) {
        bv = ad[r * k + j];
        best = static_cast<int>(j);
      }
    out[r] = best;
  }
  return out;
}

}  // namespace owss
