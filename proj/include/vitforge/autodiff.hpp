#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vitforge/tensor_ops.hpp"

namespace vitforge {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  bool requires_grad() const;
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse id
/// order is a valid topological order for the backward sweep.
///
/// A tape constructed with recording=false still evaluates every op but keeps
/// no backward closures; it serves the plain-tensor inference paths.
template <typename T>
class Tape {
 public:
  /// Receives the node's own forward value and dL/d(value).
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&, const Tensor<T>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  /// Value that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false); }

  /// Free leaf that receives a gradient (used for gradient checks).
  Var<T> input(Tensor<T> value) { return push(std::move(value), nullptr, recording_); }

  /// Named parameter leaf. The tensor is referenced, not copied, and must
  /// outlive the tape.
  Var<T> parameter(std::string name, const Tensor<T>& value, bool trainable) {
    Node n;
    n.external = &value;
    n.requires_grad = recording_ && trainable;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends the result of an op. The closure is kept only if some parent
  /// requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn fn) {
    bool needs = false;
    if (recording_)
      for (const Var<T>& p : parents) needs = needs || p.requires_grad();
    return push(std::move(value), needs ? std::move(fn) : nullptr, needs);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
    bool needs = false;
    if (recording_)
      for (const Var<T>& p : parents) needs = needs || p.requires_grad();
    return push(std::move(value), needs ? std::move(fn) : nullptr, needs);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adds g into the gradient slot of v (no-op if v needs no gradient).
  void accumulate_grad(const Var<T>& v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      accumulate(n.grad, g);
    }
  }

  void accumulate_grad(const Var<T>& v, Tensor<T>&& g) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = std::move(g);
    } else {
      accumulate(n.grad, g);
    }
  }

  /// Propagates d(loss)/d(node) to every recorded node. loss must hold a
  /// single element. May be called once per tape.
  void backward(const Var<T>& loss) {
    if (!recording_) throw UsageError("backward: tape was not recording");
    if (loss.valid() && &loss.tape() != this)
      throw UsageError("backward: loss belongs to a different tape");
    if (backward_done_) throw UsageError("backward: already called on this tape");
    if (value(loss.id()).size() != 1)
      throw ShapeError("backward: loss must be a single element, got " +
                       shape_str(value(loss.id()).shape()));
    backward_done_ = true;
    if (!requires_grad(loss.id())) return;
    nodes_[loss.id()].grad = Tensor<T>(value(loss.id()).shape(), T{1});
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      Tensor<T> g = std::move(n.grad);
      n.grad = Tensor<T>();
      auto fn = std::move(n.backward);
      n.backward = nullptr;
      fn(*this, value(id), g);
    }
  }

  /// Gradient of a leaf after backward; exact zero if it was never reached.
  Tensor<T> grad(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.grad.empty()) return n.grad;
    return Tensor<T>(value(v.id()).shape());
  }

  /// Gradients of every trainable parameter leaf, keyed by name. Frozen
  /// parameters get no entry.
  std::map<std::string, Tensor<T>, std::less<>> parameter_grads() const {
    if (!backward_done_) throw UsageError("parameter_grads: backward has not run");
    std::map<std::string, Tensor<T>, std::less<>> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.name.empty() || !n.requires_grad) continue;
      Tensor<T> g = n.grad.empty() ? Tensor<T>(value(id).shape()) : n.grad;
      auto [it, inserted] = out.emplace(n.name, g);
      if (!inserted) accumulate(it->second, g);
    }
    return out;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  Var<T> push(Tensor<T> value, BackwardFn fn, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.backward = std::move(fn);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool recording_;
  bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!tape_) throw UsageError("Var: uninitialized handle");
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_ && tape_->requires_grad(id_);
}

/// Differentiable counterparts of the tensor kernels.
namespace ad {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return a.tape().record(vitforge::matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           if (a.requires_grad())
                             tape.accumulate_grad(a, matmul_nt(g, b.value()));
                           if (b.requires_grad())
                             tape.accumulate_grad(b, matmul_tn(a.value(), g));
                         });
}

/// a·bᵀ.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  return a.tape().record(vitforge::matmul_nt(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           if (a.requires_grad())
                             tape.accumulate_grad(a, vitforge::matmul(g, b.value()));
                           if (b.requires_grad())
                             tape.accumulate_grad(b, matmul_tn(g, a.value()));
                         });
}

/// x·w + bias, bias broadcast over rows.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  Tensor<T> y = add_row_vector(vitforge::matmul(x.value(), w.value()), bias.value());
  return x.tape().record(
      std::move(y), {x, w, bias},
      [x, w, bias](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        if (x.requires_grad()) tape.accumulate_grad(x, matmul_nt(g, w.value()));
        if (w.requires_grad()) tape.accumulate_grad(w, matmul_tn(x.value(), g));
        if (bias.requires_grad())
          tape.accumulate_grad(bias, sum_rows(g).reshaped(bias.value().shape()));
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return a.tape().record(vitforge::add(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           tape.accumulate_grad(a, g);
                           tape.accumulate_grad(b, g);
                         });
}

template <typename T>
Var<T> add_row_vector(const Var<T>& m, const Var<T>& v) {
  return m.tape().record(
      vitforge::add_row_vector(m.value(), v.value()), {m, v},
      [m, v](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        tape.accumulate_grad(m, g);
        if (v.requires_grad())
          tape.accumulate_grad(v, sum_rows(g).reshaped(v.value().shape()));
      });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return a.tape().record(vitforge::scale(a.value(), s), {a},
                         [a, s](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           tape.accumulate_grad(a, vitforge::scale(g, s));
                         });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  return a.tape().record(vitforge::hadamard(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           if (a.requires_grad())
                             tape.accumulate_grad(a, vitforge::hadamard(g, b.value()));
                           if (b.requires_grad())
                             tape.accumulate_grad(b, vitforge::hadamard(g, a.value()));
                         });
}

/// Sum of all elements as a one-element tensor.
template <typename T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().data()) s += v;
  return a.tape().record(Tensor<T>({1}, std::vector<T>{s}), {a},
                         [a](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           tape.accumulate_grad(a, Tensor<T>(a.value().shape(), g[0]));
                         });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  return a.tape().record(vitforge::softmax_rows(a.value()), {a},
                         [a](Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& g) {
                           tape.accumulate_grad(a, softmax_rows_backward(y, g));
                         });
}

/// softmax_rows(q·kᵀ·scale)·v as one node.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, T scale) {
  auto probs = std::make_shared<Tensor<T>>();
  Tensor<T> out = scaled_dot_attention(q.value(), k.value(), v.value(), scale, probs.get());
  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, probs, scale](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        if (v.requires_grad()) tape.accumulate_grad(v, matmul_tn(*probs, g));
        if (!q.requires_grad() && !k.requires_grad()) return;
        Tensor<T> ds = vitforge::scale(softmax_rows_backward(*probs, matmul_nt(g, v.value())), scale);
        if (q.requires_grad()) tape.accumulate_grad(q, vitforge::matmul(ds, k.value()));
        if (k.requires_grad()) tape.accumulate_grad(k, matmul_tn(ds, q.value()));
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  LayerNormCache<T> cache;
  const bool needs = x.tape().recording() &&
                     (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor<T> y = vitforge::layer_norm(x.value(), gamma.value(), beta.value(), eps,
                                     needs ? &cache : nullptr);
  return x.tape().record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, cache = std::move(cache)](Tape<T>& tape, const Tensor<T>&,
                                                 const Tensor<T>& g) {
        auto grads = layer_norm_backward(cache, gamma.value(), g);
        tape.accumulate_grad(x, std::move(grads.dx));
        tape.accumulate_grad(gamma, grads.dgamma.reshaped(gamma.value().shape()));
        tape.accumulate_grad(beta, grads.dbeta.reshaped(beta.value().shape()));
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  return x.tape().record(vitforge::gelu(x.value()), {x},
                         [x](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           tape.accumulate_grad(x, gelu_backward(x.value(), g));
                         });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
  return a.tape().record(
      vitforge::slice_cols(a.value(), begin, end), {a},
      [a, begin](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T> full(a.value().shape());
        for (std::size_t i = 0; i < g.dim(0); ++i)
          for (std::size_t j = 0; j < g.dim(1); ++j) full.at(i, begin + j) = g.at(i, j);
        tape.accumulate_grad(a, std::move(full));
      });
}

template <typename T>
Var<T> slice_vector(const Var<T>& a, std::size_t begin, std::size_t end) {
  return a.tape().record(
      vitforge::slice_vector(a.value(), begin, end), {a},
      [a, begin](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T> full(a.value().shape());
        for (std::size_t j = 0; j < g.size(); ++j) full[begin + j] = g[j];
        tape.accumulate_grad(a, std::move(full));
      });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  return a.tape().record(
      vitforge::slice_rows(a.value(), begin, end), {a},
      [a, begin](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T> full(a.value().shape());
        const std::size_t c = g.dim(1);
        std::copy(g.data().begin(), g.data().end(), full.data().begin() + begin * c);
        tape.accumulate_grad(a, std::move(full));
      });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return parts.front().tape().record(
      vitforge::concat_cols(values), parts,
      [parts](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t w = p.value().dim(1);
          if (p.requires_grad())
            tape.accumulate_grad(p, vitforge::slice_cols(g, offset, offset + w));
          offset += w;
        }
      });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return parts.front().tape().record(
      vitforge::concat_rows(values), parts,
      [parts](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t h = p.value().dim(0);
          if (p.requires_grad())
            tape.accumulate_grad(p, vitforge::slice_rows(g, offset, offset + h));
          offset += h;
        }
      });
}

/// View with a different shape (same element count).
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return a.tape().record(a.value().reshaped(std::move(shape)), {a},
                         [a](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                           tape.accumulate_grad(a, g.reshaped(a.value().shape()));
                         });
}

/// Mean softmax cross-entropy over the rows of a B×K logit matrix, computed
/// in log-sum-exp form. Returns a one-element tensor.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Tensor<T>& z = logits.value();
  detail::require_rank(z, 2, "cross_entropy");
  const std::size_t b = z.dim(0), k = z.dim(1);
  if (labels.size() != b) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(b) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(y) +
                            " outside [0," + std::to_string(k) + ")");
    }
  }
  Tensor<T> probs = vitforge::softmax_rows(z);
  T total{0};
  for (std::size_t i = 0; i < b; ++i) {
    T mx = z.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z.at(i, j));
    T s{0};
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z.at(i, j) - mx);
    total += mx + std::log(s) - z.at(i, static_cast<std::size_t>(labels[i]));
  }
  const T loss = total / static_cast<T>(b);
  std::vector<int> owned(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor<T>({1}, std::vector<T>{loss}), {logits},
      [logits, probs = std::move(probs), owned = std::move(owned)](
          Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T> d = probs;
        const std::size_t rows = d.dim(0);
        for (std::size_t i = 0; i < rows; ++i) d.at(i, static_cast<std::size_t>(owned[i])) -= T{1};
        tape.accumulate_grad(logits, vitforge::scale(d, g[0] / static_cast<T>(rows)));
      });
}

}  // namespace ad
}  // namespace vitforge
