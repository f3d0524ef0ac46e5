#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape owns every intermediate value; a Var is a handle (tape, slot).
// Operations push a node holding the forward value and a closure that maps
// the node's incoming gradient onto its inputs. Tape::backward seeds a 1 x 1
// root with 1 and walks the nodes in reverse creation order, which is a
// valid topological order because inputs always precede outputs.
//
// A tape built with record = false keeps values only; it is used for
// inference where no gradient is needed.

#include "umsd/common.hpp"
#include "umsd/sequence_ops.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace umsd::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// Leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf without gradient.
  Var constant(Matrix value);
  /// Interior node. The closure is kept only when some input needs a
  /// gradient and the tape is recording.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  const Matrix& value(Var v) const { return nodes_[v.id()].value; }

  /// Gradient accumulated at v; zeros when nothing reached it.
  Matrix grad(Var v) const;

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  void backward(Var root);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
  bool record_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cwise_mul(Var a, Var b);
Var scale(Var a, double s);
/// x + b with b a 1 x d row broadcast over rows.
Var add_row(Var x, Var b);
/// x .* s with s a 1 x d row broadcast over rows.
Var mul_row(Var x, Var s);
/// x W + b.
Var linear(Var x, Var weight, Var bias);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Structure.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice_rows(Var x, Index begin, Index count);
Var slice_cols(Var x, Index begin, Index count);
Var reverse_rows(Var x);
/// L x (w d): row k is [x_k, x_{k-1}, ..., x_{k-w+1}], zero padded.
Var unfold_causal(Var x, Index width);

// Elementwise nonlinearities.
Var gelu(Var x);  // tanh approximation
Var softplus(Var x);
Var neg_exp(Var x);  // -exp(x)

// Row-wise softmax.
Var softmax_rows(Var x);

// Sequence ops with hand-written adjoints.
Var causal_conv(Var x, Var kernel);
Var instance_norm(Var x);
/// Selective recurrence in the forward direction; see SelectiveInputs.
Var selective_scan(Var u, Var delta, Var B, Var C, Var A, Var D);

// Reductions to 1 x 1.
Var sum(Var x);
Var mean(Var x);
Var mean_abs(Var x);
Var mean_square(Var x);
/// 1 x d mean over rows.
Var mean_rows(Var x);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace umsd::ad
