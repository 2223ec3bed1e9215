#pragma once

// Dense reverse-mode autodiff over row-major Eigen matrices.
//
// Every value in the model is at most two-dimensional: a batch of token rows
// by feature columns, a vector as a 1 x n row, a scalar as 1 x 1. Operations
// record themselves on a Tape (define-by-run); Tape::backward replays the
// recorded rules in reverse. Learnable state lives in Parameter objects that
// outlive the tape and receive accumulated gradients.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imamoe/errors.hpp"

namespace imamoe {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline constexpr Scalar kLayerNormEpsilon = 1e-5;

/// "[rows x cols]" for error messages.
std::string shape_string(const Matrix& m);

/// Throws NumericError naming `where` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view where, std::string_view detail = {});

/// A named learnable tensor. `grad` is empty until the first backward pass
/// touches it and has the shape of `value` afterwards.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, Matrix value) : name(std::move(name)), value(std::move(value)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  template <typename Derived>
  void accumulate_grad(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out)>;

  /// With gradients disabled, parameters enter as constants and no backward
  /// rules are stored (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);

  /// A leaf that participates in differentiation; its gradient accumulates
  /// across backward calls and is read with grad().
  Var variable(Matrix value);

  /// Binds a persistent parameter. Gradients flow into `p.grad`.
  Var parameter(Parameter& p);

  /// Hook applied to every bound parameter; lets callers splice an operation
  /// between a parameter and its uses.
  using ParameterHook = std::function<Var(Tape&, Parameter&, Var)>;
  void set_parameter_hook(ParameterHook hook) { parameter_hook_ = std::move(hook); }

  const Matrix& value(Var v) const { return node(v).value; }

  /// Accumulated gradient of a variable() leaf (zeros if never reached).
  const Matrix& grad(Var v) const;

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Reverse pass from a 1 x 1 loss. Intermediate gradients are recomputed
  /// from scratch; leaf and parameter gradients accumulate.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-implementation interface.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward,
             const char* op);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward, const char* op);

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Adds `g` into the block of v's gradient starting at (row, col).
  template <typename Derived>
  void accumulate_block(Var v, Index row, Index col, const Eigen::MatrixBase<Derived>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::deque<Parameter> owned_;
  ParameterHook parameter_hook_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast `b` over `a` when `b` is
// 1 x n (one row), m x 1 (one column) or 1 x 1.

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Index rows, Index cols);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar factor);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Scalar s) { return scale(a, s); }
inline Var operator*(Scalar s, Var a) { return scale(a, s); }

/// Sum of all entries (1 x 1).
Var sum(Var a);
/// Sum along an axis: 0 collapses rows (result 1 x n), 1 collapses columns
/// (result m x 1).
Var sum(Var a, int axis);
Var mean(Var a);
Var mean(Var a, int axis);

Var relu(Var a);
/// Exact GELU, x * Phi(x).
Var gelu(Var a);

/// Row-wise layer normalization with learnable gain/shift (both 1 x n).
Var layer_norm(Var x, Var gain, Var shift, Scalar epsilon = kLayerNormEpsilon);

/// softmax(x / tau) along `axis` (1 = within each row, 0 = within each
/// column), with max subtraction.
Var softmax_temp(Var x, Scalar tau, int axis = 1);
Var log_softmax(Var x);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice(Var a, Index row, Index rows, Index col, Index cols);

/// Row lookup: out.row(i) = table.row(indices[i]). Embedding lookup and row
/// permutations both go through this.
Var gather_rows(Var table, std::vector<Index> indices);

/// Per-row pick: out(i, 0) = a(i, indices[i]).
Var gather(Var a, std::vector<Index> indices);

/// Identity forward; the backward pass applies `rule` to the incoming
/// gradient instead of passing it through.
Var with_backward(Var a, std::function<Matrix(const Matrix&)> rule);

}  // namespace imamoe
