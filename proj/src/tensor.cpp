#include "imamoe/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace imamoe {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << '[' << m.rows() << " x " << m.cols() << ']';
  return os.str();
}

void require_finite(const Matrix& m, std::string_view where, std::string_view detail) {
  if (m.allFinite()) return;
  std::string msg(where);
  if (!detail.empty()) msg.append(" ").append(detail);
  throw NumericError(msg + ": non-finite value in " + shape_string(m));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this) throw UsageError("variable belongs to a different tape");
  return nodes_[v.id_];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this) throw UsageError("variable belongs to a different tape");
  return nodes_[v.id_];
}

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  require_finite(value, "variable");
  Parameter& p = owned_.emplace_back("", std::move(value));
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  require_finite(p.value, "parameter", p.name);
  nodes_.push_back(Node{p.value, {}, grad_enabled_, {}, grad_enabled_ ? &p : nullptr});
  Var v(this, nodes_.size() - 1);
  if (parameter_hook_) return parameter_hook_(*this, p, v);
  return v;
}

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.param == nullptr) throw UsageError("grad() is only kept for leaf variables");
  if (n.param->grad.size() == 0) n.param->zero_grad();
  return n.param->grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward,
                 const char* op) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward), op);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward,
                 const char* op) {
  require_finite(value, op);
  bool needs = false;
  for (const Var& in : inputs) needs = needs || node(in).requires_grad;
  Node n{std::move(value), {}, needs, {}, nullptr};
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw UsageError("backward requires a scalar loss, got " + shape_string(root.value));
  }
  if (!root.requires_grad) throw UsageError("loss does not depend on any differentiable input");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param != nullptr) n.param->accumulate_grad(n.grad);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                       shape_string(a));
}

// Reduce a full-shape gradient back to the broadcast operand's shape.
Matrix reduce_to(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
    case Broadcast::kScalar:
      return Matrix::Constant(1, 1, g.sum());
  }
  return g;
}

// out = a (+|-) broadcast(b), without materializing the broadcast operand.
Matrix combine(const Matrix& a, const Matrix& b, Broadcast kind, Scalar sign) {
  Matrix out = a;
  switch (kind) {
    case Broadcast::kSame:
      out += sign * b;
      break;
    case Broadcast::kRow:
      out.rowwise() += sign * b.row(0);
      break;
    case Broadcast::kCol:
      out.colwise() += sign * b.col(0);
      break;
    case Broadcast::kScalar:
      out.array() += sign * b(0, 0);
      break;
  }
  return out;
}

Matrix broadcast_to(const Matrix& b, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::kSame:
      return b;
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kCol:
      return b.replicate(1, cols);
    case Broadcast::kScalar:
      return Matrix::Constant(rows, cols, b(0, 0));
  }
  return b;
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw UsageError("operands live on different tapes");
  return t;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av) + " x " +
                         shape_string(bv));
  }
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  return t.record(
      std::move(out), {a, b},
      [&t, a, b, pa = &av, pb = &bv](const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * pb->transpose());
        if (t.requires_grad(b)) t.accumulate(b, pa->transpose() * g);
      },
      "matmul");
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(av) + " x " +
                         shape_string(bv) + "^T");
  }
  Matrix out(av.rows(), bv.rows());
  out.noalias() = av * bv.transpose();
  return t.record(
      std::move(out), {a, b},
      [&t, a, b, pa = &av, pb = &bv](const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * *pb);
        if (t.requires_grad(b)) t.accumulate(b, g.transpose() * *pa);
      },
      "matmul_nt");
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.record(
      a.value().transpose(), {a}, [&t, a](const Matrix& g) { t.accumulate(a, g.transpose()); },
      "transpose");
}

Var reshape(Var a, Index rows, Index cols) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (rows * cols != av.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(av) + " as [" +
                         std::to_string(rows) + " x " + std::to_string(cols) + "]");
  }
  // Row-major storage makes this a plain copy of the buffer.
  Matrix out = Eigen::Map<const Matrix>(av.data(), rows, cols);
  const Index r0 = av.rows();
  const Index c0 = av.cols();
  return t.record(
      std::move(out), {a},
      [&t, a, r0, c0](const Matrix& g) { t.accumulate(a, Eigen::Map<const Matrix>(g.data(), r0, c0)); },
      "reshape");
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Broadcast kind = broadcast_kind(av, b.value(), "add");
  Matrix out = combine(av, b.value(), kind, 1.0);
  return t.record(
      std::move(out), {a, b},
      [&t, a, b, kind](const Matrix& g) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) t.accumulate(b, reduce_to(g, kind));
      },
      "add");
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Broadcast kind = broadcast_kind(av, b.value(), "sub");
  Matrix out = combine(av, b.value(), kind, -1.0);
  return t.record(
      std::move(out), {a, b},
      [&t, a, b, kind](const Matrix& g) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) t.accumulate(b, -reduce_to(g, kind));
      },
      "sub");
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Broadcast kind = broadcast_kind(av, b.value(), "mul");
  Matrix bb = broadcast_to(b.value(), kind, av.rows(), av.cols());
  Matrix out = av.cwiseProduct(bb);
  return t.record(
      std::move(out), {a, b},
      [&t, a, b, kind, pa = &av, bb = std::move(bb)](const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(bb));
        if (t.requires_grad(b)) t.accumulate(b, reduce_to(g.cwiseProduct(*pa), kind));
      },
      "mul");
}

Var scale(Var a, Scalar factor) {
  Tape& t = tape_of(a);
  return t.record(
      a.value() * factor, {a}, [&t, a, factor](const Matrix& g) { t.accumulate(a, g * factor); },
      "scale");
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Index r = a.rows();
  const Index c = a.cols();
  return t.record(
      Matrix::Constant(1, 1, a.value().sum()), {a},
      [&t, a, r, c](const Matrix& g) { t.accumulate(a, Matrix::Constant(r, c, g(0, 0))); }, "sum");
}

Var sum(Var a, int axis) {
  Tape& t = tape_of(a);
  const Index r = a.rows();
  const Index c = a.cols();
  if (axis == 0) {
    return t.record(
        a.value().colwise().sum(), {a},
        [&t, a, r](const Matrix& g) { t.accumulate(a, g.replicate(r, 1)); }, "sum");
  }
  if (axis == 1) {
    return t.record(
        a.value().rowwise().sum(), {a},
        [&t, a, c](const Matrix& g) { t.accumulate(a, g.replicate(1, c)); }, "sum");
  }
  throw DimensionError("sum: axis must be 0 or 1");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<Scalar>(a.value().size())); }

Var mean(Var a, int axis) {
  const Index n = axis == 0 ? a.rows() : a.cols();
  return scale(sum(a, axis), 1.0 / static_cast<Scalar>(n));
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  return t.record(
      av.cwiseMax(0.0), {a},
      [&t, a, pa = &av](const Matrix& g) {
        t.accumulate(a, g.cwiseProduct((pa->array() > 0.0).cast<Scalar>().matrix()));
      },
      "relu");
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix cdf = av.unaryExpr([](Scalar v) { return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)); });
  Matrix out = av.cwiseProduct(cdf);
  return t.record(
      std::move(out), {a},
      [&t, a, pa = &av, cdf](const Matrix& g) {
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        const auto pdf = (-0.5 * pa->array().square()).exp() * inv_sqrt_2pi;
        t.accumulate(a, (g.array() * (cdf.array() + pa->array() * pdf)).matrix());
      },
      "gelu");
}

Var layer_norm(Var x, Var gain, Var shift, Scalar epsilon) {
  Tape& t = tape_of(x, gain);
  if (shift.tape() != &t) throw UsageError("operands live on different tapes");
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || shift.rows() != 1 || shift.cols() != n) {
    throw DimensionError("layer_norm: gain/shift must be [1 x " + std::to_string(n) + "], got " +
                         shape_string(gain.value()) + " and " + shape_string(shift.value()));
  }
  const Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + epsilon).rsqrt();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array()).rowwise() +
               shift.value().row(0).array();
  return t.record(
      std::move(out), {x, gain, shift},
      [&t, x, gain, shift, normalized = std::move(normalized), inv_std](const Matrix& g) {
        if (t.requires_grad(gain)) {
          t.accumulate(gain, g.cwiseProduct(normalized).colwise().sum());
        }
        if (t.requires_grad(shift)) t.accumulate(shift, g.colwise().sum());
        if (t.requires_grad(x)) {
          const Matrix gn = g.array().rowwise() * gain.value().row(0).array();
          const Eigen::VectorXd mean_g = gn.rowwise().mean();
          const Eigen::VectorXd mean_gx = gn.cwiseProduct(normalized).rowwise().mean();
          Matrix dx = (gn.colwise() - mean_g) -
                      Matrix(normalized.array().colwise() * mean_gx.array());
          dx.array().colwise() *= inv_std.array();
          t.accumulate(x, dx);
        }
      },
      "layer_norm");
}

namespace {

// Softmax of each row of `logits` / tau.
Matrix row_softmax(const Matrix& logits, Scalar tau) {
  Matrix scaled = logits / tau;
  const Eigen::VectorXd row_max = scaled.rowwise().maxCoeff();
  scaled.colwise() -= row_max;
  Matrix e = scaled.array().exp();
  const Eigen::VectorXd z = e.rowwise().sum();
  e.array().colwise() /= z.array();
  return e;
}

}  // namespace

Var softmax_temp(Var x, Scalar tau, int axis) {
  if (!(tau > 0.0)) throw ConfigError("softmax_temp: temperature must be positive");
  if (axis != 0 && axis != 1) throw DimensionError("softmax_temp: axis must be 0 or 1");
  Tape& t = tape_of(x);
  require_finite(x.value(), "softmax_temp input");
  const bool by_row = axis == 1;
  Matrix p = by_row ? row_softmax(x.value(), tau)
                    : Matrix(row_softmax(x.value().transpose(), tau).transpose());
  Matrix out = p;
  return t.record(
      std::move(out), {x},
      [&t, x, p = std::move(p), tau, by_row](const Matrix& g) {
        // d/dx softmax(x/tau): (g - <g, p>) * p / tau along the normalized axis.
        if (by_row) {
          const Eigen::VectorXd dot = g.cwiseProduct(p).rowwise().sum();
          t.accumulate(x, ((g.colwise() - dot).cwiseProduct(p)) / tau);
        } else {
          const Eigen::RowVectorXd dot = g.cwiseProduct(p).colwise().sum();
          t.accumulate(x, ((g.rowwise() - dot).cwiseProduct(p)) / tau);
        }
      },
      "softmax_temp");
}

Var log_softmax(Var x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const Eigen::VectorXd row_max = xv.rowwise().maxCoeff();
  Matrix shifted = xv.colwise() - row_max;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Matrix out = shifted.colwise() - lse;
  Matrix p = out.array().exp();
  return t.record(
      std::move(out), {x},
      [&t, x, p = std::move(p)](const Matrix& g) {
        const Eigen::VectorXd total = g.rowwise().sum();
        t.accumulate(x, g - Matrix(p.array().colwise() * total.array()));
      },
      "log_softmax");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw UsageError("operands live on different tapes");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column count differs, " +
                           shape_string(parts.front().value()) + " vs " + shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    offsets.push_back(at);
    at += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(
      std::move(out), parts,
      [&t, inputs, offsets](const Matrix& g) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (t.requires_grad(inputs[i])) {
            t.accumulate(inputs[i], g.middleRows(offsets[i], inputs[i].rows()));
          }
        }
      },
      "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw UsageError("operands live on different tapes");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row count differs, " +
                           shape_string(parts.front().value()) + " vs " + shape_string(p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    offsets.push_back(at);
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(
      std::move(out), parts,
      [&t, inputs, offsets](const Matrix& g) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (t.requires_grad(inputs[i])) {
            t.accumulate(inputs[i], g.middleCols(offsets[i], inputs[i].cols()));
          }
        }
      },
      "concat_cols");
}

Var slice(Var a, Index row, Index rows, Index col, Index cols) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > av.rows() ||
      col + cols > av.cols()) {
    throw DimensionError("slice: block out of range for " + shape_string(av));
  }
  return t.record(
      av.block(row, col, rows, cols), {a},
      [&t, a, row, col](const Matrix& g) { t.accumulate_block(a, row, col, g); }, "slice");
}

Var gather_rows(Var table, std::vector<Index> indices) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tv.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for " + shape_string(tv));
    }
    out.row(static_cast<Index>(i)) = tv.row(indices[i]);
  }
  const Index r0 = tv.rows();
  return t.record(
      std::move(out), {table},
      [&t, table, indices = std::move(indices), r0](const Matrix& g) {
        Matrix full = Matrix::Zero(r0, g.cols());
        for (std::size_t i = 0; i < indices.size(); ++i) {
          full.row(indices[i]) += g.row(static_cast<Index>(i));
        }
        t.accumulate(table, full);
      },
      "gather_rows");
}

Var gather(Var a, std::vector<Index> indices) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (static_cast<Index>(indices.size()) != av.rows()) {
    throw DimensionError("gather: need one index per row of " + shape_string(av));
  }
  Matrix out(av.rows(), 1);
  for (Index i = 0; i < av.rows(); ++i) {
    const Index j = indices[static_cast<std::size_t>(i)];
    if (j < 0 || j >= av.cols()) {
      throw DimensionError("gather: column " + std::to_string(j) + " out of range for " +
                           shape_string(av));
    }
    out(i, 0) = av(i, j);
  }
  const Index c0 = av.cols();
  return t.record(
      std::move(out), {a},
      [&t, a, indices = std::move(indices), c0](const Matrix& g) {
        Matrix full = Matrix::Zero(g.rows(), c0);
        for (Index i = 0; i < g.rows(); ++i) full(i, indices[static_cast<std::size_t>(i)]) = g(i, 0);
        t.accumulate(a, full);
      },
      "gather");
}

Var with_backward(Var a, std::function<Matrix(const Matrix&)> rule) {
  Tape& t = tape_of(a);
  return t.record(
      a.value(), {a}, [&t, a, rule = std::move(rule)](const Matrix& g) { t.accumulate(a, rule(g)); },
      "with_backward");
}

}  // namespace imamoe
