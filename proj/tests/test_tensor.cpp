#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "imamoe/errors.hpp"
#include "imamoe/tensor.hpp"
#include "support.hpp"

namespace imamoe {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_matrix;

// Checks d(sum(W .* op(x)))/dx against central differences, with W a fixed
// random readout so every output entry gets a distinct weight.
void expect_unary_gradient(const std::function<Var(Var)>& op, const Matrix& x0,
                           double tolerance = 1e-6, std::uint64_t seed = 3) {
  Rng rng(seed);
  Tape probe(false);
  const Matrix readout_shape = op(probe.constant(x0)).value();
  const Matrix readout = random_matrix(readout_shape.rows(), readout_shape.cols(), rng);
  auto value = [&](const Matrix& x) {
    Tape t(false);
    return sum(mul(op(t.constant(x)), t.constant(readout))).value()(0, 0);
  };
  Tape tape;
  Var x = tape.variable(x0);
  tape.backward(sum(mul(op(x), tape.constant(readout))));
  EXPECT_LT(max_relative_error(tape.grad(x), numeric_gradient(value, x0)), tolerance);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape t;
  Rng rng(1);
  const Matrix a = random_matrix(3, 4, rng);
  EXPECT_EQ(matmul(t.constant(Matrix::Identity(3, 3)), t.constant(a)).value(), a);
}

TEST(Matmul, HandArithmetic) {
  Tape t;
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Matrix b(2, 1);
  b << 1, 1;
  const Matrix c = matmul(t.constant(a), t.constant(b)).value();
  EXPECT_EQ(c(0, 0), 3.0);
  EXPECT_EQ(c(1, 0), 7.0);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(2);
  const Matrix a0 = random_matrix(4, 5, rng);
  const Matrix b0 = random_matrix(5, 3, rng);
  Tape tape;
  Var a = tape.variable(a0);
  Var b = tape.variable(b0);
  tape.backward(sum(matmul(a, b)));
  auto fa = [&](const Matrix& a1) { return (a1 * b0).sum(); };
  auto fb = [&](const Matrix& b1) { return (a0 * b1).sum(); };
  EXPECT_LT(max_relative_error(tape.grad(a), numeric_gradient(fa, a0)), 1e-6);
  EXPECT_LT(max_relative_error(tape.grad(b), numeric_gradient(fb, b0)), 1e-6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(4, 5)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2 x 3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4 x 5]"), std::string::npos);
  }
}

TEST(MatmulNt, MatchesExplicitTranspose) {
  Rng rng(4);
  const Matrix a = random_matrix(3, 5, rng);
  const Matrix b = random_matrix(4, 5, rng);
  Tape t;
  EXPECT_TRUE(matmul_nt(t.constant(a), t.constant(b)).value().isApprox(a * b.transpose(), 1e-14));
  Rng r2(5);
  const Matrix other = random_matrix(4, 5, r2);
  expect_unary_gradient([&](Var x) { return matmul_nt(x, x.tape()->constant(other)); }, a);
  expect_unary_gradient([&](Var x) { return matmul_nt(x.tape()->constant(a), x); }, b);
}

TEST(Softmax, SymmetricLogits) {
  Tape t;
  const Matrix p = softmax_temp(t.constant(Matrix::Zero(1, 2)), 1.0).value();
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
}

TEST(Softmax, LogTwo) {
  Tape t;
  Matrix x(1, 2);
  x << std::log(2.0), 0.0;
  const Matrix p = softmax_temp(t.constant(x), 1.0).value();
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, HigherTemperatureRaisesEntropy) {
  Matrix x(1, 3);
  x << 3, 1, -2;
  auto entropy = [&](double tau) {
    Tape t;
    const Matrix p = softmax_temp(t.constant(x), tau).value();
    return -(p.array() * p.array().log()).sum();
  };
  EXPECT_GT(entropy(10.0), entropy(1.0));
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(4, 7, rng, 5.0);
    const double tau = 0.1 + rng.uniform() * 5.0;
    Tape t;
    const Matrix p = softmax_temp(t.constant(x), tau).value();
    const Matrix q = softmax_temp(t.constant((x.array() + 123.456).matrix()), tau).value();
    for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    EXPECT_LT((p - q).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(Softmax, ColumnAxisNormalizesColumns) {
  Rng rng(7);
  Tape t;
  const Matrix p = softmax_temp(t.constant(random_matrix(5, 3, rng)), 1.0, 0).value();
  for (Index c = 0; c < 3; ++c) EXPECT_NEAR(p.col(c).sum(), 1.0, 1e-12);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Matrix x(1, 3);
  x << 1000, 999, -1000;
  Tape t;
  const Matrix p = softmax_temp(t.constant(x), 0.01).value();
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(Softmax, NonPositiveTemperatureIsRejected) {
  Tape t;
  Var x = t.constant(Matrix::Zero(1, 2));
  EXPECT_THROW(softmax_temp(x, 0.0), ConfigError);
  EXPECT_THROW(softmax_temp(x, -1.0), ConfigError);
}

TEST(Softmax, Gradient) {
  Rng rng(8);
  const Matrix x = random_matrix(3, 4, rng);
  expect_unary_gradient([](Var v) { return softmax_temp(v, 0.7, 1); }, x);
  expect_unary_gradient([](Var v) { return softmax_temp(v, 2.0, 0); }, x);
  expect_unary_gradient([](Var v) { return log_softmax(v); }, x);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var w = t.variable(Matrix::Constant(3, 2, 0.3));
  t.backward(sum(w));
  EXPECT_EQ(t.grad(w), Matrix::Ones(3, 2));
}

TEST(Backward, MeanSquaredErrorAtTargetHasZeroGradient) {
  Rng rng(9);
  const Matrix target = random_matrix(2, 3, rng);
  Tape t;
  Var w = t.variable(target);
  Var diff = sub(w, t.constant(target));
  t.backward(mean(mul(diff, diff)));
  EXPECT_EQ(t.grad(w), Matrix::Zero(2, 3));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  Var w = t.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(scale(w, 2.0)), UsageError);
}

TEST(Backward, ParameterGradientsAccumulateAcrossPasses) {
  Parameter p("w", Matrix::Constant(2, 2, 1.0));
  for (int pass = 0; pass < 2; ++pass) {
    Tape t;
    t.backward(sum(t.parameter(p)));
  }
  EXPECT_EQ(p.grad, Matrix::Constant(2, 2, 2.0));
}

TEST(Backward, RepeatedPassAfterResetIsBitIdentical) {
  Rng rng(10);
  Parameter w("w", random_matrix(4, 4, rng));
  const Matrix x = random_matrix(3, 4, rng);
  auto run = [&]() {
    w.zero_grad();
    Tape t;
    t.backward(sum(gelu(matmul_nt(t.constant(x), t.parameter(w)))));
    return w.grad;
  };
  const Matrix first = run();
  const Matrix second = run();
  EXPECT_EQ(std::memcmp(first.data(), second.data(), sizeof(double) * first.size()), 0);
}

TEST(Broadcast, AddSubMulGradients) {
  Rng rng(11);
  const Matrix a = random_matrix(3, 4, rng);
  for (const Matrix& b : {random_matrix(3, 4, rng), random_matrix(1, 4, rng),
                          random_matrix(3, 1, rng), random_matrix(1, 1, rng)}) {
    expect_unary_gradient([&](Var x) { return add(x, x.tape()->constant(b)); }, a);
    expect_unary_gradient([&](Var x) { return sub(x.tape()->constant(a), x); }, b);
    expect_unary_gradient([&](Var x) { return mul(x.tape()->constant(a), x); }, b);
    expect_unary_gradient([&](Var x) { return mul(x, x.tape()->constant(b)); }, a);
  }
}

TEST(Broadcast, IncompatibleShapesThrow) {
  Tape t;
  EXPECT_THROW(add(t.constant(Matrix::Zero(3, 4)), t.constant(Matrix::Zero(2, 4))),
               DimensionError);
}

TEST(Reductions, Gradients) {
  Rng rng(12);
  const Matrix x = random_matrix(3, 5, rng);
  expect_unary_gradient([](Var v) { return sum(v, 0); }, x);
  expect_unary_gradient([](Var v) { return sum(v, 1); }, x);
  expect_unary_gradient([](Var v) { return mean(v, 0); }, x);
  expect_unary_gradient([](Var v) { return mean(v, 1); }, x);
  expect_unary_gradient([](Var v) { return mean(v); }, x);
}

TEST(Activations, Gradients) {
  Rng rng(13);
  Matrix x = random_matrix(4, 4, rng);
  // Keep ReLU inputs away from the kink.
  Matrix xr = x;
  for (Index i = 0; i < xr.size(); ++i) {
    if (std::abs(xr.data()[i]) < 0.05) xr.data()[i] = 0.3;
  }
  expect_unary_gradient([](Var v) { return relu(v); }, xr);
  expect_unary_gradient([](Var v) { return gelu(v); }, x);
}

TEST(Activations, GeluUsesTheErfForm) {
  Tape t;
  Matrix x(1, 3);
  x << -1.0, 0.0, 2.0;
  const Matrix y = gelu(t.constant(x)).value();
  for (Index i = 0; i < 3; ++i) {
    const double v = x(0, i);
    EXPECT_NEAR(y(0, i), 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)), 1e-15);
  }
}

TEST(LayerNorm, StandardizesEachRow) {
  Rng rng(14);
  const Matrix x = random_matrix(5, 16, rng, 3.0);
  Tape t;
  const Matrix y =
      layer_norm(t.constant(x), t.constant(Matrix::Ones(1, 16)), t.constant(Matrix::Zero(1, 16)))
          .value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).mean();
    const double var = (y.row(r).array() - m).square().mean();
    const double mx = x.row(r).mean();
    const double sx = (x.row(r).array() - mx).square().mean();
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_NEAR(var, sx / (sx + kLayerNormEpsilon), 1e-12);
  }
}

TEST(LayerNorm, Gradients) {
  Rng rng(15);
  const Matrix x = random_matrix(3, 6, rng);
  const Matrix g = random_matrix(1, 6, rng);
  const Matrix b = random_matrix(1, 6, rng);
  expect_unary_gradient(
      [&](Var v) { return layer_norm(v, v.tape()->constant(g), v.tape()->constant(b)); }, x);
  expect_unary_gradient(
      [&](Var v) { return layer_norm(v.tape()->constant(x), v, v.tape()->constant(b)); }, g);
  expect_unary_gradient(
      [&](Var v) { return layer_norm(v.tape()->constant(x), v.tape()->constant(g), v); }, b);
}

TEST(Structural, ConcatSliceTransposeReshapeGradients) {
  Rng rng(16);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix other = random_matrix(2, 4, rng);
  const Matrix side = random_matrix(3, 2, rng);
  expect_unary_gradient(
      [&](Var v) {
        const Var parts[] = {v, v.tape()->constant(other), v};
        return concat_rows(parts);
      },
      a);
  expect_unary_gradient(
      [&](Var v) {
        const Var parts[] = {v.tape()->constant(side), v};
        return concat_cols(parts);
      },
      a);
  expect_unary_gradient([](Var v) { return slice(v, 1, 2, 1, 3); }, a);
  expect_unary_gradient([](Var v) { return transpose(v); }, a);
  expect_unary_gradient([](Var v) { return reshape(v, 2, 6); }, a);
  expect_unary_gradient([](Var v) { return scale(v, -2.5); }, a);
}

TEST(Structural, GatherRowsAndGather) {
  Rng rng(17);
  const Matrix table = random_matrix(4, 3, rng);
  Tape t;
  const Matrix rows = gather_rows(t.constant(table), {2, 0, 2}).value();
  EXPECT_EQ(rows.row(0), table.row(2));
  EXPECT_EQ(rows.row(1), table.row(0));
  expect_unary_gradient([](Var v) { return gather_rows(v, {2, 0, 2, 3}); }, table);
  const Matrix picked = gather(t.constant(table), {0, 2, 1, 1}).value();
  EXPECT_EQ(picked(2, 0), table(2, 1));
  expect_unary_gradient([](Var v) { return gather(v, {0, 2, 1, 1}); }, table);
  EXPECT_THROW(gather_rows(t.constant(table), {4}), DimensionError);
}

TEST(Numeric, NonFiniteValuesAreAnError) {
  Tape t;
  Matrix bad = Matrix::Zero(1, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(t.constant(bad), NumericError);
  Matrix huge = Matrix::Constant(1, 1, 1e308);
  EXPECT_THROW(scale(t.constant(huge), 10.0), NumericError);
}

TEST(WithBackward, ReplacesTheGradientRule) {
  Tape t;
  Var w = t.variable(Matrix::Ones(2, 2));
  Var y = with_backward(w, [](const Matrix& g) { return Matrix(3.0 * g); });
  EXPECT_EQ(y.value(), Matrix::Ones(2, 2));
  t.backward(sum(y));
  EXPECT_EQ(t.grad(w), Matrix::Constant(2, 2, 3.0));
}

}  // namespace
}  // namespace imamoe
