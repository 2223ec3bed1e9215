#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "imamoe/errors.hpp"
#include "imamoe/optim.hpp"
#include "imamoe/train.hpp"
#include "support.hpp"

namespace imamoe {
namespace {

using testing::data_path;
using testing::random_matrix;
using testing::random_records;
using testing::synthetic_records;

TEST(AdamW, ZeroGradientStepIsPureDecay) {
  Rng rng(1);
  Parameter p("p", random_matrix(4, 3, rng));
  const Matrix before = p.value;
  p.zero_grad();
  OptimState s;
  s.weight_decay = 1e-4;
  Parameter* ps[] = {&p};
  adamw_step(ps, s, 1e-4);
  const double factor = 1.0 - 1e-4 * 1e-4;
  for (Index i = 0; i < before.size(); ++i) EXPECT_EQ(p.value.data()[i], before.data()[i] * factor);
}

TEST(AdamW, MissingGradientCountsAsZero) {
  Parameter p("p", Matrix::Constant(2, 2, 3.0));
  OptimState s;
  s.weight_decay = 0.5;
  Parameter* ps[] = {&p};
  adamw_step(ps, s, 0.1);
  EXPECT_EQ(p.value, Matrix::Constant(2, 2, 3.0 * (1.0 - 0.1 * 0.5)));
}

// Textbook Adam, written out per element.
struct ReferenceAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

TEST(AdamW, EqualsAdamWithoutDecay) {
  Rng rng(2);
  Parameter p("p", random_matrix(5, 2, rng));
  std::vector<double> theta(p.value.data(), p.value.data() + p.value.size());
  OptimState s;
  s.weight_decay = 0.0;
  ReferenceAdam ref;
  Parameter* ps[] = {&p};
  for (int k = 0; k < 25; ++k) {
    p.grad = random_matrix(5, 2, rng);
    std::vector<double> g(p.grad.data(), p.grad.data() + p.grad.size());
    adamw_step(ps, s, 1e-3);
    ref.step(theta, g, 1e-3);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      EXPECT_DOUBLE_EQ(p.value.data()[i], theta[i]) << "step " << k;
    }
  }
  EXPECT_EQ(s.step, 25);
}

TEST(AdamW, ConstantGradientMovesByLearningRate) {
  Parameter p("p", Matrix::Constant(1, 1, 1.0));
  OptimState s;
  s.weight_decay = 0.0;
  Parameter* ps[] = {&p};
  double previous = 1.0;
  for (int k = 0; k < 200; ++k) {
    p.grad = Matrix::Constant(1, 1, 0.3);
    adamw_step(ps, s, 1e-3);
    const double delta = previous - p.value(0, 0);
    // m_hat = g and v_hat = g^2 exactly, so each step is lr * g / (|g| + eps).
    EXPECT_NEAR(delta, 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
    EXPECT_LT(p.value(0, 0), previous);
    previous = p.value(0, 0);
  }
  Parameter q("q", Matrix::Constant(1, 1, 1.0));
  q.grad = Matrix::Constant(1, 1, -2.0);
  OptimState s2;
  s2.weight_decay = 0.0;
  Parameter* qs[] = {&q};
  adamw_step(qs, s2, 1e-3);
  EXPECT_NEAR(q.value(0, 0), 1.0 + 1e-3, 1e-10);
}

TEST(AdamW, ShapeMismatchRejected) {
  Parameter p("p", Matrix::Zero(2, 2));
  p.grad = Matrix::Zero(3, 2);
  OptimState s;
  Parameter* ps[] = {&p};
  EXPECT_THROW(adamw_step(ps, s, 1e-3), DimensionError);
  Parameter a("a", Matrix::Zero(1, 1)), b("b", Matrix::Zero(1, 1));
  OptimState s2;
  Parameter* one[] = {&a};
  Parameter* two[] = {&a, &b};
  adamw_step(one, s2, 1e-3);
  EXPECT_THROW(adamw_step(two, s2, 1e-3), DimensionError);
}

Schedule schedule(std::int64_t steps_per_epoch) {
  Schedule s;
  s.steps_per_epoch = steps_per_epoch;
  return s;
}

TEST(Schedule, WarmupBoundaryAndEnds) {
  const Schedule s = schedule(57);
  const std::int64_t w = s.warmup_steps(), n = s.total_steps();
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_NEAR(lr_at(w, s), 1e-4, 1e-15);
  // Cosine side evaluated at zero progress is the base rate as well; one
  // step later it has moved by at most base * (pi / (n - w))^2 / 4.
  const double next = lr_at(w + 1, s);
  EXPECT_LE(next, 1e-4);
  EXPECT_LE(1e-4 - next, 1e-4 * std::pow(std::numbers::pi / double(n - w), 2) / 4.0 + 1e-20);
  EXPECT_NEAR(lr_at(w - 1, s), 1e-4 * double(w - 1) / double(w), 1e-18);
  EXPECT_NEAR(lr_at(n, s), 0.0, 1e-15);
  EXPECT_NEAR(lr_at(n + 10, s), 0.0, 1e-15);
}

TEST(Schedule, DecayMidpointIsHalfRate) {
  Schedule s = schedule(10);  // 50 warmup steps, 450 decay steps
  const std::int64_t mid = s.warmup_steps() + (s.total_steps() - s.warmup_steps()) / 2;
  ASSERT_EQ((s.total_steps() - s.warmup_steps()) % 2, 0);
  EXPECT_NEAR(lr_at(mid, s), 5e-5, 1e-15);
}

TEST(Schedule, WarmupIsLinearAndDecayMonotone) {
  const Schedule s = schedule(7);
  for (std::int64_t k = 1; k <= s.warmup_steps(); ++k) {
    EXPECT_NEAR(lr_at(k, s), 1e-4 * double(k) / double(s.warmup_steps()), 1e-18);
  }
  for (std::int64_t k = s.warmup_steps(); k < s.total_steps(); ++k) {
    EXPECT_GE(lr_at(k, s), lr_at(k + 1, s));
  }
}

TEST(Schedule, FromTrainConfig) {
  TrainConfig c;
  EXPECT_EQ(c.epochs, 50);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.warmup_epochs, 5);
  const Schedule s = make_schedule(c, 900);
  EXPECT_EQ(s.steps_per_epoch, 57);  // 56 full batches + 1 partial
  EXPECT_EQ(s.total_steps(), 2850);
}

TEST(EpochOrder, IsAPermutationFixedBySeed) {
  const auto a = epoch_order(50, 3, 1);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(a, epoch_order(50, 3, 1));
  EXPECT_NE(a, epoch_order(50, 3, 2));
  EXPECT_NE(a, epoch_order(50, 4, 1));
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.d = 16;
  m.layers = 1;
  m.experts = 2;
  m.seed = 5;
  return m;
}

TEST(Train, OneEpochOnThirtyTwoSubjectsTakesTwoSteps) {
  const MeasureSchema schema = load_schema(data_path("desk.schema.json"));
  const Dataset data = random_records(schema, 32, 1);
  ModelParams p = build_model(tiny_model(), schema);
  TrainConfig c;
  c.epochs = 1;
  c.warmup_epochs = 1;
  const TrainResult r = train(p, tiny_model(), schema, data, c);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].steps, 2);
  EXPECT_EQ(r.state.optim.step, 2);
  EXPECT_EQ(r.state.epochs_done, 1);
}

TEST(Train, PartialBatchIsKept) {
  const MeasureSchema schema = load_schema(data_path("desk.schema.json"));
  const Dataset data = random_records(schema, 33, 1);
  ModelParams p = build_model(tiny_model(), schema);
  TrainConfig c;
  c.epochs = 1;
  c.warmup_epochs = 1;
  EXPECT_EQ(train(p, tiny_model(), schema, data, c).state.optim.step, 3);
}

TEST(Train, EmptyDatasetIsDataError) {
  const MeasureSchema schema = load_schema(data_path("desk.schema.json"));
  ModelParams p = build_model(tiny_model(), schema);
  EXPECT_THROW(train(p, tiny_model(), schema, Dataset{}, TrainConfig{}), DataError);
}

TEST(Train, InvalidConfigRejected) {
  TrainConfig c;
  c.warmup_epochs = 60;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ThreeEpochsAreBitIdentical) {
  const MeasureSchema schema = load_schema(data_path("desk.schema.json"));
  const Dataset data = random_records(schema, 40, 2);
  TrainConfig c;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.seed = 9;
  ModelParams a = build_model(tiny_model(), schema);
  ModelParams b = build_model(tiny_model(), schema);
  const TrainResult ra = train(a, tiny_model(), schema, data, c);
  const TrainResult rb = train(b, tiny_model(), schema, data, c);
  const auto pa = parameters(a), pb = parameters(b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Matrix& x = pa[i].param->value;
    EXPECT_EQ(std::memcmp(x.data(), pb[i].param->value.data(), sizeof(double) * x.size()), 0);
  }
  for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
    EXPECT_EQ(ra.epochs[e].mean_loss, rb.epochs[e].mean_loss);
  }
}

TEST(Train, FixedBatchLossMostlyDecreasesAtDefaultRate) {
  MeasureSchema schema;
  const Dataset data = synthetic_records("planted.json", 16, &schema);
  ModelConfig m;
  m.seed = 1;
  ModelParams p = build_model(m, schema);
  std::vector<Parameter*> ps;
  for (const ParamRef& r : parameters(p)) ps.push_back(r.param);
  OptimState s;
  const auto recs = pointers(data);
  std::vector<double> losses;
  for (int k = 0; k <= 10; ++k) {
    for (Parameter* q : ps) q->zero_grad();
    Tape t;
    Var loss = batch_loss(t, p, m, schema, recs);
    losses.push_back(loss.value()(0, 0));
    if (k == 10) break;
    t.backward(loss);
    adamw_step(ps, s, 1e-4);
  }
  int increases = 0;
  for (std::size_t k = 1; k < losses.size(); ++k) increases += losses[k] >= losses[k - 1];
  EXPECT_LE(increases, 2);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Train, PlantedSignalLossHalves) {
  MeasureSchema schema;
  const Dataset data = synthetic_records("planted.json", 200, &schema);
  ModelConfig m = tiny_model();
  m.d = 32;
  ModelParams p = build_model(m, schema);
  TrainConfig c;
  c.epochs = 20;
  c.warmup_epochs = 2;
  c.lr = 1e-3;
  const TrainResult r = train(p, m, schema, data, c);
  EXPECT_LT(r.epochs.back().mean_loss, 0.5 * r.epochs.front().mean_loss);
}

}  // namespace
}  // namespace imamoe
