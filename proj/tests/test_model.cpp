#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "imamoe/checkpoint.hpp"
#include "imamoe/errors.hpp"
#include "imamoe/model.hpp"
#include "support.hpp"

namespace imamoe {
namespace {

using testing::data_path;
using testing::random_matrix;
using testing::random_records;

MeasureSchema desk() { return load_schema(data_path("desk.schema.json")); }

ModelConfig small_config(Variant v = Variant::kFull) {
  ModelConfig c;
  c.d = 16;
  c.layers = 2;
  c.experts = 3;
  c.variant = v;
  c.seed = 11;
  return c;
}

Matrix logits_of(ModelParams& p, const ModelConfig& c, const MeasureSchema& s, const Dataset& d) {
  Tape t(false);
  const auto recs = pointers(d);
  return forward(t, p, c, s, recs).logits.value();
}

TEST(Model, TraceShapesOnFifteenMeasures) {
  const MeasureSchema schema = load_schema(data_path("abcd15.schema.json"));
  ModelConfig c;
  c.seed = 3;
  ModelParams p = build_model(c, schema);
  const Dataset data = random_records(schema, 1, 1);
  Tape t(false);
  const auto recs = pointers(data);
  const ForwardTrace tr = trace_of(forward(t, p, c, schema, recs), 0);
  EXPECT_EQ(tr.tokens0.rows(), 15);
  EXPECT_EQ(tr.tokens0.cols(), 128);
  EXPECT_EQ(tr.mixed.rows(), 15);
  EXPECT_EQ(tr.refined.rows(), 15);
  EXPECT_EQ(tr.refined.cols(), 128);
  EXPECT_EQ(tr.pi.size(), 15);
  EXPECT_EQ(tr.pooled.size(), 128);
  EXPECT_EQ(tr.logits.size(), 2);
  EXPECT_EQ(tr.gates.rows(), 15);
  EXPECT_EQ(tr.gates.cols(), 4);
  EXPECT_GE(tr.probability, 0.0);
  EXPECT_LE(tr.probability, 1.0);
}

TEST(Model, DefaultExpertShapes) {
  ModelConfig c;
  ModelParams p = build_model(c, desk());
  ASSERT_TRUE(p.moe);
  ASSERT_EQ(p.moe->experts.size(), 4u);
  for (const ExpertParams& e : p.moe->experts) {
    EXPECT_EQ(e.hidden.weight.value.rows(), 128);
    EXPECT_EQ(e.hidden.weight.value.cols(), 128);
    EXPECT_EQ(e.hidden.bias.value.size(), 128);
    EXPECT_EQ(e.output.weight.value.rows(), 128);
    EXPECT_EQ(e.output.weight.value.cols(), 128);
    EXPECT_EQ(e.output.bias.value.size(), 128);
  }
  EXPECT_EQ(p.cross.size(), 3u);
  EXPECT_EQ(p.cross[0].attention.heads, 1);
}

TEST(Model, FlatMlpHasFiveLinearLayers) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(Variant::kFlatMlp), schema);
  ASSERT_EQ(p.flat.size(), 5u);
  EXPECT_EQ(p.flat.front().in_features(), static_cast<Index>(schema.flat_width()));
  EXPECT_EQ(p.flat.back().out_features(), 2);
  for (std::size_t i = 1; i < p.flat.size(); ++i) {
    EXPECT_EQ(p.flat[i].in_features(), p.flat[i - 1].out_features());
    EXPECT_LE(p.flat[i].out_features(), p.flat[i - 1].out_features());
  }
  const Dataset data = random_records(schema, 3, 2);
  const Matrix logits = logits_of(p, small_config(Variant::kFlatMlp), schema, data);
  EXPECT_EQ(logits.rows(), 3);
  EXPECT_EQ(logits.cols(), 2);
}

TEST(Model, FlatMlpWidthsTaperGeometrically) {
  const auto w = flat_mlp_widths(1000);
  ASSERT_EQ(w.size(), 6u);
  EXPECT_EQ(w.front(), 1000);
  EXPECT_EQ(w.back(), 2);
  // 1000 * (2/1000)^(k/5), rounded.
  EXPECT_EQ(w[1], 289);
  EXPECT_EQ(w[2], 83);
  EXPECT_EQ(w[3], 24);
  EXPECT_EQ(w[4], 7);
}

TEST(Model, SameSeedSameBytes) {
  const MeasureSchema schema = desk();
  ModelParams a = build_model(small_config(), schema);
  ModelParams b = build_model(small_config(), schema);
  const auto ra = parameters(a), rb = parameters(b);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const Matrix& x = ra[i].param->value;
    const Matrix& y = rb[i].param->value;
    ASSERT_EQ(x.size(), y.size());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0) << ra[i].param->name;
  }
  ModelConfig other = small_config();
  other.seed = 12;
  ModelParams c = build_model(other, schema);
  EXPECT_NE(parameters(c)[0].param->value, ra[0].param->value);
}

TEST(Model, VariantsOmitUnusedGroups) {
  const MeasureSchema schema = desk();
  struct Case {
    Variant v;
    bool cross, moe, importance;
  };
  for (const Case& k : {Case{Variant::kFull, true, true, true}, Case{Variant::kTokenAvg, false, false, false},
                        Case{Variant::kTokenMoeTim, false, true, true},
                        Case{Variant::kTokenTransTim, true, false, true},
                        Case{Variant::kTokenTransAvg, true, true, false}}) {
    ModelParams p = build_model(small_config(k.v), schema);
    EXPECT_EQ(!p.cross.empty(), k.cross) << to_string(k.v);
    EXPECT_EQ(p.moe.has_value(), k.moe) << to_string(k.v);
    EXPECT_EQ(p.importance.has_value(), k.importance) << to_string(k.v);
    EXPECT_TRUE(p.classifier.has_value());
  }
}

TEST(Model, VariantNamesRoundTrip) {
  for (Variant v : {Variant::kFull, Variant::kTokenAvg, Variant::kTokenMoeTim,
                    Variant::kTokenTransTim, Variant::kTokenTransAvg, Variant::kFlatMlp}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_variant("token_everything"), ConfigError);
  EXPECT_EQ(ablation_variants().size(), 5u);
}

TEST(Model, InvalidConfigsRejected) {
  const MeasureSchema schema = desk();
  ModelConfig c = small_config();
  c.d = 0;
  EXPECT_THROW(build_model(c, schema), ConfigError);
  c = small_config();
  c.experts = 0;
  EXPECT_THROW(build_model(c, schema), ConfigError);
  c = small_config();
  c.importance_temperature = -1;
  EXPECT_THROW(build_model(c, schema), ConfigError);
  c = small_config();
  c.heads = 3;
  EXPECT_THROW(build_model(c, schema), ConfigError);
  EXPECT_THROW(build_model(small_config(), MeasureSchema("empty", {})), ConfigError);
}

TEST(Model, ZeroImportanceEqualsMeanPoolingVariant) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(), schema);
  const Dataset data = random_records(schema, 4, 3);
  const Matrix full = logits_of(p, small_config(), schema, data);
  const Matrix avg = logits_of(p, small_config(Variant::kTokenTransAvg), schema, data);
  EXPECT_LT((full - avg).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Model, NonzeroImportanceChangesLogits) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(), schema);
  Rng rng(4);
  p.importance->weight.value = random_matrix(16, 1, rng);
  const Dataset data = random_records(schema, 4, 3);
  const Matrix full = logits_of(p, small_config(), schema, data);
  const Matrix avg = logits_of(p, small_config(Variant::kTokenTransAvg), schema, data);
  EXPECT_GT((full - avg).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Model, BatchRowsAreIndependent) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(), schema);
  Rng rng(5);
  p.importance->weight.value = random_matrix(16, 1, rng);
  const Dataset data = random_records(schema, 5, 6);
  const Matrix batched = logits_of(p, small_config(), schema, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Matrix one = logits_of(p, small_config(), schema, Dataset{data[i]});
    EXPECT_LT((batched.row(static_cast<Index>(i)) - one).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Model, LogitsInvariantToMeasureOrder) {
  const MeasureSchema schema = desk();
  ModelConfig c = small_config();
  ModelParams p = build_model(c, schema);
  Rng rng(7);
  p.importance->weight.value = random_matrix(16, 1, rng);
  const Dataset data = random_records(schema, 3, 8);
  const Matrix reference = logits_of(p, c, schema, data);
  std::vector<std::size_t> order(schema.token_count());
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(order);
    const MeasureSchema permuted = schema.permuted(order);
    ModelParams q = build_model(c, permuted);
    q.importance = p.importance;
    const Matrix logits = logits_of(q, c, permuted, data);
    EXPECT_LT((logits - reference).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Model, NoCrossTokenDependenceWithoutTransformer) {
  const MeasureSchema schema = desk();
  ModelConfig c = small_config(Variant::kTokenMoeTim);
  ModelParams p = build_model(c, schema);
  const Dataset base = random_records(schema, 1, 9);
  auto refined = [&](const Dataset& d) {
    Tape t(false);
    const auto recs = pointers(d);
    return Matrix(forward(t, p, c, schema, recs).refined.value());
  };
  const Matrix u0 = refined(base);
  for (std::size_t j = 0; j < schema.token_count(); ++j) {
    Dataset moved = base;
    for (double& v : moved[0].values[schema.measure(j).name]) v += 0.25;
    const Matrix u1 = refined(moved);
    for (Index t = 0; t < u0.rows(); ++t) {
      const double diff = (u1.row(t) - u0.row(t)).cwiseAbs().maxCoeff();
      if (t == static_cast<Index>(j)) {
        EXPECT_GT(diff, 0.0);
      } else {
        EXPECT_EQ(diff, 0.0) << "measure " << j << " reached token " << t;
      }
    }
  }
}

TEST(Model, TransformerMixesTokens) {
  const MeasureSchema schema = desk();
  ModelConfig c = small_config();
  ModelParams p = build_model(c, schema);
  Dataset moved = random_records(schema, 1, 10);
  Tape t0(false);
  auto recs = pointers(moved);
  const Matrix before = forward(t0, p, c, schema, recs).refined.value();
  for (double& v : moved[0].values[schema.measure(0).name]) v += 0.25;
  Tape t1(false);
  recs = pointers(moved);
  const Matrix after = forward(t1, p, c, schema, recs).refined.value();
  EXPECT_GT((after.row(3) - before.row(3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Model, ParameterGroupsAreNamed) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(), schema);
  std::vector<std::string> groups;
  for (const ParamRef& r : parameters(p)) {
    if (groups.empty() || groups.back() != r.group) groups.push_back(r.group);
  }
  const std::vector<std::string> expected{
      "encoder.cortical_thickness", "encoder.nback_tfmri", "encoder.hormones",
      "encoder.task_reaction_time", "encoder.sex", "encoder.bmi_percentile",
      "cross.layer0", "cross.layer1", "moe.gate", "moe.expert0", "moe.expert1", "moe.expert2",
      "importance", "classifier"};
  EXPECT_EQ(groups, expected);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("imamoe_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripsBitForBit) {
  const MeasureSchema schema = desk();
  ModelConfig c = small_config();
  ModelParams p = build_model(c, schema);
  Rng rng(12);
  p.importance->weight.value = random_matrix(16, 1, rng);
  p.importance->bias.value(0, 0) = 1.0 / 3.0;
  TrainState state;
  state.epochs_done = 4;
  state.optim.step = 17;
  for (const ParamRef& r : parameters(p)) {
    state.optim.first_moment.push_back(random_matrix(r.param->value.rows(), r.param->value.cols(), rng));
    state.optim.second_moment.push_back(
        random_matrix(r.param->value.rows(), r.param->value.cols(), rng).cwiseAbs());
  }
  const nlohmann::json meta = {{"note", "x"}, {"subjects", 42}};
  const auto path = dir_ / "m.ckpt";
  save_checkpoint(path, p, c, schema, meta, &state);

  Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.config.to_json(), c.to_json());
  EXPECT_EQ(ck.schema.fingerprint(), schema.fingerprint());
  EXPECT_EQ(ck.metadata, meta);
  const auto a = parameters(p), b = parameters(ck.params);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].param->name, b[i].param->name);
    const Matrix& x = a[i].param->value;
    const Matrix& y = b[i].param->value;
    ASSERT_EQ(x.rows(), y.rows());
    ASSERT_EQ(x.cols(), y.cols());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
  }
  ASSERT_TRUE(ck.state);
  EXPECT_EQ(ck.state->epochs_done, 4);
  EXPECT_EQ(ck.state->optim.step, 17);
  ASSERT_EQ(ck.state->optim.second_moment.size(), state.optim.second_moment.size());
  EXPECT_EQ(ck.state->optim.second_moment.back(), state.optim.second_moment.back());

  const Dataset data = random_records(schema, 2, 13);
  EXPECT_EQ(logits_of(p, c, schema, data), logits_of(ck.params, ck.config, ck.schema, data));
}

TEST_F(CheckpointTest, RejectsGarbage) {
  const auto path = dir_ / "bad.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACHECKPOINT";
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), DataError);
}

TEST_F(CheckpointTest, RejectsTruncatedTensorData) {
  const MeasureSchema schema = desk();
  ModelParams p = build_model(small_config(), schema);
  const auto path = dir_ / "m.ckpt";
  save_checkpoint(path, p, small_config(), schema, nlohmann::json::object());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

}  // namespace
}  // namespace imamoe
