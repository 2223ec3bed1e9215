#include "imamoe/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradcheckReport gradcheck(ModelParams& params, const ModelConfig& config,
                          const MeasureSchema& schema,
                          std::span<const SubjectRecord* const> batch,
                          const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto refs = parameters(params);
  for (const ParamRef& r : refs) r.param->zero_grad();
  {
    Tape tape;
    if (options.analytic_hook) tape.set_parameter_hook(options.analytic_hook);
    tape.backward(batch_loss(tape, params, config, schema, batch));
  }
  auto loss_at = [&]() {
    Tape tape(false);
    return batch_loss(tape, params, config, schema, batch).value()(0, 0);
  };

  GradcheckReport report;
  for (const ParamRef& r : refs) {
    if (report.groups.empty() || report.groups.back().group != r.group) {
      report.groups.push_back({r.group, 0, 0.0, true});
    }
    GroupCheck& g = report.groups.back();
    Matrix& value = r.param->value;
    for (Index i = 0; i < value.size(); ++i) {
      const Scalar saved = value.data()[i];
      value.data()[i] = saved + options.step;
      const Scalar plus = loss_at();
      value.data()[i] = saved - options.step;
      const Scalar minus = loss_at();
      value.data()[i] = saved;
      const Scalar numeric = (plus - minus) / (2.0 * options.step);
      const Scalar analytic = r.param->grad.data()[i];
      g.max_rel_error = std::max(g.max_rel_error, relative_error(analytic, numeric, options.floor));
      ++g.entries;
    }
  }
  for (GroupCheck& g : report.groups) {
    g.pass = g.max_rel_error < options.tolerance;
    report.pass = report.pass && g.pass;
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

MeasureSchema gradcheck_schema() {
  std::vector<Measure> m;
  m.push_back({"thickness", MeasureKind::kVector, 3, NormRule::kZScore, {}, 0, 1, Modality::kStructural});
  m.push_back({"nback", MeasureKind::kVector, 4, NormRule::kZScore, {}, 0, 1, Modality::kFunctional});
  m.push_back({"hormones", MeasureKind::kVector, 2, NormRule::kRescale, {0.1}, 0, 1, Modality::kHormonal});
  m.push_back({"age", MeasureKind::kScalar, 1, NormRule::kRange01, {}, 9, 11, Modality::kDemographic});
  m.push_back({"sex", MeasureKind::kScalar, 1, NormRule::kNone, {}, 0, 1, Modality::kDemographic});
  m.push_back({"bmi_percentile", MeasureKind::kScalar, 1, NormRule::kRescale, {0.01}, 0, 1,
               Modality::kDemographic});
  return MeasureSchema("gradcheck", std::move(m));
}

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.d = 16;
  c.layers = 2;
  c.heads = 1;
  c.experts = 3;
  return c;
}

Dataset gradcheck_batch(const MeasureSchema& schema, std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gradcheck.batch"));
  Dataset raw;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord r;
    r.id = "G" + std::to_string(i);
    r.sex = i % 2 == 0 ? Sex::kFemale : Sex::kMale;
    r.label = static_cast<int>(i % 2);
    for (const Measure& m : schema.measures()) {
      std::vector<double> v(static_cast<std::size_t>(m.length));
      for (double& x : v) {
        x = m.rule == NormRule::kRange01 ? rng.uniform(m.range_min, m.range_max) : rng.normal(0.0, 2.0);
      }
      r.values.emplace(m.name, std::move(v));
    }
    raw.push_back(std::move(r));
  }
  return normalize(raw, schema);
}

GradcheckReport run_gradcheck(const ModelConfig& config, std::uint64_t seed,
                              const GradcheckOptions& options) {
  const MeasureSchema schema = gradcheck_schema();
  ModelConfig c = config;
  c.seed = seed;
  ModelParams params = build_model(c, schema);
  if (params.importance) {
    Rng rng(derive_seed(seed, "gradcheck.importance"));
    Matrix& w = params.importance->weight.value;
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, 0.5);
  }
  const Dataset batch = gradcheck_batch(schema, 2, seed);
  const auto records = pointers(batch);
  return gradcheck(params, c, schema, records, options);
}

}  // namespace imamoe
