#include "imamoe/model.hpp"

#include <cmath>

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kTokenAvg:
      return "token_avg";
    case Variant::kTokenMoeTim:
      return "token_moe_tim";
    case Variant::kTokenTransTim:
      return "token_trans_tim";
    case Variant::kTokenTransAvg:
      return "token_trans_avg";
    case Variant::kFlatMlp:
      return "flat_mlp";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::kFull, Variant::kTokenAvg, Variant::kTokenMoeTim,
                    Variant::kTokenTransTim, Variant::kTokenTransAvg, Variant::kFlatMlp}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "'");
}

std::vector<Variant> ablation_variants() {
  return {Variant::kTokenAvg, Variant::kTokenMoeTim, Variant::kTokenTransTim,
          Variant::kTokenTransAvg, Variant::kFull};
}

VariantParts parts_of(Variant v) {
  switch (v) {
    case Variant::kFull:
      return {true, true, true};
    case Variant::kTokenAvg:
      return {false, false, false};
    case Variant::kTokenMoeTim:
      return {false, true, true};
    case Variant::kTokenTransTim:
      return {true, false, true};
    case Variant::kTokenTransAvg:
      return {true, true, false};
    case Variant::kFlatMlp:
      return {false, false, false};
  }
  return {};
}

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("model dimension must be positive");
  if (layers < 0) throw ConfigError("transformer layer count must be >= 0");
  if (experts < 1) throw ConfigError("expert count must be >= 1");
  if (!(gate_temperature > 0.0)) throw ConfigError("gate temperature must be positive");
  if (!(importance_temperature > 0.0)) {
    throw ConfigError("importance temperature must be positive");
  }
  if (intra_layers < 0) throw ConfigError("intra-measure layer count must be >= 0");
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) +
                      ") must divide the model dimension (" + std::to_string(d) + ")");
  }
  if (intra_heads < 1 || d % intra_heads != 0) {
    throw ConfigError("intra-measure heads (" + std::to_string(intra_heads) +
                      ") must divide the model dimension (" + std::to_string(d) + ")");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"layers", layers},
          {"heads", heads},
          {"experts", experts},
          {"gate_temperature", gate_temperature},
          {"importance_temperature", importance_temperature},
          {"intra_layers", intra_layers},
          {"intra_heads", intra_heads},
          {"variant", to_string(variant)},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d = j.at("d").get<Index>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.experts = j.at("experts").get<int>();
    c.gate_temperature = j.at("gate_temperature").get<Scalar>();
    c.importance_temperature = j.at("importance_temperature").get<Scalar>();
    c.intra_layers = j.at("intra_layers").get<int>();
    c.intra_heads = j.at("intra_heads").get<int>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed model config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::vector<Index> flat_mlp_widths(Index input) {
  constexpr int kLayers = 5;
  std::vector<Index> widths{input};
  const double ratio = 2.0 / static_cast<double>(input);
  for (int i = 1; i < kLayers; ++i) {
    const auto w = static_cast<Index>(
        std::llround(static_cast<double>(input) * std::pow(ratio, static_cast<double>(i) / kLayers)));
    widths.push_back(std::max<Index>(w, 2));
  }
  widths.push_back(2);
  return widths;
}

ModelParams build_model(const ModelConfig& config, const MeasureSchema& schema) {
  return build_model(config, schema, config.seed);
}

ModelParams build_model(const ModelConfig& config, const MeasureSchema& schema,
                        std::uint64_t seed) {
  config.validate();
  if (schema.token_count() == 0) throw ConfigError("schema declares no measures");
  ModelParams p;
  if (config.variant == Variant::kFlatMlp) {
    const auto widths = flat_mlp_widths(static_cast<Index>(schema.flat_width()));
    Rng rng(derive_seed(seed, "flat_mlp"));
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      p.flat.push_back(make_linear("flat_mlp.layer" + std::to_string(i), widths[i], widths[i + 1], rng));
    }
    return p;
  }
  const VariantParts parts = parts_of(config.variant);
  p.encoders = make_encoders(schema, {config.d, config.intra_layers, config.intra_heads}, seed);
  if (parts.transformer) {
    for (int l = 0; l < config.layers; ++l) {
      const std::string name = "cross.layer" + std::to_string(l);
      Rng rng(derive_seed(seed, name));
      p.cross.push_back(make_transformer_layer(name, config.d, config.heads, rng));
    }
  }
  if (parts.moe) {
    p.moe = make_moe(config.d, config.experts, config.d, config.gate_temperature, seed);
  }
  if (parts.importance) p.importance = make_importance(config.d, config.importance_temperature);
  p.classifier = make_classifier(config.d, config.d, seed);
  return p;
}

std::vector<ParamRef> parameters(ModelParams& params) {
  std::vector<ParamRef> refs;
  auto add_group = [&refs](const std::string& group, const std::vector<Parameter*>& ps) {
    for (Parameter* p : ps) refs.push_back({group, p});
  };
  for (auto& enc : params.encoders.encoders) {
    std::vector<Parameter*> ps;
    std::visit([&ps](auto& e) { collect(e, ps); }, enc);
    add_group("encoder." + measure_name(enc), ps);
  }
  for (std::size_t l = 0; l < params.cross.size(); ++l) {
    std::vector<Parameter*> ps;
    collect(params.cross[l], ps);
    add_group("cross.layer" + std::to_string(l), ps);
  }
  if (params.moe) {
    std::vector<Parameter*> gate;
    collect(params.moe->gate, gate);
    add_group("moe.gate", gate);
    for (std::size_t e = 0; e < params.moe->experts.size(); ++e) {
      std::vector<Parameter*> ps;
      collect(params.moe->experts[e].hidden, ps);
      collect(params.moe->experts[e].output, ps);
      add_group("moe.expert" + std::to_string(e), ps);
    }
  }
  if (params.importance) {
    std::vector<Parameter*> ps;
    collect(*params.importance, ps);
    add_group("importance", ps);
  }
  if (params.classifier) {
    std::vector<Parameter*> ps;
    collect(*params.classifier, ps);
    add_group("classifier", ps);
  }
  for (auto& layer : params.flat) {
    std::vector<Parameter*> ps;
    collect(layer, ps);
    add_group("flat_mlp", ps);
  }
  return refs;
}

std::vector<const SubjectRecord*> pointers(const Dataset& data) {
  std::vector<const SubjectRecord*> out;
  out.reserve(data.size());
  for (const auto& r : data) out.push_back(&r);
  return out;
}

namespace {

ForwardResult forward_flat(Tape& tape, ModelParams& params, const MeasureSchema& schema,
                           std::span<const SubjectRecord* const> records) {
  if (params.flat.empty()) throw ConfigError("flat_mlp variant needs flat_mlp parameters");
  const auto width = static_cast<Index>(schema.flat_width());
  Matrix x(static_cast<Index>(records.size()), width);
  for (std::size_t b = 0; b < records.size(); ++b) {
    Index col = 0;
    for (const Measure& m : schema.measures()) {
      x.block(static_cast<Index>(b), col, 1, m.length) =
          measure_column(records.subspan(b, 1), m).transpose();
      col += m.length;
    }
  }
  Var h = tape.constant(std::move(x));
  for (std::size_t i = 0; i < params.flat.size(); ++i) {
    h = linear(tape, h, params.flat[i]);
    if (i + 1 < params.flat.size()) h = gelu(h);
  }
  ForwardResult r;
  r.batch = static_cast<Index>(records.size());
  r.names = schema.token_names();
  r.tokens = static_cast<Index>(r.names.size());
  r.logits = h;
  return r;
}

}  // namespace

ForwardResult forward(Tape& tape, ModelParams& params, const ModelConfig& config,
                      const MeasureSchema& schema, std::span<const SubjectRecord* const> records) {
  if (config.variant == Variant::kFlatMlp) return forward_flat(tape, params, schema, records);
  const VariantParts parts = parts_of(config.variant);
  if (parts.transformer && static_cast<int>(params.cross.size()) != config.layers) {
    throw ConfigError("variant " + to_string(config.variant) +
                      " needs the cross-modal transformer parameters");
  }
  if (parts.moe && !params.moe) {
    throw ConfigError("variant " + to_string(config.variant) + " needs MoE parameters");
  }
  if (parts.importance && !params.importance) {
    throw ConfigError("variant " + to_string(config.variant) + " needs importance parameters");
  }
  if (!params.classifier) throw ConfigError("model has no classifier parameters");

  ForwardResult r;
  TokenSequence seq = tokenize(tape, records, params.encoders, schema);
  r.batch = seq.batch;
  r.tokens = seq.token_count();
  r.names = seq.names;
  r.tokens0 = seq.tokens;
  r.mixed = parts.transformer ? transformer_stack(tape, seq.tokens, params.cross, r.tokens)
                              : seq.tokens;
  r.refined = r.mixed;
  if (parts.moe) {
    MoEOutput moe = moe_forward(tape, r.mixed, *params.moe);
    r.refined = moe.tokens;
    r.gates = moe.gates;
  }
  PoolOutput pool = parts.importance ? importance_pool(tape, r.refined, r.tokens, *params.importance)
                                     : mean_pool(tape, r.refined, r.tokens);
  r.pi = pool.pi;
  r.pooled = pool.pooled;
  r.logits = classify(tape, pool.pooled, *params.classifier);
  return r;
}

ForwardTrace trace_of(const ForwardResult& result, Index record) {
  ForwardTrace t;
  const Index T = result.tokens;
  t.logits = result.logits.value().row(record);
  t.probability = probability(t.logits)(0);
  if (!result.tokens0.valid()) return t;
  t.tokens0 = result.tokens0.value().middleRows(record * T, T);
  t.mixed = result.mixed.value().middleRows(record * T, T);
  t.refined = result.refined.value().middleRows(record * T, T);
  t.pi = result.pi.value().row(record);
  t.pooled = result.pooled.value().row(record);
  if (result.gates.valid()) t.gates = result.gates.value().middleRows(record * T, T);
  return t;
}

Var batch_loss(Tape& tape, ModelParams& params, const ModelConfig& config,
               const MeasureSchema& schema, std::span<const SubjectRecord* const> records) {
  ForwardResult r = forward(tape, params, config, schema, records);
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const SubjectRecord* rec : records) labels.push_back(rec->label);
  return cross_entropy(r.logits, labels);
}

}  // namespace imamoe
