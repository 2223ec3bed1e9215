#include "imamoe/encoders.hpp"

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

const std::string& measure_name(const MeasureEncoder& e) {
  return std::visit([](const auto& p) -> const std::string& { return p.measure; }, e);
}

MeasureEncoder& EncoderParams::at(const std::string& measure) {
  for (auto& e : encoders) {
    if (measure_name(e) == measure) return e;
  }
  throw DataError("no encoder for measure '" + measure + "'");
}

EncoderParams make_encoders(const MeasureSchema& schema, const EncoderConfig& config,
                            std::uint64_t seed) {
  EncoderParams out;
  for (const Measure& m : schema.measures()) {
    Rng rng(derive_seed(seed, "encoder." + m.name));
    const std::string prefix = "encoder." + m.name;
    if (m.kind == MeasureKind::kVector) {
      VectorEncoderParams v;
      v.measure = m.name;
      v.length = m.length;
      v.element = make_linear(prefix + ".element", 1, config.d, rng);
      v.positions = make_positional(prefix + ".positions", m.length, config.d, rng);
      for (int l = 0; l < config.layers; ++l) {
        v.layers.push_back(
            make_transformer_layer(prefix + ".layer" + std::to_string(l), config.d, config.heads, rng));
      }
      out.encoders.emplace_back(std::move(v));
    } else {
      ScalarEncoderParams s;
      s.measure = m.name;
      s.projection = make_linear(prefix + ".projection", 1, config.d, rng);
      out.encoders.emplace_back(std::move(s));
    }
  }
  return out;
}

Var encode_vector_measure(Tape& tape, Var x, VectorEncoderParams& p) {
  const Index length = p.length;
  if (x.cols() != 1 || x.rows() % length != 0 || x.rows() == 0) {
    throw DataError("measure '" + p.measure + "': expected sequences of " +
                    std::to_string(length) + " values, got " + shape_string(x.value()));
  }
  const Index batch = x.rows() / length;
  Var h = linear(tape, x, p.element);
  std::vector<Index> position_rows(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) position_rows[static_cast<std::size_t>(i)] = i % length;
  h = add(h, gather_rows(tape.parameter(p.positions.table), std::move(position_rows)));
  h = transformer_stack(tape, h, p.layers, length);
  if (length == 1) return h;
  Matrix pool = Matrix::Zero(batch, batch * length);
  for (Index b = 0; b < batch; ++b) {
    pool.block(b, b * length, 1, length).setConstant(1.0 / static_cast<Scalar>(length));
  }
  return matmul(tape.constant(std::move(pool)), h);
}

Var encode_scalar_measure(Tape& tape, Var s, ScalarEncoderParams& p) {
  if (s.cols() != 1) {
    throw DataError("measure '" + p.measure + "': expected one value per subject, got " +
                    shape_string(s.value()));
  }
  return linear(tape, s, p.projection);
}

Matrix measure_column(std::span<const SubjectRecord* const> records, const Measure& measure) {
  const Index length = measure.length;
  Matrix column(static_cast<Index>(records.size()) * length, 1);
  for (std::size_t b = 0; b < records.size(); ++b) {
    const SubjectRecord& r = *records[b];
    auto it = r.values.find(measure.name);
    if (it == r.values.end()) {
      throw DataError("subject " + r.id + ": missing measure '" + measure.name + "'");
    }
    if (it->second.size() != static_cast<std::size_t>(length)) {
      throw DataError("subject " + r.id + ": measure '" + measure.name + "' has " +
                      std::to_string(it->second.size()) + " values, schema declares " +
                      std::to_string(length));
    }
    for (Index i = 0; i < length; ++i) {
      column(static_cast<Index>(b) * length + i, 0) = it->second[static_cast<std::size_t>(i)];
    }
  }
  return column;
}

Var interleave_tokens(std::span<const Var> per_token) {
  if (per_token.empty()) throw DimensionError("interleave_tokens: no tokens");
  const Index tokens = static_cast<Index>(per_token.size());
  const Index batch = per_token.front().rows();
  if (tokens == 1) return per_token.front();
  Var stacked = concat_rows(per_token);  // row t * B + b
  std::vector<Index> order(static_cast<std::size_t>(batch * tokens));
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < tokens; ++t) order[static_cast<std::size_t>(b * tokens + t)] = t * batch + b;
  }
  return gather_rows(stacked, std::move(order));
}

TokenSequence tokenize(Tape& tape, std::span<const SubjectRecord* const> records,
                       EncoderParams& params, const MeasureSchema& schema) {
  if (records.empty()) throw DataError("tokenize: empty batch");
  if (schema.token_count() == 0) throw DataError("tokenize: schema has no measures");
  TokenSequence seq;
  seq.batch = static_cast<Index>(records.size());
  std::vector<Var> per_token;
  for (const Measure& m : schema.measures()) {
    Var column = tape.constant(measure_column(records, m));
    MeasureEncoder& enc = params.at(m.name);
    if (m.kind == MeasureKind::kVector) {
      auto* v = std::get_if<VectorEncoderParams>(&enc);
      if (v == nullptr || v->length != m.length) {
        throw DataError("encoder for '" + m.name + "' does not match the schema declaration");
      }
      per_token.push_back(encode_vector_measure(tape, column, *v));
    } else {
      auto* s = std::get_if<ScalarEncoderParams>(&enc);
      if (s == nullptr) {
        throw DataError("encoder for '" + m.name + "' does not match the schema declaration");
      }
      per_token.push_back(encode_scalar_measure(tape, column, *s));
    }
    seq.names.push_back(m.name);
  }
  seq.tokens = interleave_tokens(per_token);
  return seq;
}

void collect(VectorEncoderParams& p, std::vector<Parameter*>& out) {
  collect(p.element, out);
  out.push_back(&p.positions.table);
  for (auto& layer : p.layers) collect(layer, out);
}

void collect(ScalarEncoderParams& p, std::vector<Parameter*>& out) { collect(p.projection, out); }

}  // namespace imamoe
