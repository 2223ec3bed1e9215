#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "imamoe/dataset.hpp"
#include "imamoe/nn.hpp"
#include "imamoe/schema.hpp"

namespace imamoe {

/// Element projection + positional rows + intra-measure transformer + mean
/// pooling. One independent instance per vector measure.
struct VectorEncoderParams {
  std::string measure;
  Index length = 1;
  LinearParams element;  // [d x 1]
  PositionalEmbedding positions;
  std::vector<TransformerLayerParams> layers;
};

/// token = W s + b, W [d x 1].
struct ScalarEncoderParams {
  std::string measure;
  LinearParams projection;
};

using MeasureEncoder = std::variant<VectorEncoderParams, ScalarEncoderParams>;

/// Per-measure encoders in schema declaration order, looked up by name.
struct EncoderParams {
  std::vector<MeasureEncoder> encoders;

  MeasureEncoder& at(const std::string& measure);
};

const std::string& measure_name(const MeasureEncoder& e);

struct EncoderConfig {
  Index d = 128;
  int layers = 1;
  int heads = 1;
};

/// Each measure's weights come from a stream derived from (seed, measure
/// name), so adding, dropping or reordering measures leaves the others'
/// initial weights unchanged.
EncoderParams make_encoders(const MeasureSchema& schema, const EncoderConfig& config,
                            std::uint64_t seed);

/// x stacks B sequences of `length` element values as [(B * length) x 1];
/// returns one token per sequence, [B x d].
Var encode_vector_measure(Tape& tape, Var x, VectorEncoderParams& p);

/// s is [B x 1]; returns [B x d].
Var encode_scalar_measure(Tape& tape, Var s, ScalarEncoderParams& p);

/// Measure tokens for a batch, row b * T + t holding token t of record b.
struct TokenSequence {
  Var tokens;
  std::vector<std::string> names;
  Index batch = 0;

  Index token_count() const { return static_cast<Index>(names.size()); }
};

/// Stacks one measure's values across records: [(B * length) x 1].
Matrix measure_column(std::span<const SubjectRecord* const> records, const Measure& measure);

/// Encodes every schema measure of every (normalized) record. Throws
/// DataError naming a measure that a record lacks.
TokenSequence tokenize(Tape& tape, std::span<const SubjectRecord* const> records,
                       EncoderParams& params, const MeasureSchema& schema);

/// Interleaves per-token [B x d] blocks into the [(B * T) x d] layout.
Var interleave_tokens(std::span<const Var> per_token);

void collect(VectorEncoderParams& p, std::vector<Parameter*>& out);
void collect(ScalarEncoderParams& p, std::vector<Parameter*>& out);

}  // namespace imamoe
