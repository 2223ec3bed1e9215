#include "imamoe/nn.hpp"

#include <cmath>

namespace imamoe {

Scalar xavier_bound(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
}

Matrix xavier_uniform(Index rows, Index cols, Rng& rng) {
  const Scalar bound = xavier_bound(cols, rows);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

LinearParams make_linear(const std::string& name, Index in, Index out, Rng& rng) {
  return LinearParams{Parameter(name + ".weight", xavier_uniform(out, in, rng)),
                      Parameter(name + ".bias", Matrix::Zero(1, out))};
}

LayerNormParams make_layer_norm(const std::string& name, Index d) {
  return LayerNormParams{Parameter(name + ".gain", Matrix::Ones(1, d)),
                         Parameter(name + ".shift", Matrix::Zero(1, d))};
}

PositionalEmbedding make_positional(const std::string& name, Index length, Index d, Rng& rng) {
  return PositionalEmbedding{Parameter(name + ".table", xavier_uniform(length, d, rng))};
}

TransformerLayerParams make_transformer_layer(const std::string& name, Index d, int heads,
                                              Rng& rng) {
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) +
                      ") must divide the model dimension (" + std::to_string(d) + ")");
  }
  TransformerLayerParams p;
  p.norm1 = make_layer_norm(name + ".norm1", d);
  p.attention.query = make_linear(name + ".attn.query", d, d, rng);
  p.attention.key = make_linear(name + ".attn.key", d, d, rng);
  p.attention.value = make_linear(name + ".attn.value", d, d, rng);
  p.attention.output = make_linear(name + ".attn.output", d, d, rng);
  p.attention.heads = heads;
  p.norm2 = make_layer_norm(name + ".norm2", d);
  p.ffn_in = make_linear(name + ".ffn.in", d, kFfnExpansion * d, rng);
  p.ffn_out = make_linear(name + ".ffn.out", kFfnExpansion * d, d, rng);
  return p;
}

Var linear(Tape& tape, Var x, LinearParams& p) {
  if (x.cols() != p.in_features()) {
    throw DimensionError(p.weight.name + ": expected " + std::to_string(p.in_features()) +
                         " input features, got " + shape_string(x.value()));
  }
  Var w = tape.parameter(p.weight);
  Var b = tape.parameter(p.bias);
  return add(matmul_nt(x, w), b);
}

Var layer_norm(Tape& tape, Var x, LayerNormParams& p) {
  return layer_norm(x, tape.parameter(p.gain), tape.parameter(p.shift));
}

Var self_attention(Tape& tape, Var x, AttentionParams& p, Index sequence_length,
                   std::vector<Matrix>* weights) {
  const Index d = x.cols();
  if (p.heads < 1 || d % p.heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(p.heads) +
                      ") must divide the model dimension (" + std::to_string(d) + ")");
  }
  if (sequence_length < 1 || x.rows() % sequence_length != 0) {
    throw DimensionError("self_attention: " + std::to_string(x.rows()) +
                         " rows do not split into sequences of length " +
                         std::to_string(sequence_length));
  }
  const Index head_dim = d / p.heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
  Var q = linear(tape, x, p.query);
  Var k = linear(tape, x, p.key);
  Var v = linear(tape, x, p.value);

  const Index sequences = x.rows() / sequence_length;
  std::vector<Var> blocks;
  blocks.reserve(static_cast<std::size_t>(sequences));
  std::vector<Var> head_outputs(static_cast<std::size_t>(p.heads));
  for (Index s = 0; s < sequences; ++s) {
    const Index row = s * sequence_length;
    for (int h = 0; h < p.heads; ++h) {
      const Index col = h * head_dim;
      Var qh = slice(q, row, sequence_length, col, head_dim);
      Var kh = slice(k, row, sequence_length, col, head_dim);
      Var vh = slice(v, row, sequence_length, col, head_dim);
      Var attn = softmax_temp(scale(matmul_nt(qh, kh), inv_sqrt), 1.0, 1);
      if (weights != nullptr) weights->push_back(attn.value());
      head_outputs[static_cast<std::size_t>(h)] = matmul(attn, vh);
    }
    blocks.push_back(p.heads == 1 ? head_outputs.front() : concat_cols(head_outputs));
  }
  Var mixed = sequences == 1 ? blocks.front() : concat_rows(blocks);
  return linear(tape, mixed, p.output);
}

Var transformer_layer(Tape& tape, Var x, TransformerLayerParams& p, Index sequence_length) {
  Var h = add(x, self_attention(tape, layer_norm(tape, x, p.norm1), p.attention, sequence_length));
  Var ff = linear(tape, gelu(linear(tape, layer_norm(tape, h, p.norm2), p.ffn_in)), p.ffn_out);
  return add(h, ff);
}

Var transformer_stack(Tape& tape, Var x, std::vector<TransformerLayerParams>& layers,
                      Index sequence_length) {
  for (auto& layer : layers) x = transformer_layer(tape, x, layer, sequence_length);
  return x;
}

void collect(LinearParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.weight);
  out.push_back(&p.bias);
}

void collect(LayerNormParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.gain);
  out.push_back(&p.shift);
}

void collect(TransformerLayerParams& p, std::vector<Parameter*>& out) {
  collect(p.norm1, out);
  collect(p.attention.query, out);
  collect(p.attention.key, out);
  collect(p.attention.value, out);
  collect(p.attention.output, out);
  collect(p.norm2, out);
  collect(p.ffn_in, out);
  collect(p.ffn_out, out);
}

}  // namespace imamoe
