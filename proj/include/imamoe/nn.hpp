#pragma once

#include <string>
#include <vector>

#include "imamoe/random.hpp"
#include "imamoe/tensor.hpp"

namespace imamoe {

/// y = x W^T + b for row-stacked inputs x [n x in].
struct LinearParams {
  Parameter weight;  // [out x in]
  Parameter bias;    // [1 x out]

  Index in_features() const { return weight.value.cols(); }
  Index out_features() const { return weight.value.rows(); }
};

struct LayerNormParams {
  Parameter gain;   // [1 x d], ones
  Parameter shift;  // [1 x d], zeros
};

/// Learnable rows p_i added element-wise to a projected sequence.
struct PositionalEmbedding {
  Parameter table;  // [length x d]
};

/// Multi-head projections. Head h owns columns [h*dh, (h+1)*dh) of the
/// query/key/value outputs and the matching input columns of `output`.
struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  int heads = 1;
};

/// Pre-norm block: x + Attn(LN1(x)), then h + FFN(LN2(h)).
struct TransformerLayerParams {
  LayerNormParams norm1;
  AttentionParams attention;
  LayerNormParams norm2;
  LinearParams ffn_in;   // [4d x d]
  LinearParams ffn_out;  // [d x 4d]
};

inline constexpr Index kFfnExpansion = 4;

// -- initialization ----------------------------------------------------------

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Scalar xavier_bound(Index fan_in, Index fan_out);

Matrix xavier_uniform(Index rows, Index cols, Rng& rng);

LinearParams make_linear(const std::string& name, Index in, Index out, Rng& rng);
LayerNormParams make_layer_norm(const std::string& name, Index d);
PositionalEmbedding make_positional(const std::string& name, Index length, Index d, Rng& rng);
/// Throws ConfigError when `heads` does not divide `d`.
TransformerLayerParams make_transformer_layer(const std::string& name, Index d, int heads,
                                              Rng& rng);

// -- forward -----------------------------------------------------------------

Var linear(Tape& tape, Var x, LinearParams& p);
Var layer_norm(Tape& tape, Var x, LayerNormParams& p);

/// Scaled dot-product self-attention. `x` stacks equal-length sequences of
/// `sequence_length` rows each; attention never crosses sequence boundaries.
/// When `weights` is given it receives one [L x L] matrix per sequence and
/// head, sequence-major.
Var self_attention(Tape& tape, Var x, AttentionParams& p, Index sequence_length,
                   std::vector<Matrix>* weights = nullptr);

Var transformer_layer(Tape& tape, Var x, TransformerLayerParams& p, Index sequence_length);

Var transformer_stack(Tape& tape, Var x, std::vector<TransformerLayerParams>& layers,
                      Index sequence_length);

/// Adds every parameter of a block to `out`.
void collect(LinearParams& p, std::vector<Parameter*>& out);
void collect(LayerNormParams& p, std::vector<Parameter*>& out);
void collect(TransformerLayerParams& p, std::vector<Parameter*>& out);

}  // namespace imamoe
