#pragma once

#include <cstdint>
#include <vector>

#include "imamoe/nn.hpp"

namespace imamoe {

/// Expert_e(z) = W2 gelu(W1 z + b1) + b2.
struct ExpertParams {
  LinearParams hidden;  // [h x d]
  LinearParams output;  // [d x h]
};

struct MoEParams {
  LinearParams gate;  // [E x d]
  std::vector<ExpertParams> experts;
  Scalar temperature = 1.0;

  Index expert_count() const { return static_cast<Index>(experts.size()); }
};

/// Per-token gate rows alpha_t; every row sums to one.
struct GateRecord {
  Matrix weights;  // [rows x E]

  /// Mean gate mass per (token, expert) over a batch laid out as rows
  /// b * tokens + t. Result is [tokens x E].
  Matrix token_load(Index tokens) const;
};

/// Throws ConfigError for experts < 1 or temperature <= 0.
MoEParams make_moe(Index d, int experts, Index hidden, Scalar temperature, std::uint64_t seed);

/// alpha = softmax((z W_g^T + b_g) / tau_e), row-wise. [rows x E].
Var gate(Tape& tape, Var z, MoEParams& p);

Var expert_forward(Tape& tape, Var z, ExpertParams& p);

struct MoEOutput {
  Var tokens;  // u, same shape as z
  Var gates;   // alpha
};

/// Dense soft routing: u_t = sum_e alpha_{t,e} Expert_e(z_t).
MoEOutput moe_forward(Tape& tape, Var z, MoEParams& p);

void collect(MoEParams& p, std::vector<Parameter*>& out);

}  // namespace imamoe
