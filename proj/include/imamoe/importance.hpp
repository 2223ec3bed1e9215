#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "imamoe/nn.hpp"

namespace imamoe {

/// beta_t = w . u_t + b, pi = softmax(beta / tau_p).
struct ImportanceParams {
  Parameter weight;  // [d x 1]
  Parameter bias;    // [1 x 1]
  Scalar temperature = 1.0;
};

/// Two-layer head: logits = W2 gelu(W1 pooled + b1) + b2.
struct ClassifierParams {
  LinearParams hidden;  // [h x d]
  LinearParams output;  // [2 x h]
};

/// Zero weight and bias, so pi starts at the uniform 1/T baseline.
ImportanceParams make_importance(Index d, Scalar temperature);
ClassifierParams make_classifier(Index d, Index hidden, std::uint64_t seed);

struct PoolOutput {
  Var pooled;  // [B x d]
  Var pi;      // [B x T]
};

/// `u` is [(B * tokens) x d] with row b * tokens + t.
PoolOutput importance_pool(Tape& tape, Var u, Index tokens, ImportanceParams& p);

/// Uniform-weight pooling, the "Avg" head. pi is the constant 1/T.
PoolOutput mean_pool(Tape& tape, Var u, Index tokens);

/// [B x 2] logits.
Var classify(Tape& tape, Var pooled, ClassifierParams& p);

/// softmax(logits)[:, 1] as a column.
Eigen::VectorXd probability(const Matrix& logits);

/// Mean over the batch of -log_softmax(logits)[label]. Labels must be 0/1.
Var cross_entropy(Var logits, std::span<const int> labels);

void collect(ImportanceParams& p, std::vector<Parameter*>& out);
void collect(ClassifierParams& p, std::vector<Parameter*>& out);

}  // namespace imamoe
