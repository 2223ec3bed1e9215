#include "imamoe/importance.hpp"

#include "imamoe/random.hpp"

namespace imamoe {

ImportanceParams make_importance(Index d, Scalar temperature) {
  if (!(temperature > 0.0)) throw ConfigError("importance temperature must be positive");
  return ImportanceParams{Parameter("importance.weight", Matrix::Zero(d, 1)),
                          Parameter("importance.bias", Matrix::Zero(1, 1)), temperature};
}

ClassifierParams make_classifier(Index d, Index hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "classifier"));
  ClassifierParams p;
  p.hidden = make_linear("classifier.hidden", d, hidden, rng);
  p.output = make_linear("classifier.output", hidden, 2, rng);
  return p;
}

namespace {

// [B x (B * tokens)] block matrix summing each record's token rows.
Matrix block_sum(Index batch, Index tokens) {
  Matrix m = Matrix::Zero(batch, batch * tokens);
  for (Index b = 0; b < batch; ++b) m.block(b, b * tokens, 1, tokens).setOnes();
  return m;
}

Index batch_of(Var u, Index tokens) {
  if (tokens < 1 || u.rows() % tokens != 0) {
    throw DimensionError("pooling: " + std::to_string(u.rows()) + " rows do not split into " +
                         std::to_string(tokens) + " tokens per record");
  }
  return u.rows() / tokens;
}

}  // namespace

PoolOutput importance_pool(Tape& tape, Var u, Index tokens, ImportanceParams& p) {
  if (!(p.temperature > 0.0)) throw ConfigError("importance temperature must be positive");
  const Index batch = batch_of(u, tokens);
  Var beta = add(matmul(u, tape.parameter(p.weight)), tape.parameter(p.bias));
  Var pi = softmax_temp(reshape(beta, batch, tokens), p.temperature, 1);
  Var weighted = mul(u, reshape(pi, batch * tokens, 1));
  Var pooled = matmul(tape.constant(block_sum(batch, tokens)), weighted);
  return {pooled, pi};
}

PoolOutput mean_pool(Tape& tape, Var u, Index tokens) {
  const Index batch = batch_of(u, tokens);
  Var pooled = scale(matmul(tape.constant(block_sum(batch, tokens)), u),
                     1.0 / static_cast<Scalar>(tokens));
  Var pi = tape.constant(Matrix::Constant(batch, tokens, 1.0 / static_cast<Scalar>(tokens)));
  return {pooled, pi};
}

Var classify(Tape& tape, Var pooled, ClassifierParams& p) {
  return linear(tape, gelu(linear(tape, pooled, p.hidden)), p.output);
}

Eigen::VectorXd probability(const Matrix& logits) {
  if (logits.cols() != 2) throw DimensionError("probability: expected [B x 2] logits");
  // Two-class softmax, written as a logistic of the logit gap.
  return (1.0 / (1.0 + (logits.col(0) - logits.col(1)).array().exp())).matrix();
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_string(logits.value()));
  }
  std::vector<Index> picks;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("cross_entropy: label must be 0 or 1");
    picks.push_back(y);
  }
  return scale(mean(gather(log_softmax(logits), std::move(picks))), -1.0);
}

void collect(ImportanceParams& p, std::vector<Parameter*>& out) {
  out.push_back(&p.weight);
  out.push_back(&p.bias);
}

void collect(ClassifierParams& p, std::vector<Parameter*>& out) {
  collect(p.hidden, out);
  collect(p.output, out);
}

}  // namespace imamoe
