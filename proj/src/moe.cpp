#include "imamoe/moe.hpp"

#include "imamoe/random.hpp"

namespace imamoe {

Matrix GateRecord::token_load(Index tokens) const {
  Matrix load = Matrix::Zero(tokens, weights.cols());
  const Index batch = weights.rows() / tokens;
  for (Index b = 0; b < batch; ++b) load += weights.middleRows(b * tokens, tokens);
  return load / static_cast<Scalar>(batch);
}

MoEParams make_moe(Index d, int experts, Index hidden, Scalar temperature, std::uint64_t seed) {
  if (experts < 1) throw ConfigError("mixture of experts needs at least one expert");
  if (!(temperature > 0.0)) throw ConfigError("gate temperature must be positive");
  MoEParams p;
  p.temperature = temperature;
  Rng gate_rng(derive_seed(seed, "moe.gate"));
  p.gate = make_linear("moe.gate", d, experts, gate_rng);
  for (int e = 0; e < experts; ++e) {
    const std::string name = "moe.expert" + std::to_string(e);
    Rng rng(derive_seed(seed, name));
    ExpertParams ex;
    ex.hidden = make_linear(name + ".hidden", d, hidden, rng);
    ex.output = make_linear(name + ".output", hidden, d, rng);
    p.experts.push_back(std::move(ex));
  }
  return p;
}

Var gate(Tape& tape, Var z, MoEParams& p) {
  if (!(p.temperature > 0.0)) throw ConfigError("gate temperature must be positive");
  return softmax_temp(linear(tape, z, p.gate), p.temperature, 1);
}

Var expert_forward(Tape& tape, Var z, ExpertParams& p) {
  return linear(tape, gelu(linear(tape, z, p.hidden)), p.output);
}

MoEOutput moe_forward(Tape& tape, Var z, MoEParams& p) {
  if (p.experts.empty()) throw ConfigError("mixture of experts needs at least one expert");
  Var alpha = gate(tape, z, p);
  Var u;
  for (Index e = 0; e < p.expert_count(); ++e) {
    Var weighted = mul(expert_forward(tape, z, p.experts[static_cast<std::size_t>(e)]),
                       slice(alpha, 0, alpha.rows(), e, 1));
    u = e == 0 ? weighted : add(u, weighted);
  }
  return {u, alpha};
}

void collect(MoEParams& p, std::vector<Parameter*>& out) {
  collect(p.gate, out);
  for (auto& e : p.experts) {
    collect(e.hidden, out);
    collect(e.output, out);
  }
}

}  // namespace imamoe
