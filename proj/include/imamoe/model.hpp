#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imamoe/dataset.hpp"
#include "imamoe/encoders.hpp"
#include "imamoe/importance.hpp"
#include "imamoe/moe.hpp"
#include "imamoe/nn.hpp"
#include "imamoe/schema.hpp"

namespace imamoe {

/// Architectures compared in the ablation study, plus the flattened MLP.
enum class Variant {
  kFull,           // tokens -> transformer -> MoE -> importance pooling
  kTokenAvg,       // tokens -> mean pooling
  kTokenMoeTim,    // tokens -> MoE -> importance pooling
  kTokenTransTim,  // tokens -> transformer -> importance pooling
  kTokenTransAvg,  // tokens -> transformer -> MoE -> mean pooling
  kFlatMlp,        // concatenated values -> 5-layer MLP
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
/// The five token-based variants, in ablation-table order.
std::vector<Variant> ablation_variants();

struct VariantParts {
  bool transformer = false;
  bool moe = false;
  bool importance = false;
};
VariantParts parts_of(Variant v);

struct ModelConfig {
  Index d = 128;
  int layers = 3;
  int heads = 1;
  int experts = 4;
  Scalar gate_temperature = 1.0;
  Scalar importance_temperature = 1.0;
  int intra_layers = 1;
  int intra_heads = 1;
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any invalid field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Only the groups the built variant uses are present.
struct ModelParams {
  EncoderParams encoders;
  std::vector<TransformerLayerParams> cross;
  std::optional<MoEParams> moe;
  std::optional<ImportanceParams> importance;
  std::optional<ClassifierParams> classifier;
  std::vector<LinearParams> flat;
};

struct ParamRef {
  std::string group;  // e.g. "encoder.hormones", "cross.layer0", "moe.expert2"
  Parameter* param;
};

/// Every parameter with its group, in a stable order.
std::vector<ParamRef> parameters(ModelParams& params);

ModelParams build_model(const ModelConfig& config, const MeasureSchema& schema);
ModelParams build_model(const ModelConfig& config, const MeasureSchema& schema,
                        std::uint64_t seed);

/// Layer widths of the flattened MLP: geometric taper from `input` to 2.
std::vector<Index> flat_mlp_widths(Index input);

/// Values of one batch's forward pass, all on the caller's tape.
struct ForwardResult {
  Index batch = 0;
  Index tokens = 0;
  std::vector<std::string> names;
  Var tokens0;  // [(B*T) x d], after tokenization
  Var mixed;    // after the cross-modal transformer (== tokens0 without it)
  Var refined;  // after the MoE (== mixed without it)
  Var gates;    // [(B*T) x E], invalid without MoE
  Var pi;       // [B x T]
  Var pooled;   // [B x d]
  Var logits;   // [B x 2]
};

ForwardResult forward(Tape& tape, ModelParams& params, const ModelConfig& config,
                      const MeasureSchema& schema, std::span<const SubjectRecord* const> records);

/// Per-record copy of the interpretable intermediate values.
struct ForwardTrace {
  Matrix tokens0;  // [T x d]
  Matrix mixed;    // [T x d]
  Matrix refined;  // [T x d]
  Matrix pi;       // [1 x T]
  Matrix pooled;   // [1 x d]
  Matrix logits;   // [1 x 2]
  double probability = 0.0;
  Matrix gates;  // [T x E], empty without MoE
};

ForwardTrace trace_of(const ForwardResult& result, Index record);

/// Mean cross-entropy of a batch under `config`.
Var batch_loss(Tape& tape, ModelParams& params, const ModelConfig& config,
               const MeasureSchema& schema, std::span<const SubjectRecord* const> records);

std::vector<const SubjectRecord*> pointers(const Dataset& data);

}  // namespace imamoe
