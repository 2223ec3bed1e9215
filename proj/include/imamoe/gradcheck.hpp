#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "imamoe/dataset.hpp"
#include "imamoe/model.hpp"

namespace imamoe {

struct GradcheckOptions {
  Scalar step = 1e-5;       // central-difference step
  Scalar tolerance = 1e-4;  // max relative error per group
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // entries whose true gradient is ~0 from amplifying round-off.
  Scalar floor = 1e-6;
  /// Spliced onto every parameter of the analytic pass only.
  Tape::ParameterHook analytic_hook;
};

struct GroupCheck {
  std::string group;
  std::size_t entries = 0;
  Scalar max_rel_error = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;  // each parameter group exactly once
  bool pass = true;
  double seconds = 0.0;
};

Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor);

/// Compares reverse-mode gradients of the batch loss with central finite
/// differences for every entry of every parameter.
GradcheckReport gradcheck(ModelParams& params, const ModelConfig& config,
                          const MeasureSchema& schema,
                          std::span<const SubjectRecord* const> batch,
                          const GradcheckOptions& options = {});

/// Six tokens: three short vector measures and three scalars.
MeasureSchema gradcheck_schema();
/// d = 16, two cross-modal layers, three experts.
ModelConfig gradcheck_config();
/// Normalized random records with mixed labels.
Dataset gradcheck_batch(const MeasureSchema& schema, std::size_t n, std::uint64_t seed);

/// Builds the model, gives the importance vector random values (it starts
/// at zero, which would hide its gradient path), and checks a 2-record batch.
GradcheckReport run_gradcheck(const ModelConfig& config, std::uint64_t seed,
                              const GradcheckOptions& options = {});

}  // namespace imamoe
