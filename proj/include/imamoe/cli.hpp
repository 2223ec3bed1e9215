#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imamoe/dataset.hpp"
#include "imamoe/metrics.hpp"
#include "imamoe/model.hpp"
#include "imamoe/train.hpp"

namespace imamoe {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "IMAMOE_OUTPUT_DIR";

std::filesystem::path default_output_dir();

struct RunConfig {
  std::filesystem::path schema;
  std::filesystem::path data;
  std::filesystem::path out;
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
  std::vector<Modality> modality_filter;  // empty keeps every measure
  bool quiet = false;
};

/// The schema actually modelled: `schema` after the modality filter.
MeasureSchema effective_schema(const MeasureSchema& schema, const std::vector<Modality>& filter);

struct TrainRun {
  std::vector<EpochLog> log;
  Evaluation evaluation;  // on the held-out subjects
  ImportanceReport importance;        // test subjects (importance.csv)
  ImportanceReport importance_train;  // importance_train.csv
  ImportanceReport importance_all;    // importance_all.csv
  nlohmann::json header;
};

/// split -> normalize -> train -> checkpoint -> evaluate, writing every
/// report into `config.out`. Progress goes to `progress` unless quiet.
TrainRun run_train(const RunConfig& config, std::ostream& progress);

enum class Subset { kTest, kTrain, kAll };
std::string to_string(Subset s);
Subset parse_subset(const std::string& s);

/// Re-evaluates a checkpoint on the subset it recorded. A schema given here
/// must match the checkpoint's fingerprint.
Evaluation run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                    const std::optional<std::filesystem::path>& schema,
                    const std::filesystem::path& out, Subset subset, std::ostream& progress);

struct AblationRow {
  Variant variant;
  Evaluation evaluation;
  double seconds = 0.0;
};

/// Trains every ablation variant (optionally plus the flattened MLP) on one
/// shared split and seed. Variants run on up to `threads` worker threads.
std::vector<AblationRow> run_ablation(const RunConfig& config, bool with_mlp, int threads,
                                      std::ostream& progress);

void write_ablation(const std::filesystem::path& dir, const std::vector<AblationRow>& rows);

/// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace imamoe
