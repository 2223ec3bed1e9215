#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imamoe/dataset.hpp"
#include "imamoe/model.hpp"

namespace imamoe {

/// Positive class = 1 (BED).
struct ConfusionCounts {
  long tp = 0;
  long fn = 0;
  long tn = 0;
  long fp = 0;

  long total() const { return tp + fn + tn + fp; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A metric with a zero denominator is nullopt ("undefined"), never 0.
struct MetricRow {
  std::string group = "overall";
  ConfusionCounts counts;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;

  nlohmann::json to_json() const;
};

MetricRow compute_metrics(const ConfusionCounts& counts, std::string group = "overall");

inline constexpr double kDecisionThreshold = 0.5;

/// Ties at the threshold are predicted positive.
inline int predict_label(double probability) { return probability >= kDecisionThreshold ? 1 : 0; }

struct Prediction {
  std::string id;
  Sex sex = Sex::kUnknown;
  int label = 0;
  double probability = 0.0;
  int predicted = 0;
  Eigen::RowVectorXd pi;  // empty for the flattened MLP
  Matrix gates;           // [T x E], empty without MoE
};

/// Inference in chunks of `chunk` records with gradients disabled.
std::vector<Prediction> predict(ModelParams& params, const ModelConfig& config,
                                const MeasureSchema& schema, const Dataset& data,
                                std::size_t chunk = 64);

ConfusionCounts count(const std::vector<Prediction>& predictions,
                      std::optional<Sex> only = std::nullopt);

struct Evaluation {
  std::vector<MetricRow> rows;  // overall, then male/female when present
  std::vector<std::string> notices;
  std::vector<Prediction> predictions;
  std::vector<std::string> token_names;
  Matrix expert_load;  // [T x E] mean gate mass, empty without MoE
};

Evaluation evaluate(ModelParams& params, const ModelConfig& config, const MeasureSchema& schema,
                    const Dataset& data);

/// Group rows from already computed predictions.
Evaluation summarize(std::vector<Prediction> predictions, std::vector<std::string> token_names);

struct GroupImportance {
  std::string group;  // all | male | female
  std::size_t subjects = 0;
  Eigen::VectorXd mean_pi;
};

struct ImportanceReport {
  std::vector<std::string> tokens;
  double baseline = 0.0;  // 1 / T
  std::vector<GroupImportance> groups;
  /// female minus male per token, present only when both strata exist.
  std::optional<Eigen::VectorXd> female_minus_male;
  /// Token indices by decreasing |female - male| (schema order otherwise).
  std::vector<std::size_t> order;

  const GroupImportance* group(const std::string& name) const;
};

ImportanceReport importance_report(const std::vector<Prediction>& predictions,
                                   const std::vector<std::string>& tokens);

/// Mean pi per token over the given predictions.
Eigen::VectorXd mean_importance(const std::vector<Prediction>& predictions);

nlohmann::json metrics_json(const Evaluation& eval, const nlohmann::json& header);
void write_metrics_json(const std::filesystem::path& path, const Evaluation& eval,
                        const nlohmann::json& header);
/// Columns: token,group,mean_pi,baseline,female_minus_male.
void write_importance_csv(const std::filesystem::path& path, const ImportanceReport& report);
/// Columns: token,expert,mean_gate_mass.
void write_expert_load_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& tokens, const Matrix& load);
/// Columns: id,sex,label,probability,predicted,pi_<token>...
void write_predictions_csv(const std::filesystem::path& path, const Evaluation& eval);

}  // namespace imamoe
