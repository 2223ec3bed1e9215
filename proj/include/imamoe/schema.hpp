#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imamoe {

enum class MeasureKind { kVector, kScalar };

enum class NormRule {
  kZScore,    // within-subject z-score over the measure's own elements
  kRescale,   // multiply by a unit factor (per measure or per element)
  kRange01,   // (x - min) / (max - min)
  kNone,
};

/// Modality groups used for single-modality runs.
enum class Modality { kStructural, kFunctional, kHormonal, kBehavioral, kDemographic, kOther };

struct Measure {
  std::string name;
  MeasureKind kind = MeasureKind::kScalar;
  int length = 1;  // elements; 1 for scalars
  NormRule rule = NormRule::kNone;
  std::vector<double> factors;  // kRescale: one factor, or one per element
  double range_min = 0.0;       // kRange01
  double range_max = 1.0;
  Modality modality = Modality::kOther;

  double factor(int element) const {
    return factors.size() == 1 ? factors.front() : factors[static_cast<std::size_t>(element)];
  }
};

/// Ordered measure declarations. Token t of the model is measure t.
class MeasureSchema {
 public:
  MeasureSchema() = default;
  MeasureSchema(std::string name, std::vector<Measure> measures);

  const std::string& name() const { return name_; }
  const std::vector<Measure>& measures() const { return measures_; }
  const Measure& measure(std::size_t i) const { return measures_.at(i); }
  std::size_t token_count() const { return measures_.size(); }
  std::size_t vector_count() const;
  std::size_t scalar_count() const;
  /// Sum of element counts over all measures.
  std::size_t flat_width() const;
  std::optional<std::size_t> find(const std::string& measure) const;
  std::vector<std::string> token_names() const;

  /// Keeps only measures in the given modalities, in declaration order.
  MeasureSchema filtered(const std::vector<Modality>& keep) const;
  /// Reorders measures; `order[i]` is the old index of new measure i.
  MeasureSchema permuted(const std::vector<std::size_t>& order) const;

  nlohmann::json to_json() const;
  static MeasureSchema from_json(const nlohmann::json& j);

  /// 16 hex digits identifying the canonical JSON form.
  std::string fingerprint() const;

 private:
  void validate() const;

  std::string name_;
  std::vector<Measure> measures_;
};

MeasureSchema load_schema(const std::filesystem::path& path);
void save_schema(const MeasureSchema& schema, const std::filesystem::path& path);

std::string to_string(Modality m);
/// Accepts STR/FUN/HORM/BEH/DEMO and structural/functional/hormonal/
/// behavioral/demographic (case-insensitive).
Modality parse_modality(const std::string& s);
std::string to_string(NormRule r);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace imamoe
