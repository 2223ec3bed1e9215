#pragma once

#include <cstdint>
#include <limits>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imamoe/schema.hpp"

namespace imamoe {

enum class Sex { kFemale, kMale, kUnknown };

std::string to_string(Sex s);
Sex parse_sex(const std::string& s);

/// One participant. Values are keyed by measure name; a missing element is
/// stored as NaN until normalization imputes it.
struct SubjectRecord {
  std::string id;
  Sex sex = Sex::kUnknown;
  int label = 0;  // 1 = case (BED), 0 = control
  std::map<std::string, std::vector<double>> values;
};

using Dataset = std::vector<SubjectRecord>;

bool is_missing(double v);
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Throws DataError naming the first measure that is absent or has the
/// wrong length, or when the label is not 0/1.
void check_record(const SubjectRecord& record, const MeasureSchema& schema);

/// Applies each measure's rule, then imputes missing elements with zero.
/// Warnings (z-score fallbacks) are appended to `warnings` when given.
SubjectRecord normalize(const SubjectRecord& record, const MeasureSchema& schema,
                        std::vector<std::string>* warnings = nullptr);

Dataset normalize(const Dataset& data, const MeasureSchema& schema,
                  std::vector<std::string>* warnings = nullptr);

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  bool stratify = false;
};

/// Indices into the dataset, each sorted ascending.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Subject-level random partition with floor(f * n) training subjects.
SplitIndices split(const Dataset& data, const SplitSpec& spec);

Dataset select(const Dataset& data, const std::vector<std::size_t>& indices);

// Subjects file: CSV with header `id,sex,label,<columns>`, one column per
// scalar measure (named after it) and `<name>_<i>` per vector element, in
// schema order. A scalar named id, sex or label uses `<name>_0`. An empty
// field is a missing value.
std::vector<std::string> csv_columns(const MeasureSchema& schema);
void write_subjects(const Dataset& data, const MeasureSchema& schema,
                    const std::filesystem::path& path);
Dataset read_subjects(const std::filesystem::path& path, const MeasureSchema& schema);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace imamoe
