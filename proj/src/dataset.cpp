#include "imamoe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

std::string to_string(Sex s) {
  switch (s) {
    case Sex::kFemale:
      return "female";
    case Sex::kMale:
      return "male";
    case Sex::kUnknown:
      return "unknown";
  }
  return "unknown";
}

Sex parse_sex(const std::string& s) {
  if (s == "female" || s == "F" || s == "f") return Sex::kFemale;
  if (s == "male" || s == "M" || s == "m") return Sex::kMale;
  if (s.empty() || s == "unknown" || s == "U" || s == "u") return Sex::kUnknown;
  throw DataError("unrecognized sex value '" + s + "'");
}

bool is_missing(double v) { return std::isnan(v); }

void check_record(const SubjectRecord& record, const MeasureSchema& schema) {
  if (record.label != 0 && record.label != 1) {
    throw DataError("subject " + record.id + ": label must be 0 or 1, got " +
                    std::to_string(record.label));
  }
  for (const Measure& m : schema.measures()) {
    auto it = record.values.find(m.name);
    if (it == record.values.end()) {
      throw DataError("subject " + record.id + ": missing measure '" + m.name + "'");
    }
    if (it->second.size() != static_cast<std::size_t>(m.length)) {
      throw DataError("subject " + record.id + ": measure '" + m.name + "' has " +
                      std::to_string(it->second.size()) + " values, schema declares " +
                      std::to_string(m.length));
    }
  }
}

SubjectRecord normalize(const SubjectRecord& record, const MeasureSchema& schema,
                        std::vector<std::string>* warnings) {
  check_record(record, schema);
  SubjectRecord out{record.id, record.sex, record.label, {}};
  for (const Measure& m : schema.measures()) {
    const std::vector<double>& raw = record.values.at(m.name);
    std::vector<double> v(raw.size(), 0.0);
    switch (m.rule) {
      case NormRule::kZScore: {
        double sum = 0.0;
        std::size_t present = 0;
        for (double x : raw) {
          if (!is_missing(x)) {
            sum += x;
            ++present;
          }
        }
        if (present < 2) {
          if (warnings) {
            warnings->push_back("subject " + record.id + ": measure '" + m.name +
                                "' has fewer than 2 present values; set to zeros");
          }
          break;
        }
        const double mu = sum / static_cast<double>(present);
        double ss = 0.0;
        for (double x : raw) {
          if (!is_missing(x)) ss += (x - mu) * (x - mu);
        }
        const double sd = std::sqrt(ss / static_cast<double>(present));
        if (!(sd > 0.0)) {
          if (warnings) {
            warnings->push_back("subject " + record.id + ": measure '" + m.name +
                                "' is constant; set to zeros");
          }
          break;
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (!is_missing(raw[i])) v[i] = (raw[i] - mu) / sd;
        }
        break;
      }
      case NormRule::kRescale:
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (!is_missing(raw[i])) v[i] = raw[i] * m.factor(static_cast<int>(i));
        }
        break;
      case NormRule::kRange01:
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (!is_missing(raw[i])) v[i] = (raw[i] - m.range_min) / (m.range_max - m.range_min);
        }
        break;
      case NormRule::kNone:
        for (std::size_t i = 0; i < raw.size(); ++i) {
          if (!is_missing(raw[i])) v[i] = raw[i];
        }
        break;
    }
    for (double x : v) {
      if (!std::isfinite(x)) {
        throw DataError("subject " + record.id + ": measure '" + m.name +
                        "' is not finite after normalization");
      }
    }
    out.values.emplace(m.name, std::move(v));
  }
  return out;
}

Dataset normalize(const Dataset& data, const MeasureSchema& schema,
                  std::vector<std::string>* warnings) {
  Dataset out;
  out.reserve(data.size());
  for (const SubjectRecord& r : data) out.push_back(normalize(r, schema, warnings));
  return out;
}

SplitIndices split(const Dataset& data, const SplitSpec& spec) {
  const std::size_t n = data.size();
  if (n < 2) throw DataError("split needs at least 2 subjects, got " + std::to_string(n));
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  const auto n_train =
      static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n)));
  Rng rng(derive_seed(spec.seed, "split"));
  SplitIndices out;

  if (!spec.stratify) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  } else {
    // Largest-remainder allocation of the training quota across labels.
    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < n; ++i) by_label[data[i].label == 1 ? 1 : 0].push_back(i);
    double quota[2];
    std::size_t take[2];
    for (int c = 0; c < 2; ++c) {
      quota[c] = static_cast<double>(n_train) * static_cast<double>(by_label[c].size()) /
                 static_cast<double>(n);
      take[c] = static_cast<std::size_t>(std::floor(quota[c]));
    }
    if (take[0] + take[1] < n_train) {
      const int c = (quota[1] - std::floor(quota[1])) > (quota[0] - std::floor(quota[0])) ? 1 : 0;
      ++take[c];
    }
    for (int c = 0; c < 2; ++c) {
      rng.shuffle(by_label[c]);
      out.train.insert(out.train.end(), by_label[c].begin(),
                       by_label[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
      out.test.insert(out.test.end(), by_label[c].begin() + static_cast<std::ptrdiff_t>(take[c]),
                      by_label[c].end());
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Dataset select(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.at(i));
  return out;
}

namespace {

std::string column_name(const Measure& m, int element) {
  const bool reserved = m.name == "id" || m.name == "sex" || m.name == "label";
  if (m.kind == MeasureKind::kScalar && !reserved) return m.name;
  return m.name + "_" + std::to_string(element);
}

}  // namespace

std::vector<std::string> csv_columns(const MeasureSchema& schema) {
  std::vector<std::string> cols{"id", "sex", "label"};
  for (const Measure& m : schema.measures()) {
    for (int i = 0; i < m.length; ++i) cols.push_back(column_name(m, i));
  }
  return cols;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_subjects(const Dataset& data, const MeasureSchema& schema,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write subjects file " + path.string());
  const auto cols = csv_columns(schema);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const SubjectRecord& r : data) {
    check_record(r, schema);
    out << r.id << ',' << to_string(r.sex) << ',' << r.label;
    for (const Measure& m : schema.measures()) {
      for (double x : r.values.at(m.name)) {
        out << ',';
        if (!is_missing(x)) out << format_double(x);
      }
    }
    out << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

double parse_value(const std::string& field, const std::string& where) {
  const std::string f = trim(field);
  if (f.empty()) return kMissing;
  double v = 0.0;
  auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
    throw DataError(where + ": cannot parse '" + f + "' as a number");
  }
  return v;
}

}  // namespace

Dataset read_subjects(const std::filesystem::path& path, const MeasureSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open subjects file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("subjects file " + path.string() + " is empty");
  const auto header = split_csv_line(trim(line));
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[trim(header[i])] = i;
  for (const char* required : {"id", "sex", "label"}) {
    if (!column.count(required)) {
      throw DataError("subjects file " + path.string() + ": missing column '" + required + "'");
    }
  }
  // Resolve every schema element to a column before reading rows.
  std::vector<std::vector<std::size_t>> positions;
  for (const Measure& m : schema.measures()) {
    std::vector<std::size_t> pos;
    for (int i = 0; i < m.length; ++i) {
      const std::string name = column_name(m, i);
      auto it = column.find(name);
      if (it == column.end()) {
        throw DataError("subjects file " + path.string() + ": measure '" + m.name +
                        "' has no column '" + name + "'");
      }
      pos.push_back(it->second);
    }
    positions.push_back(std::move(pos));
  }

  Dataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(trim(line));
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    SubjectRecord r;
    r.id = trim(fields[column["id"]]);
    r.sex = parse_sex(trim(fields[column["sex"]]));
    const double label = parse_value(fields[column["label"]], where);
    if (label != 0.0 && label != 1.0) throw DataError(where + ": label must be 0 or 1");
    r.label = static_cast<int>(label);
    for (std::size_t m = 0; m < schema.token_count(); ++m) {
      std::vector<double> v;
      for (std::size_t p : positions[m]) v.push_back(parse_value(fields[p], where));
      r.values.emplace(schema.measure(m).name, std::move(v));
    }
    data.push_back(std::move(r));
  }
  return data;
}

}  // namespace imamoe
