#include "imamoe/schema.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

#include "imamoe/errors.hpp"

namespace imamoe {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

NormRule parse_rule(const std::string& s) {
  const std::string r = lower(s);
  if (r == "zscore" || r == "zscore_within_subject") return NormRule::kZScore;
  if (r == "rescale" || r == "unit_rescale") return NormRule::kRescale;
  if (r == "range01" || r == "range_01") return NormRule::kRange01;
  if (r == "none") return NormRule::kNone;
  throw DataError("unknown normalization rule '" + s + "'");
}

}  // namespace

std::string to_string(NormRule r) {
  switch (r) {
    case NormRule::kZScore:
      return "zscore";
    case NormRule::kRescale:
      return "rescale";
    case NormRule::kRange01:
      return "range01";
    case NormRule::kNone:
      return "none";
  }
  return "none";
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kStructural:
      return "STR";
    case Modality::kFunctional:
      return "FUN";
    case Modality::kHormonal:
      return "HORM";
    case Modality::kBehavioral:
      return "BEH";
    case Modality::kDemographic:
      return "DEMO";
    case Modality::kOther:
      return "OTHER";
  }
  return "OTHER";
}

Modality parse_modality(const std::string& s) {
  const std::string m = lower(s);
  if (m == "str" || m == "structural") return Modality::kStructural;
  if (m == "fun" || m == "functional") return Modality::kFunctional;
  if (m == "horm" || m == "hormonal" || m == "hormones") return Modality::kHormonal;
  if (m == "beh" || m == "behavioral") return Modality::kBehavioral;
  if (m == "demo" || m == "demographic") return Modality::kDemographic;
  if (m == "other") return Modality::kOther;
  throw ConfigError("unknown modality '" + s + "'");
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

MeasureSchema::MeasureSchema(std::string name, std::vector<Measure> measures)
    : name_(std::move(name)), measures_(std::move(measures)) {
  validate();
}

void MeasureSchema::validate() const {
  std::set<std::string> seen;
  for (const Measure& m : measures_) {
    if (m.name.empty()) throw DataError("schema " + name_ + ": measure with empty name");
    if (!seen.insert(m.name).second) {
      throw DataError("schema " + name_ + ": duplicate measure '" + m.name + "'");
    }
    if (m.length < 1) throw DataError("measure '" + m.name + "': length must be >= 1");
    if (m.kind == MeasureKind::kScalar && m.length != 1) {
      throw DataError("measure '" + m.name + "': scalar measures have length 1");
    }
    if (m.rule == NormRule::kRescale) {
      if (m.factors.size() != 1 && m.factors.size() != static_cast<std::size_t>(m.length)) {
        throw DataError("measure '" + m.name + "': rescale needs one factor or one per element");
      }
    }
    if (m.rule == NormRule::kRange01 && !(m.range_max > m.range_min)) {
      throw DataError("measure '" + m.name + "': range01 needs max > min");
    }
  }
}

std::size_t MeasureSchema::vector_count() const {
  return static_cast<std::size_t>(std::count_if(measures_.begin(), measures_.end(), [](const Measure& m) {
    return m.kind == MeasureKind::kVector;
  }));
}

std::size_t MeasureSchema::scalar_count() const { return token_count() - vector_count(); }

std::size_t MeasureSchema::flat_width() const {
  std::size_t w = 0;
  for (const Measure& m : measures_) w += static_cast<std::size_t>(m.length);
  return w;
}

std::optional<std::size_t> MeasureSchema::find(const std::string& measure) const {
  for (std::size_t i = 0; i < measures_.size(); ++i) {
    if (measures_[i].name == measure) return i;
  }
  return std::nullopt;
}

std::vector<std::string> MeasureSchema::token_names() const {
  std::vector<std::string> names;
  for (const Measure& m : measures_) names.push_back(m.name);
  return names;
}

MeasureSchema MeasureSchema::filtered(const std::vector<Modality>& keep) const {
  std::vector<Measure> kept;
  for (const Measure& m : measures_) {
    if (std::find(keep.begin(), keep.end(), m.modality) != keep.end()) kept.push_back(m);
  }
  if (kept.empty()) throw ConfigError("modality filter leaves no measures in schema " + name_);
  std::string name = name_ + "[";
  for (std::size_t i = 0; i < keep.size(); ++i) name += (i ? "," : "") + to_string(keep[i]);
  return MeasureSchema(name + "]", std::move(kept));
}

MeasureSchema MeasureSchema::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != measures_.size()) throw UsageError("permutation size mismatch");
  std::vector<Measure> out;
  for (std::size_t i : order) out.push_back(measures_.at(i));
  return MeasureSchema(name_, std::move(out));
}

nlohmann::json MeasureSchema::to_json() const {
  nlohmann::json measures = nlohmann::json::array();
  for (const Measure& m : measures_) {
    nlohmann::json e;
    e["name"] = m.name;
    e["kind"] = m.kind == MeasureKind::kVector ? "vector" : "scalar";
    if (m.kind == MeasureKind::kVector) e["length"] = m.length;
    e["normalization"] = to_string(m.rule);
    if (m.rule == NormRule::kRescale) {
      if (m.factors.size() == 1) {
        e["factor"] = m.factors.front();
      } else {
        e["factors"] = m.factors;
      }
    }
    if (m.rule == NormRule::kRange01) {
      e["min"] = m.range_min;
      e["max"] = m.range_max;
    }
    e["modality"] = to_string(m.modality);
    measures.push_back(std::move(e));
  }
  return nlohmann::json{{"name", name_}, {"measures", std::move(measures)}};
}

MeasureSchema MeasureSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<Measure> measures;
    for (const auto& e : j.at("measures")) {
      Measure m;
      m.name = e.at("name").get<std::string>();
      const std::string kind = lower(e.at("kind").get<std::string>());
      if (kind == "vector") {
        m.kind = MeasureKind::kVector;
        m.length = e.at("length").get<int>();
      } else if (kind == "scalar") {
        m.kind = MeasureKind::kScalar;
        m.length = 1;
      } else {
        throw DataError("measure '" + m.name + "': unknown kind '" + kind + "'");
      }
      m.rule = parse_rule(e.value("normalization", std::string("none")));
      if (m.rule == NormRule::kRescale) {
        if (e.contains("factors")) {
          m.factors = e.at("factors").get<std::vector<double>>();
        } else {
          m.factors = {e.at("factor").get<double>()};
        }
      }
      if (m.rule == NormRule::kRange01) {
        m.range_min = e.at("min").get<double>();
        m.range_max = e.at("max").get<double>();
      }
      m.modality = parse_modality(e.value("modality", std::string("other")));
      measures.push_back(std::move(m));
    }
    return MeasureSchema(j.value("name", std::string("unnamed")), std::move(measures));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed schema: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw DataError(std::string("malformed schema: ") + ex.what());
  }
}

std::string MeasureSchema::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

MeasureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("schema file " + path.string() + ": " + ex.what());
  }
  return MeasureSchema::from_json(j);
}

void save_schema(const MeasureSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << schema.to_json().dump(2) << '\n';
}

}  // namespace imamoe
