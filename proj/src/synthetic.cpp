#include "imamoe/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

const Baseline& SyntheticSpec::baseline(const std::string& measure) const {
  auto it = baselines.find(measure);
  return it == baselines.end() ? default_baseline : it->second;
}

void validate(const SyntheticSpec& spec) {
  auto require = [&](const std::string& name) {
    if (!spec.schema.find(name)) {
      throw ConfigError("synthetic spec names unknown measure '" + name + "'");
    }
  };
  for (const auto& s : spec.signals) require(s.measure);
  for (const auto& i : spec.interactions) {
    require(i.first);
    require(i.second);
  }
  for (const auto& [name, b] : spec.baselines) {
    require(name);
    if (!(b.sd > 0.0)) throw ConfigError("baseline sd for '" + name + "' must be positive");
  }
  if (!(spec.label_prior > 0.0 && spec.label_prior < 1.0)) {
    throw ConfigError("label_prior must lie in (0, 1)");
  }
  if (!(spec.female_fraction >= 0.0 && spec.female_fraction <= 1.0)) {
    throw ConfigError("female_fraction must lie in [0, 1]");
  }
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) {
    throw ConfigError("missing_rate must lie in [0, 1)");
  }
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir) {
  SyntheticSpec spec;
  try {
    const auto& s = j.at("schema");
    if (s.is_string()) {
      std::filesystem::path p = s.get<std::string>();
      spec.schema = load_schema(p.is_absolute() ? p : base_dir / p);
    } else {
      spec.schema = MeasureSchema::from_json(s);
    }
    spec.n_subjects = j.value("n_subjects", std::size_t{1000});
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.label_prior = j.value("label_prior", 0.5);
    spec.female_fraction = j.value("female_fraction", 0.5);
    spec.missing_rate = j.value("missing_rate", 0.0);
    if (j.contains("baseline")) {
      for (const auto& [name, b] : j.at("baseline").items()) {
        Baseline base{b.value("mean", 0.0), b.value("sd", 1.0)};
        if (name == "default") {
          spec.default_baseline = base;
        } else {
          spec.baselines[name] = base;
        }
      }
    }
    for (const auto& e : j.value("signals", nlohmann::json::array())) {
      SignalTerm t;
      t.measure = e.at("measure").get<std::string>();
      t.effect = e.at("effect").get<double>();
      t.female_only = e.value("sex", std::string("all")) == "female";
      spec.signals.push_back(t);
    }
    for (const auto& e : j.value("interactions", nlohmann::json::array())) {
      const auto names = e.at("measures").get<std::vector<std::string>>();
      if (names.size() != 2) throw ConfigError("an interaction names exactly two measures");
      spec.interactions.push_back({names[0], names[1], e.at("effect").get<double>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed synthetic spec: ") + ex.what());
  }
  validate(spec);
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synthetic spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("synthetic spec " + path.string() + ": " + ex.what());
  }
  return synthetic_spec_from_json(j, path.parent_path());
}

std::vector<double> signal_contrast(int length) {
  std::vector<double> c(static_cast<std::size_t>(length), 0.0);
  if (length == 1) {
    c[0] = 1.0;
    return c;
  }
  const int half = length / 2;
  for (int i = 0; i < half; ++i) {
    c[static_cast<std::size_t>(i)] = 1.0;
    c[static_cast<std::size_t>(length - 1 - i)] = -1.0;
  }
  const double norm = std::sqrt(2.0 * half);
  for (double& x : c) x /= norm;
  return c;
}

double signal_feature(const SyntheticSpec& spec, const Measure& measure,
                      const std::vector<double>& raw) {
  const Baseline& b = spec.baseline(measure.name);
  const auto c = signal_contrast(measure.length);
  double f = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) f += c[i] * (raw[i] - b.mean) / b.sd;
  return f;
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Draws complete raw values and the sex of one subject.
SubjectRecord draw_subject(const SyntheticSpec& spec, Rng& rng) {
  SubjectRecord r;
  r.sex = rng.bernoulli(spec.female_fraction) ? Sex::kFemale : Sex::kMale;
  for (const Measure& m : spec.schema.measures()) {
    std::vector<double> v(static_cast<std::size_t>(m.length));
    if (m.name == "sex") {
      v[0] = r.sex == Sex::kFemale ? 1.0 : 0.0;
    } else {
      const Baseline& b = spec.baseline(m.name);
      for (double& x : v) x = rng.normal(b.mean, b.sd);
    }
    r.values.emplace(m.name, std::move(v));
  }
  return r;
}

}  // namespace

double true_logit(const SyntheticSpec& spec, const SubjectRecord& record) {
  auto feature = [&](const std::string& name) {
    const Measure& m = spec.schema.measure(*spec.schema.find(name));
    return signal_feature(spec, m, record.values.at(name));
  };
  double z = logit(spec.label_prior);
  for (const auto& s : spec.signals) {
    if (s.female_only && record.sex != Sex::kFemale) continue;
    z += s.effect * feature(s.measure);
  }
  for (const auto& i : spec.interactions) z += i.effect * feature(i.first) * feature(i.second);
  return z;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(derive_seed(spec.seed, "synthetic"));
  const int width = static_cast<int>(std::to_string(spec.n_subjects).size());
  Dataset data;
  data.reserve(spec.n_subjects);
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    SubjectRecord r = draw_subject(spec, rng);
    std::ostringstream id;
    id << "S" << std::setw(width) << std::setfill('0') << i;
    r.id = id.str();
    r.label = rng.bernoulli(sigmoid(true_logit(spec, r))) ? 1 : 0;
    if (spec.missing_rate > 0.0) {
      for (auto& [name, v] : r.values) {
        if (name == "sex") continue;
        for (double& x : v) {
          if (rng.bernoulli(spec.missing_rate)) x = kMissing;
        }
      }
    }
    data.push_back(std::move(r));
  }
  return data;
}

double bayes_accuracy(const SyntheticSpec& spec, std::size_t samples, std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, "bayes"));
  double total = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double p = sigmoid(true_logit(spec, draw_subject(spec, rng)));
    total += std::max(p, 1.0 - p);
  }
  return total / static_cast<double>(samples);
}

}  // namespace imamoe
