#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imamoe/dataset.hpp"
#include "imamoe/schema.hpp"

namespace imamoe {

/// Raw-scale distribution of every element of one measure.
struct Baseline {
  double mean = 0.0;
  double sd = 1.0;
};

/// Linear effect of a measure's signal feature on the label logit.
struct SignalTerm {
  std::string measure;
  double effect = 0.0;
  bool female_only = false;
};

/// Product of two measures' signal features.
struct InteractionTerm {
  std::string first;
  std::string second;
  double effect = 0.0;
};

// Generative model. Every element of measure m is drawn iid from its
// baseline; a measure named "sex" instead carries 1 (female) / 0 (male).
// Each measure has a signal feature
//     f_m = c_m . (x_m - mean_m) / sd_m,
// where c_m is a fixed unit-norm contrast (+1 on the first half of the
// elements, -1 on the second half, 0 on the middle element of an odd length;
// [1] for length 1), so f_m ~ N(0, 1) and survives within-subject z-scoring.
// The label is Bernoulli(sigmoid(logit)) with
//     logit = logit(prior) + sum_signals effect * [female if female_only] * f_m
//             + sum_interactions effect * f_a * f_b.
struct SyntheticSpec {
  MeasureSchema schema;
  std::size_t n_subjects = 1000;
  std::uint64_t seed = 0;
  double label_prior = 0.5;
  double female_fraction = 0.5;
  double missing_rate = 0.0;
  Baseline default_baseline;
  std::map<std::string, Baseline> baselines;
  std::vector<SignalTerm> signals;
  std::vector<InteractionTerm> interactions;

  const Baseline& baseline(const std::string& measure) const;
};

/// Parses a spec file. `"schema"` is either an inline schema object or a
/// path resolved relative to the spec file.
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j,
                                       const std::filesystem::path& base_dir = {});

/// Throws ConfigError when a signal or interaction names an unknown measure.
void validate(const SyntheticSpec& spec);

std::vector<double> signal_contrast(int length);
double signal_feature(const SyntheticSpec& spec, const Measure& measure,
                      const std::vector<double>& raw);
/// The generative logit of a (complete, raw) record.
double true_logit(const SyntheticSpec& spec, const SubjectRecord& record);

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Monte-Carlo estimate of the Bayes-optimal accuracy E[max(p, 1 - p)].
double bayes_accuracy(const SyntheticSpec& spec, std::size_t samples, std::uint64_t seed);

}  // namespace imamoe
