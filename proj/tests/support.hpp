#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "imamoe/dataset.hpp"
#include "imamoe/random.hpp"
#include "imamoe/schema.hpp"
#include "imamoe/synthetic.hpp"
#include "imamoe/tensor.hpp"

namespace imamoe::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

/// Central differences of a scalar function of one matrix, entry by entry.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x,
                               double step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + step;
    const double plus = f(x);
    x.data()[i] = saved - step;
    const double minus = f(x);
    x.data()[i] = saved;
    g.data()[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

/// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

inline std::filesystem::path data_path(const std::string& relative) {
  return std::filesystem::path(IMAMOE_DATA_DIR) / relative;
}

/// Already-normalized records: standard normal values, alternating sex and
/// label, and a 0/1 value for a measure named "sex".
inline Dataset random_records(const MeasureSchema& schema, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord r;
    r.id = "R" + std::to_string(i);
    r.sex = i % 2 == 0 ? Sex::kFemale : Sex::kMale;
    r.label = static_cast<int>((i / 2) % 2);
    for (const Measure& m : schema.measures()) {
      std::vector<double> v(static_cast<std::size_t>(m.length));
      for (double& x : v) x = rng.normal();
      if (m.name == "sex") v[0] = r.sex == Sex::kFemale ? 1.0 : 0.0;
      r.values[m.name] = v;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// A generated, normalized copy of a synthetic spec under data/specs.
inline Dataset synthetic_records(const std::string& spec_name, std::size_t n,
                                 MeasureSchema* schema = nullptr) {
  SyntheticSpec spec = load_synthetic_spec(data_path("specs/" + spec_name));
  spec.n_subjects = n;
  if (schema) *schema = spec.schema;
  return normalize(generate_synthetic(spec), spec.schema);
}

}  // namespace imamoe::testing
