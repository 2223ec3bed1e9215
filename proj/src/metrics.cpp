#include "imamoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "imamoe/errors.hpp"

namespace imamoe {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fn += o.fn;
  tn += o.tn;
  fp += o.fp;
  return *this;
}

namespace {

std::optional<double> ratio(long num, long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json metric_value(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json("undefined");
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

MetricRow compute_metrics(const ConfusionCounts& c, std::string group) {
  if (c.tp < 0 || c.fn < 0 || c.tn < 0 || c.fp < 0) {
    throw DataError("confusion counts must be nonnegative");
  }
  MetricRow row;
  row.group = std::move(group);
  row.counts = c;
  row.accuracy = ratio(c.tp + c.tn, c.total());
  row.sensitivity = ratio(c.tp, c.tp + c.fn);
  row.specificity = ratio(c.tn, c.tn + c.fp);
  row.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return row;
}

nlohmann::json MetricRow::to_json() const {
  return {{"group", group},
          {"counts", {{"tp", counts.tp}, {"fn", counts.fn}, {"tn", counts.tn}, {"fp", counts.fp}}},
          {"accuracy", metric_value(accuracy)},
          {"sensitivity", metric_value(sensitivity)},
          {"specificity", metric_value(specificity)},
          {"f1", metric_value(f1)}};
}

std::vector<Prediction> predict(ModelParams& params, const ModelConfig& config,
                                const MeasureSchema& schema, const Dataset& data,
                                std::size_t chunk) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  const auto records = pointers(data);
  for (std::size_t at = 0; at < records.size(); at += chunk) {
    const std::size_t n = std::min(chunk, records.size() - at);
    Tape tape(false);
    ForwardResult r = forward(tape, params, config, schema,
                              std::span<const SubjectRecord* const>(records).subspan(at, n));
    for (std::size_t b = 0; b < n; ++b) {
      const ForwardTrace t = trace_of(r, static_cast<Index>(b));
      const SubjectRecord& rec = *records[at + b];
      Prediction p;
      p.id = rec.id;
      p.sex = rec.sex;
      p.label = rec.label;
      p.probability = t.probability;
      p.predicted = predict_label(t.probability);
      if (t.pi.size() > 0) p.pi = t.pi.row(0);
      p.gates = t.gates;
      out.push_back(std::move(p));
    }
  }
  return out;
}

ConfusionCounts count(const std::vector<Prediction>& predictions, std::optional<Sex> only) {
  ConfusionCounts c;
  for (const Prediction& p : predictions) {
    if (only && p.sex != *only) continue;
    if (p.label == 1) {
      (p.predicted == 1 ? c.tp : c.fn) += 1;
    } else {
      (p.predicted == 1 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

Evaluation summarize(std::vector<Prediction> predictions, std::vector<std::string> token_names) {
  Evaluation e;
  e.rows.push_back(compute_metrics(count(predictions), "overall"));
  for (auto [sex, name] : {std::pair{Sex::kMale, "male"}, std::pair{Sex::kFemale, "female"}}) {
    const ConfusionCounts c = count(predictions, sex);
    if (c.total() == 0) {
      e.notices.push_back(std::string("no ") + name + " subjects; stratum omitted");
      continue;
    }
    e.rows.push_back(compute_metrics(c, name));
  }
  if (!predictions.empty() && predictions.front().gates.size() > 0) {
    e.expert_load = Matrix::Zero(predictions.front().gates.rows(), predictions.front().gates.cols());
    for (const Prediction& p : predictions) e.expert_load += p.gates;
    e.expert_load /= static_cast<Scalar>(predictions.size());
  }
  e.predictions = std::move(predictions);
  e.token_names = std::move(token_names);
  return e;
}

Evaluation evaluate(ModelParams& params, const ModelConfig& config, const MeasureSchema& schema,
                    const Dataset& data) {
  if (data.empty()) throw DataError("evaluation set is empty");
  return summarize(predict(params, config, schema, data), schema.token_names());
}

Eigen::VectorXd mean_importance(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) return {};
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(predictions.front().pi.size());
  for (const Prediction& p : predictions) sum += p.pi.transpose();
  return sum / static_cast<double>(predictions.size());
}

const GroupImportance* ImportanceReport::group(const std::string& name) const {
  for (const auto& g : groups) {
    if (g.group == name) return &g;
  }
  return nullptr;
}

ImportanceReport importance_report(const std::vector<Prediction>& predictions,
                                   const std::vector<std::string>& tokens) {
  ImportanceReport report;
  report.tokens = tokens;
  report.baseline = 1.0 / static_cast<double>(tokens.size());
  std::vector<Prediction> male;
  std::vector<Prediction> female;
  for (const Prediction& p : predictions) {
    if (p.pi.size() != static_cast<Index>(tokens.size())) {
      throw DataError("prediction for " + p.id + " carries no per-token importance");
    }
    if (p.sex == Sex::kMale) male.push_back(p);
    if (p.sex == Sex::kFemale) female.push_back(p);
  }
  if (!predictions.empty()) report.groups.push_back({"all", predictions.size(), mean_importance(predictions)});
  if (!male.empty()) report.groups.push_back({"male", male.size(), mean_importance(male)});
  if (!female.empty()) report.groups.push_back({"female", female.size(), mean_importance(female)});

  report.order.resize(tokens.size());
  std::iota(report.order.begin(), report.order.end(), 0);
  if (!male.empty() && !female.empty()) {
    const Eigen::VectorXd diff = report.group("female")->mean_pi - report.group("male")->mean_pi;
    std::stable_sort(report.order.begin(), report.order.end(), [&diff](std::size_t a, std::size_t b) {
      return std::abs(diff(static_cast<Index>(a))) > std::abs(diff(static_cast<Index>(b)));
    });
    report.female_minus_male = diff;
  }
  return report;
}

nlohmann::json metrics_json(const Evaluation& eval, const nlohmann::json& header) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& r : eval.rows) rows.push_back(r.to_json());
  return {{"header", header},
          {"threshold", kDecisionThreshold},
          {"subjects", eval.predictions.size()},
          {"groups", rows},
          {"notices", eval.notices}};
}

void write_metrics_json(const std::filesystem::path& path, const Evaluation& eval,
                        const nlohmann::json& header) {
  auto out = open_output(path);
  out << metrics_json(eval, header).dump(2) << '\n';
}

void write_importance_csv(const std::filesystem::path& path, const ImportanceReport& report) {
  auto out = open_output(path);
  out << "token,group,mean_pi,baseline,female_minus_male\n";
  for (std::size_t t : report.order) {
    for (const GroupImportance& g : report.groups) {
      out << report.tokens[t] << ',' << g.group << ','
          << format_double(g.mean_pi(static_cast<Index>(t))) << ','
          << format_double(report.baseline) << ',';
      if (report.female_minus_male) {
        out << format_double((*report.female_minus_male)(static_cast<Index>(t)));
      }
      out << '\n';
    }
  }
}

void write_expert_load_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& tokens, const Matrix& load) {
  auto out = open_output(path);
  out << "token,expert,mean_gate_mass\n";
  for (Index t = 0; t < load.rows(); ++t) {
    for (Index e = 0; e < load.cols(); ++e) {
      out << tokens[static_cast<std::size_t>(t)] << ',' << e << ',' << format_double(load(t, e))
          << '\n';
    }
  }
}

void write_predictions_csv(const std::filesystem::path& path, const Evaluation& eval) {
  auto out = open_output(path);
  out << "id,sex,label,probability,predicted";
  const bool has_pi = !eval.predictions.empty() && eval.predictions.front().pi.size() > 0;
  if (has_pi) {
    for (const auto& name : eval.token_names) out << ",pi_" << name;
  }
  out << '\n';
  for (const Prediction& p : eval.predictions) {
    out << p.id << ',' << to_string(p.sex) << ',' << p.label << ',' << format_double(p.probability)
        << ',' << p.predicted;
    if (has_pi) {
      for (Index t = 0; t < p.pi.size(); ++t) out << ',' << format_double(p.pi(t));
    }
    out << '\n';
  }
}

}  // namespace imamoe
