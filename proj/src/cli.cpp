#include "imamoe/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "imamoe/checkpoint.hpp"
#include "imamoe/errors.hpp"
#include "imamoe/gradcheck.hpp"
#include "imamoe/synthetic.hpp"

namespace imamoe {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kRecipeNote =
    "optimizer and architecture hyperparameters are the package defaults unless overridden; "
    "they are not re-tuned per modality subset";

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError("cannot create output directory " + dir.string());
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " path is required");
  if (!fs::is_regular_file(p)) throw DataError(what + " file " + p.string() + " does not exist");
}

nlohmann::json split_json(const SplitSpec& s) {
  return {{"train_fraction", s.train_fraction}, {"seed", s.seed}, {"stratify", s.stratify}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.train_fraction = j.at("train_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.stratify = j.at("stratify").get<bool>();
  return s;
}

nlohmann::json report_header(const ModelConfig& model, const MeasureSchema& schema,
                             const nlohmann::json& metadata, Subset subset) {
  return {{"variant", to_string(model.variant)},
          {"schema", schema.name()},
          {"schema_fingerprint", schema.fingerprint()},
          {"tokens", schema.token_names()},
          {"subset", to_string(subset)},
          {"model", model.to_json()},
          {"train", metadata.at("train")},
          {"split", metadata.at("split")},
          {"modality_filter", metadata.at("modality_filter")},
          {"note", kRecipeNote}};
}

void write_reports(const fs::path& dir, const Evaluation& eval, const nlohmann::json& header) {
  write_metrics_json(dir / "metrics.json", eval, header);
  write_predictions_csv(dir / "predictions.csv", eval);
  if (!eval.predictions.empty() && eval.predictions.front().pi.size() > 0) {
    write_importance_csv(dir / "importance.csv",
                         importance_report(eval.predictions, eval.token_names));
  }
  if (eval.expert_load.size() > 0) {
    write_expert_load_csv(dir / "expert_load.csv", eval.token_names, eval.expert_load);
  }
}

struct PreparedData {
  MeasureSchema schema;  // effective
  Dataset all;           // normalized, file order
  Dataset train;
  Dataset test;
  std::size_t subjects = 0;
};

PreparedData prepare(const RunConfig& config, std::ostream& progress) {
  require_file(config.schema, "schema");
  require_file(config.data, "data");
  const MeasureSchema full = load_schema(config.schema);
  PreparedData p;
  p.schema = effective_schema(full, config.modality_filter);
  const Dataset raw = read_subjects(config.data, p.schema);
  std::vector<std::string> warnings;
  p.all = normalize(raw, p.schema, &warnings);
  const Dataset& data = p.all;
  if (!config.quiet) {
    for (const auto& w : warnings) progress << "warning: " << w << '\n';
  }
  const SplitIndices idx = split(data, config.split);
  p.train = select(data, idx.train);
  p.test = select(data, idx.test);
  p.subjects = data.size();
  return p;
}

nlohmann::json filter_json(const std::vector<Modality>& filter) {
  nlohmann::json j = nlohmann::json::array();
  for (Modality m : filter) j.push_back(to_string(m));
  return j;
}

std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

}  // namespace

fs::path default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("imamoe_out");
}

MeasureSchema effective_schema(const MeasureSchema& schema, const std::vector<Modality>& filter) {
  return filter.empty() ? schema : schema.filtered(filter);
}

std::string to_string(Subset s) {
  switch (s) {
    case Subset::kTest:
      return "test";
    case Subset::kTrain:
      return "train";
    case Subset::kAll:
      return "all";
  }
  return "test";
}

Subset parse_subset(const std::string& s) {
  if (s == "test") return Subset::kTest;
  if (s == "train") return Subset::kTrain;
  if (s == "all") return Subset::kAll;
  throw UsageError("subset must be test, train or all, got '" + s + "'");
}

TrainRun run_train(const RunConfig& config, std::ostream& progress) {
  config.model.validate();
  config.train.validate();
  PreparedData data = prepare(config, progress);
  if (data.test.empty()) throw DataError("split leaves no test subjects");
  ensure_dir(config.out);

  ModelParams params = build_model(config.model, data.schema);
  std::ofstream log(config.out / "train_log.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write " + (config.out / "train_log.jsonl").string());
  TrainRun run;
  auto on_epoch = [&](const EpochLog& e) {
    log << e.to_json().dump() << '\n';
    if (!config.quiet) {
      progress << "epoch " << e.epoch << "/" << config.train.epochs << "  loss "
               << std::setprecision(5) << e.mean_loss << "  lr " << e.lr << "  ("
               << std::setprecision(3) << e.wall_seconds << " s)\n";
    }
  };
  TrainResult result = train(params, config.model, data.schema, data.train, config.train, on_epoch);
  run.log = result.epochs;

  nlohmann::json metadata = {{"train", config.train.to_json()},
                             {"split", split_json(config.split)},
                             {"modality_filter", filter_json(config.modality_filter)},
                             {"subjects", data.subjects}};
  save_checkpoint(config.out / kCheckpointFile, params, config.model, data.schema, metadata,
                  &result.state);

  run.header = report_header(config.model, data.schema, metadata, Subset::kTest);
  run.evaluation = evaluate(params, config.model, data.schema, data.test);
  write_reports(config.out, run.evaluation, run.header);
  log << nlohmann::json{{"final_evaluation", metrics_json(run.evaluation, run.header)}}.dump()
      << '\n';
  if (run.evaluation.predictions.front().pi.size() > 0) {
    const auto names = data.schema.token_names();
    run.importance = importance_report(run.evaluation.predictions, names);
    run.importance_train =
        importance_report(predict(params, config.model, data.schema, data.train), names);
    run.importance_all =
        importance_report(predict(params, config.model, data.schema, data.all), names);
    write_importance_csv(config.out / "importance_train.csv", run.importance_train);
    write_importance_csv(config.out / "importance_all.csv", run.importance_all);
  }
  return run;
}

Evaluation run_eval(const fs::path& checkpoint, const fs::path& data_path,
                    const std::optional<fs::path>& schema_path, const fs::path& out, Subset subset,
                    std::ostream& progress) {
  require_file(checkpoint, "checkpoint");
  require_file(data_path, "data");
  Checkpoint ck = load_checkpoint(checkpoint);
  const nlohmann::json& meta = ck.metadata;
  std::vector<Modality> filter;
  for (const auto& m : meta.at("modality_filter")) filter.push_back(parse_modality(m.get<std::string>()));
  if (schema_path) {
    require_file(*schema_path, "schema");
    const MeasureSchema given = effective_schema(load_schema(*schema_path), filter);
    if (given.fingerprint() != ck.schema.fingerprint()) {
      throw DataError("schema " + schema_path->string() + " (fingerprint " + given.fingerprint() +
                      ") does not match the checkpoint's schema (fingerprint " +
                      ck.schema.fingerprint() + "); refusing to evaluate");
    }
  }
  std::vector<std::string> warnings;
  const Dataset all = normalize(read_subjects(data_path, ck.schema), ck.schema, &warnings);
  for (const auto& w : warnings) progress << "warning: " << w << '\n';

  Dataset chosen;
  if (subset == Subset::kAll) {
    chosen = all;
  } else {
    const auto expected = meta.at("subjects").get<std::size_t>();
    if (all.size() != expected) {
      throw DataError("data has " + std::to_string(all.size()) +
                      " subjects but the checkpoint was trained on " + std::to_string(expected) +
                      "; the recorded split cannot be reproduced (use --subset all)");
    }
    const SplitIndices idx = split(all, split_from_json(meta.at("split")));
    chosen = select(all, subset == Subset::kTest ? idx.test : idx.train);
  }
  ensure_dir(out);
  Evaluation eval = evaluate(ck.params, ck.config, ck.schema, chosen);
  write_reports(out, eval, report_header(ck.config, ck.schema, meta, subset));
  return eval;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, bool with_mlp, int threads,
                                      std::ostream& progress) {
  config.train.validate();
  const PreparedData data = prepare(config, progress);
  if (data.test.empty()) throw DataError("split leaves no test subjects");
  std::vector<Variant> variants = ablation_variants();
  if (with_mlp) variants.push_back(Variant::kFlatMlp);

  std::vector<AblationRow> rows(variants.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr failure;
  auto worker = [&]() {
    for (std::size_t i = next++; i < variants.size(); i = next++) {
      try {
        const auto start = std::chrono::steady_clock::now();
        ModelConfig model = config.model;
        model.variant = variants[i];
        ModelParams params = build_model(model, data.schema);
        train(params, model, data.schema, data.train, config.train);
        rows[i].variant = variants[i];
        rows[i].evaluation = evaluate(params, model, data.schema, data.test);
        rows[i].seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!config.quiet) {
          std::lock_guard lock(io);
          progress << "trained " << to_string(variants[i]) << " in " << std::setprecision(3)
                   << rows[i].seconds << " s\n";
        }
      } catch (...) {
        std::lock_guard lock(io);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::clamp(threads, 1, static_cast<int>(variants.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_ablation(const fs::path& dir, const std::vector<AblationRow>& rows) {
  ensure_dir(dir);
  std::ofstream csv(dir / "ablation.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write " + (dir / "ablation.csv").string());
  csv << "variant,group,accuracy,sensitivity,specificity,f1,tp,fn,tn,fp\n";
  nlohmann::json j = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json groups = nlohmann::json::array();
    for (const MetricRow& m : r.evaluation.rows) {
      csv << to_string(r.variant) << ',' << m.group << ',' << fmt_metric(m.accuracy) << ','
          << fmt_metric(m.sensitivity) << ',' << fmt_metric(m.specificity) << ','
          << fmt_metric(m.f1) << ',' << m.counts.tp << ',' << m.counts.fn << ',' << m.counts.tn
          << ',' << m.counts.fp << '\n';
      groups.push_back(m.to_json());
    }
    j.push_back({{"variant", to_string(r.variant)}, {"groups", groups}});
  }
  std::ofstream js(dir / "ablation.json", std::ios::binary);
  js << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Command-line surface

namespace {

struct Flags {
  RunConfig run;
  std::string out;
  std::string variant = "full";
  std::vector<std::string> modalities;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> split_seed;
  std::optional<std::uint64_t> train_seed;
};

void add_model_flags(CLI::App* cmd, Flags& f) {
  ModelConfig& m = f.run.model;
  cmd->add_option("--d", m.d, "Token dimension")->capture_default_str();
  cmd->add_option("--layers", m.layers, "Cross-modal transformer layers")->capture_default_str();
  cmd->add_option("--heads", m.heads, "Cross-modal attention heads")->capture_default_str();
  cmd->add_option("--experts", m.experts, "MoE experts")->capture_default_str();
  cmd->add_option("--gate-temperature", m.gate_temperature, "Expert gate temperature")
      ->capture_default_str();
  cmd->add_option("--importance-temperature", m.importance_temperature,
                  "Importance pooling temperature")
      ->capture_default_str();
  cmd->add_option("--intra-layers", m.intra_layers, "Transformer layers inside vector encoders")
      ->capture_default_str();
  cmd->add_option("--intra-heads", m.intra_heads, "Attention heads inside vector encoders")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  TrainConfig& t = f.run.train;
  cmd->add_option("--schema", f.run.schema, "Schema file")->required();
  cmd->add_option("--data", f.run.data, "Subjects CSV")->required();
  cmd->add_option("--out", f.out, "Output directory (default $IMAMOE_OUTPUT_DIR or ./imamoe_out)");
  cmd->add_option("--epochs", t.epochs)->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size)->capture_default_str();
  cmd->add_option("--lr", t.lr, "Peak learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  cmd->add_option("--warmup-epochs", t.warmup_epochs)->capture_default_str();
  cmd->add_option("--beta1", t.beta1)->capture_default_str();
  cmd->add_option("--beta2", t.beta2)->capture_default_str();
  cmd->add_option("--epsilon", t.epsilon)->capture_default_str();
  cmd->add_option("--seed", f.seed, "Seed for initialization, batch order and split");
  cmd->add_option("--split-seed", f.split_seed, "Overrides --seed for the split");
  cmd->add_option("--train-seed", f.train_seed, "Overrides --seed for batch order");
  cmd->add_option("--train-fraction", f.run.split.train_fraction)->capture_default_str();
  cmd->add_flag("--stratify", f.run.split.stratify, "Stratify the split by label");
  cmd->add_option("--modality-filter", f.modalities,
                  "Keep only these modalities (STR, FUN, HORM, BEH, DEMO)")
      ->delimiter(',');
  cmd->add_flag("--quiet", f.run.quiet, "Suppress progress output");
  add_model_flags(cmd, f);
}

void finish(Flags& f) {
  const std::uint64_t seed = f.seed.value_or(0);
  f.run.model.seed = seed;
  f.run.train.seed = f.train_seed.value_or(seed);
  f.run.split.seed = f.split_seed.value_or(seed);
  f.run.model.variant = parse_variant(f.variant);
  f.run.out = f.out.empty() ? default_output_dir() : fs::path(f.out);
  for (const auto& m : f.modalities) f.run.modality_filter.push_back(parse_modality(m));
}

void print_rows(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << std::left << std::setw(9) << "group" << std::setw(10) << "accuracy" << std::setw(13)
      << "sensitivity" << std::setw(13) << "specificity" << "f1\n";
  for (const MetricRow& r : rows) {
    out << std::setw(9) << r.group << std::setw(10) << fmt_metric(r.accuracy) << std::setw(13)
        << fmt_metric(r.sensitivity) << std::setw(13) << fmt_metric(r.specificity)
        << fmt_metric(r.f1) << '\n';
  }
  out << std::right;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal tabular classifier: measure tokens, cross-modal transformer, "
               "token-wise mixture of experts and importance pooling"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset from a spec file");
  fs::path gen_spec;
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_n;
  gen->add_option("--spec", gen_spec, "Synthetic spec file")->required();
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", gen_seed, "Overrides the spec's seed");
  gen->add_option("--n", gen_n, "Overrides the spec's subject count");

  // train
  Flags train_flags;
  auto* trn = app.add_subcommand("train", "Split, train, checkpoint and evaluate");
  add_train_flags(trn, train_flags);
  trn->add_option("--variant", train_flags.variant,
                  "full | token_avg | token_moe_tim | token_trans_tim | token_trans_avg | flat_mlp")
      ->capture_default_str();

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  fs::path ev_ckpt, ev_data;
  std::optional<fs::path> ev_schema;
  std::string ev_out, ev_subset = "test";
  evl->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  evl->add_option("--data", ev_data, "Subjects CSV")->required();
  evl->add_option("--schema", ev_schema, "Schema file; must match the checkpoint");
  evl->add_option("--out", ev_out, "Output directory");
  evl->add_option("--subset", ev_subset, "test | train | all")->capture_default_str();

  // ablate
  Flags abl_flags;
  bool with_mlp = false;
  int threads = 1;
  auto* abl = app.add_subcommand("ablate", "Train and compare the ablation variants");
  add_train_flags(abl, abl_flags);
  abl->add_flag("--with-mlp", with_mlp, "Also train the flattened-input MLP");
  abl->add_option("--threads", threads, "Variants trained concurrently")->capture_default_str();

  // gradcheck
  auto* grd = app.add_subcommand("gradcheck", "Compare gradients with finite differences");
  ModelConfig gc = gradcheck_config();
  std::uint64_t gc_seed = 0;
  GradcheckOptions gc_opts;
  std::string gc_report;
  grd->add_option("--seed", gc_seed)->capture_default_str();
  grd->add_option("--d", gc.d)->capture_default_str();
  grd->add_option("--layers", gc.layers)->capture_default_str();
  grd->add_option("--heads", gc.heads)->capture_default_str();
  grd->add_option("--experts", gc.experts)->capture_default_str();
  grd->add_option("--intra-layers", gc.intra_layers)->capture_default_str();
  grd->add_option("--tolerance", gc_opts.tolerance)->capture_default_str();
  grd->add_option("--step", gc_opts.step)->capture_default_str();
  grd->add_option("--report", gc_report, "Also write the report as JSON");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      if (app.get_subcommands().empty()) {
        err << app.help();
      }
      return 1;
    }

    if (gen->parsed()) {
      SyntheticSpec spec = load_synthetic_spec(gen_spec);
      if (gen_seed) spec.seed = *gen_seed;
      if (gen_n) spec.n_subjects = *gen_n;
      const fs::path dir = gen_out.empty() ? default_output_dir() : fs::path(gen_out);
      ensure_dir(dir);
      const Dataset data = generate_synthetic(spec);
      write_subjects(data, spec.schema, dir / "subjects.csv");
      save_schema(spec.schema, dir / "schema.json");
      long cases = 0;
      for (const auto& r : data) cases += r.label;
      out << "wrote " << data.size() << " subjects (" << cases << " cases) to "
          << (dir / "subjects.csv").string() << "\n"
          << "Monte-Carlo Bayes accuracy " << std::fixed << std::setprecision(4)
          << bayes_accuracy(spec, 20000, spec.seed) << '\n';
      return 0;
    }
    if (trn->parsed()) {
      finish(train_flags);
      const TrainRun run = run_train(train_flags.run, err);
      print_rows(out, run.evaluation.rows);
      out << "outputs in " << train_flags.run.out.string() << '\n';
      return 0;
    }
    if (evl->parsed()) {
      const fs::path dir = ev_out.empty() ? default_output_dir() : fs::path(ev_out);
      const Evaluation eval = run_eval(ev_ckpt, ev_data, ev_schema, dir, parse_subset(ev_subset), err);
      for (const auto& n : eval.notices) err << "notice: " << n << '\n';
      print_rows(out, eval.rows);
      return 0;
    }
    if (abl->parsed()) {
      finish(abl_flags);
      const auto rows = run_ablation(abl_flags.run, with_mlp, threads, err);
      write_ablation(abl_flags.run.out, rows);
      for (const auto& r : rows) {
        out << "== " << to_string(r.variant) << '\n';
        print_rows(out, r.evaluation.rows);
      }
      return 0;
    }
    if (grd->parsed()) {
      if (gc.d > 16) throw UsageError("gradcheck is meant for small models (d <= 16)");
      const GradcheckReport report = run_gradcheck(gc, gc_seed, gc_opts);
      nlohmann::json j = nlohmann::json::array();
      for (const GroupCheck& g : report.groups) {
        out << std::left << std::setw(28) << g.group << std::right << std::setw(7) << g.entries
            << "  " << std::scientific << std::setprecision(3) << g.max_rel_error << "  "
            << (g.pass ? "PASS" : "FAIL") << '\n';
        j.push_back({{"group", g.group},
                     {"entries", g.entries},
                     {"max_rel_error", g.max_rel_error},
                     {"pass", g.pass}});
      }
      out << std::defaultfloat << (report.pass ? "PASS" : "FAIL") << " (" << report.groups.size()
          << " groups, tolerance " << gc_opts.tolerance << ", " << std::setprecision(3)
          << report.seconds << " s)\n";
      if (!gc_report.empty()) {
        std::ofstream f(gc_report, std::ios::binary);
        f << nlohmann::json{{"pass", report.pass}, {"groups", j}}.dump(2) << '\n';
      }
      return report.pass ? 0 : 3;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DimensionError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: malformed JSON content: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace imamoe
