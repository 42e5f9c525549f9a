#include "cdm/experiments.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <stdexcept>

namespace cdm {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::ofstream open_output(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  const fs::path path = cfg.out_dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::fixed << std::setprecision(6);
  return out;
}

void write_json(const RunConfig& cfg, const std::string& name, const json& doc) {
  auto out = open_output(cfg, name);
  out << doc.dump(2) << '\n';
}

struct LoadedRun {
  RunConfig cfg;
  Workspace workspace;
  std::unique_ptr<Model> model;
};

LoadedRun load_run(const RunConfig& cfg) {
  auto ckpt = load_checkpoint(*cfg.from_checkpoint);
  LoadedRun run;
  run.cfg = run_config_from_json(ckpt.meta, cfg);
  run.workspace = prepare_workspace(run.cfg, run.cfg.shadow);
  run.model = std::move(ckpt.model);
  run.model->bind(run.workspace.dataset, run.workspace.split.fit);
  return run;
}

void write_traits(std::ostream& out, const char* id_column, const Matrix& values,
                  const std::vector<std::string>& ids) {
  out << id_column;
  for (Eigen::Index c = 0; c < values.cols(); ++c) out << ",v_" << c + 1;
  out << '\n' << std::defaultfloat << std::setprecision(17);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << ids.at(static_cast<std::size_t>(r));
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << ',' << values(r, c);
    out << '\n';
  }
}

std::string mode_name(VectorMode mode) { return mode == VectorMode::Learner ? "learner" : "question"; }

}  // namespace

std::string shadow_mode_name(ShadowMode mode) {
  switch (mode) {
    case ShadowMode::None: return "none";
    case ShadowMode::Learner: return "learner";
    case ShadowMode::Question: return "question";
  }
  return "none";
}

ShadowMode parse_shadow_mode(const std::string& name) {
  if (name == "none") return ShadowMode::None;
  if (name == "learner") return ShadowMode::Learner;
  if (name == "question") return ShadowMode::Question;
  throw std::invalid_argument("unknown shadow mode: " + name + " (expected none, learner or question)");
}

json run_config_to_json(const RunConfig& cfg) {
  return {{"dataset_dir", cfg.dataset_dir.empty() ? std::string() : fs::absolute(cfg.dataset_dir).string()},
          {"synthetic", cfg.synthetic},
          {"synth",
           {{"learners", cfg.synth.learners},
            {"questions", cfg.synth.questions},
            {"concepts", cfg.synth.concepts},
            {"four_concept_questions", cfg.synth.four_concept_questions},
            {"correct_rate", cfg.synth.correct_rate},
            {"guess", cfg.synth.guess},
            {"discrimination_lo", cfg.synth.discrimination_lo},
            {"discrimination_hi", cfg.synth.discrimination_hi},
            {"concept_noise", cfg.synth.concept_noise},
            {"seed", cfg.synth.seed}}},
          {"min_logs", cfg.min_logs},
          {"first_attempt_only", cfg.first_attempt_only},
          {"max_learners", cfg.max_learners},
          {"test_ratio", cfg.test_ratio},
          {"val_ratio", cfg.val_ratio},
          {"seed", cfg.seed},
          {"shadow", shadow_mode_name(cfg.shadow)}};
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
  if (!j.is_object() || j.empty()) {
    throw std::runtime_error("checkpoint carries no run settings; cannot rebuild its training data");
  }
  base.dataset_dir = j.at("dataset_dir").get<std::string>();
  base.synthetic = j.at("synthetic").get<bool>();
  const auto& s = j.at("synth");
  base.synth.learners = s.at("learners").get<std::size_t>();
  base.synth.questions = s.at("questions").get<std::size_t>();
  base.synth.concepts = s.at("concepts").get<std::size_t>();
  base.synth.four_concept_questions = s.at("four_concept_questions").get<std::size_t>();
  base.synth.correct_rate = s.at("correct_rate").get<double>();
  base.synth.guess = s.at("guess").get<double>();
  base.synth.discrimination_lo = s.at("discrimination_lo").get<double>();
  base.synth.discrimination_hi = s.at("discrimination_hi").get<double>();
  base.synth.concept_noise = s.at("concept_noise").get<double>();
  base.synth.seed = s.at("seed").get<std::uint64_t>();
  base.min_logs = j.at("min_logs").get<int>();
  base.first_attempt_only = j.at("first_attempt_only").get<bool>();
  base.max_learners = j.at("max_learners").get<std::size_t>();
  base.test_ratio = j.at("test_ratio").get<double>();
  base.val_ratio = j.at("val_ratio").get<double>();
  base.seed = j.at("seed").get<std::uint64_t>();
  base.shadow = parse_shadow_mode(j.at("shadow").get<std::string>());
  return base;
}

ResponseDataset prepare_dataset(const RunConfig& cfg) {
  ResponseDataset ds;
  if (cfg.synthetic) {
    ds = synthesize_exam_dataset(cfg.synth);
  } else {
    if (cfg.dataset_dir.empty()) throw std::invalid_argument("no dataset: pass --dataset-dir or --synthetic");
    ds = load_dataset(cfg.dataset_dir / "logs.csv", cfg.dataset_dir / "q_matrix.csv");
  }
  ds = preprocess(ds, cfg.min_logs, cfg.first_attempt_only);
  if (cfg.max_learners > 0) ds = take_learners(ds, cfg.max_learners);
  return ds;
}

ModelConfig resolve_model(const RunConfig& cfg, const std::string& name) {
  ModelConfig mc = model_config_for(name);
  const auto& w = cfg.widths;
  if (w.learner_hidden) mc.learner_hidden = *w.learner_hidden;
  if (w.question_hidden1) mc.question_hidden1 = *w.question_hidden1;
  if (w.question_hidden2) mc.question_hidden2 = *w.question_hidden2;
  if (w.aggregate_dim) mc.aggregate_dim = *w.aggregate_dim;
  if (w.predictor_hidden1) mc.predictor_hidden1 = *w.predictor_hidden1;
  if (w.predictor_hidden2) mc.predictor_hidden2 = *w.predictor_hidden2;
  if (w.mirt_dim) mc.mirt_dim = *w.mirt_dim;
  if (w.ncdm_hidden1) mc.ncdm_hidden1 = *w.ncdm_hidden1;
  if (w.ncdm_hidden2) mc.ncdm_hidden2 = *w.ncdm_hidden2;
  return mc;
}

TrainedRun train_model(const RunConfig& cfg, const std::string& name, const ResponseDataset& dataset,
                       const DataSplit& split, std::uint64_t seed) {
  TrainedRun run;
  run.model = make_model(resolve_model(cfg, name), Dims{dataset.num_learners, dataset.num_questions,
                                                        dataset.num_concepts},
                         seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.adam.lr = cfg.learning_rate.value_or(run.model->config().learning_rate);
  const auto start = std::chrono::steady_clock::now();
  run.report = train(*run.model, dataset, split, tc);
  if (cfg.train.verbose) {
    std::cerr << name << ": " << run.report.epochs.size() << " epochs, best " << run.report.best_epoch << ", "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << "s\n";
  }
  return run;
}

Workspace make_workspace(const ResponseDataset& base, const RunConfig& cfg, ShadowMode shadow) {
  Workspace ws;
  ws.split = split_dataset(base.logs, cfg.test_ratio, cfg.val_ratio, cfg.seed);
  if (shadow == ShadowMode::None) {
    ws.dataset = base;
    return ws;
  }
  const std::size_t count = shadow == ShadowMode::Learner ? base.num_learners : base.num_questions;
  ws.dataset = augment_shadows(base, shadow);
  ws.split = augment_split(ws.split, shadow, count);
  return ws;
}

Workspace prepare_workspace(const RunConfig& cfg, ShadowMode shadow) {
  return make_workspace(prepare_dataset(cfg), cfg, shadow);
}

IdsEvaluation evaluate_ids(const Model& model, const ResponseDataset& dataset, const DataSplit& split,
                           VectorMode mode) {
  IdsEvaluation e;
  for (auto& g : group_identical(build_response_vectors(dataset, split.fit, mode))) {
    if (g.size() > 1) e.groups.push_back(std::move(g));
  }
  Diagnosis d = model.diagnose_all();
  e.traits = mode == VectorMode::Learner ? std::move(d.learner_traits) : std::move(d.question_params);
  e.ids = ids(e.traits, e.groups);
  return e;
}

bool has_concept_traits(const Model& model) {
  return model.kind() != ModelKind::Irt && model.kind() != ModelKind::Mirt;
}

DocRow evaluate_doc(const Model& model, const ResponseDataset& dataset, const DataSplit& split) {
  if (!has_concept_traits(model)) {
    throw std::invalid_argument(model.config().name + " has no concept-wise learner traits; DOC is undefined");
  }
  const Matrix traits = model.diagnose_all().learner_traits;
  DocRow row;
  row.model = model.config().name;
  row.doc_train = doc(traits, split.fit, dataset.q_matrix).mean;
  row.doc_test = doc(traits, split.test, dataset.q_matrix).mean;
  row.reo = reo(row.doc_train, row.doc_test);
  return row;
}

PredictionRow evaluate_prediction(const Model& model, const DataSplit& split) {
  const auto preds = model.predict(split.test);
  std::vector<int> labels;
  labels.reserve(split.test.size());
  for (const auto& log : split.test) labels.push_back(log.score);
  return {model.config().name, classification_metrics(preds, labels)};
}

PredictionRow majority_baseline(const DataSplit& split) {
  if (split.fit.empty()) throw std::invalid_argument("majority baseline needs fit logs");
  double correct = 0.0;
  for (const auto& log : split.fit) correct += log.score;
  const std::vector<double> preds(split.test.size(), correct / static_cast<double>(split.fit.size()));
  std::vector<int> labels;
  labels.reserve(split.test.size());
  for (const auto& log : split.test) labels.push_back(log.score);
  return {"majority", classification_metrics(preds, labels)};
}

std::vector<TrainReport> cmd_train(const RunConfig& cfg) {
  if (cfg.models.empty()) throw std::invalid_argument("no model selected");
  const Workspace ws = prepare_workspace(cfg, cfg.shadow);
  fs::create_directories(cfg.out_dir);
  std::vector<TrainReport> reports;
  for (const auto& name : cfg.models) {
    auto run = train_model(cfg, name, ws.dataset, ws.split, cfg.seed);
    double seconds = 0.0;
    for (const auto& e : run.report.epochs) seconds += e.seconds;
    std::cerr << name << ": trained " << run.report.epochs.size() << " epochs in " << seconds
              << "s, best epoch " << run.report.best_epoch << "\n";
    save_checkpoint(*run.model, cfg.out_dir / ("checkpoint_" + name + ".json"), run_config_to_json(cfg));
    write_report_json(run.report, cfg.out_dir / ("report_" + name + ".json"));
    write_epoch_csv(run.report, cfg.out_dir / ("epochs_" + name + ".csv"));
    reports.push_back(std::move(run.report));
  }
  return reports;
}

Rq1Result cmd_rq1(const RunConfig& cfg) {
  Rq1Result result;
  auto out_hist = [&cfg](const std::string& model, const std::string& mode, const IdsEvaluation& e) {
    fs::create_directories(cfg.out_dir);
    write_histogram_csv(distance_histogram(e.traits, e.groups, cfg.bin_width),
                        cfg.out_dir / ("hist_" + model + "_" + mode + ".csv"));
  };

  if (cfg.from_checkpoint) {
    auto run = load_run(cfg);
    if (run.cfg.shadow == ShadowMode::None) {
      throw std::runtime_error("checkpoint was not trained on shadow-augmented data; train with --shadow");
    }
    const VectorMode mode = run.cfg.shadow == ShadowMode::Learner ? VectorMode::Learner : VectorMode::Question;
    const auto e = evaluate_ids(*run.model, run.workspace.dataset, run.workspace.split, mode);
    const std::string name = run.model->config().name;
    result.runs.push_back({name, mode_name(mode), run.cfg.seed, e.ids});
    result.summary.push_back({name, mode_name(mode), e.ids, 0.0});
    out_hist(name, mode_name(mode), e);
  } else {
    if (cfg.models.empty()) throw std::invalid_argument("no model selected");
    if (cfg.repeats == 0) throw std::invalid_argument("repeats must be >= 1");
    const ResponseDataset base = prepare_dataset(cfg);
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      RunConfig rc = cfg;
      rc.seed = cfg.seed + r;
      for (const VectorMode mode : {VectorMode::Learner, VectorMode::Question}) {
        const Workspace ws =
            make_workspace(base, rc, mode == VectorMode::Learner ? ShadowMode::Learner : ShadowMode::Question);
        for (const auto& name : cfg.models) {
          auto run = train_model(rc, name, ws.dataset, ws.split, rc.seed);
          const auto e = evaluate_ids(*run.model, ws.dataset, ws.split, mode);
          result.runs.push_back({name, mode_name(mode), rc.seed, e.ids});
          if (r == 0) out_hist(name, mode_name(mode), e);
        }
      }
    }
    for (const auto& name : cfg.models) {
      for (const char* mode : {"learner", "question"}) {
        std::vector<double> values;
        for (const auto& run : result.runs) {
          if (run.model == name && run.mode == mode) values.push_back(run.ids);
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
        result.summary.push_back({name, mode, mean, sd});
      }
    }
  }

  auto ids_csv = open_output(cfg, "rq1_ids.csv");
  ids_csv << "model,mode,ids\n";
  for (const auto& s : result.summary) ids_csv << s.model << ',' << s.mode << ',' << s.mean << '\n';
  auto runs_csv = open_output(cfg, "rq1_runs.csv");
  runs_csv << "model,mode,seed,ids\n";
  for (const auto& r : result.runs) runs_csv << r.model << ',' << r.mode << ',' << r.seed << ',' << r.ids << '\n';
  for (const auto& s : result.summary) {
    std::cout << s.model << ' ' << s.mode << " IDS " << std::fixed << std::setprecision(3) << s.mean << " +- "
              << s.stddev << '\n';
  }
  return result;
}

std::vector<DocRow> cmd_rq2(const RunConfig& cfg) {
  std::vector<DocRow> rows;
  json metrics = json::array();
  auto record = [&](const DocRow& row) {
    rows.push_back(row);
    MetricsReport m;
    m.mean_doc_train = row.doc_train;
    m.mean_doc_test = row.doc_test;
    m.reo = row.reo;
    json j = metrics_to_json(m);
    j["model"] = row.model;
    metrics.push_back(std::move(j));
  };
  if (cfg.from_checkpoint) {
    auto run = load_run(cfg);
    record(evaluate_doc(*run.model, run.workspace.dataset, run.workspace.split));
  } else {
    if (cfg.models.empty()) throw std::invalid_argument("no model selected");
    const Workspace ws = prepare_workspace(cfg, ShadowMode::None);
    for (const auto& name : cfg.models) {
      const ModelKind kind = resolve_model(cfg, name).kind;
      if (kind == ModelKind::Irt || kind == ModelKind::Mirt) {
        std::cerr << name << ": skipped, DOC needs concept-wise learner traits\n";
        continue;
      }
      auto run = train_model(cfg, name, ws.dataset, ws.split, cfg.seed);
      record(evaluate_doc(*run.model, ws.dataset, ws.split));
    }
  }
  auto out = open_output(cfg, "rq2_doc.csv");
  out << "model,doc_train,doc_test,reo\n";
  for (const auto& r : rows) out << r.model << ',' << r.doc_train << ',' << r.doc_test << ',' << r.reo << '\n';
  write_json(cfg, "rq2_metrics.json", metrics);
  return rows;
}

std::vector<PredictionRow> cmd_rq3(const RunConfig& cfg) {
  std::vector<PredictionRow> rows;
  if (cfg.from_checkpoint) {
    auto run = load_run(cfg);
    rows.push_back(majority_baseline(run.workspace.split));
    rows.push_back(evaluate_prediction(*run.model, run.workspace.split));
  } else {
    if (cfg.models.empty()) throw std::invalid_argument("no model selected");
    const Workspace ws = prepare_workspace(cfg, ShadowMode::None);
    rows.push_back(majority_baseline(ws.split));
    for (const auto& name : cfg.models) {
      auto run = train_model(cfg, name, ws.dataset, ws.split, cfg.seed);
      rows.push_back(evaluate_prediction(*run.model, ws.split));
    }
  }
  auto out = open_output(cfg, "rq3_prediction.csv");
  out << "model,acc,rmse,f1\n";
  json metrics = json::array();
  for (const auto& r : rows) {
    out << r.model << ',' << r.metrics.acc << ',' << r.metrics.rmse << ',' << r.metrics.f1 << '\n';
    MetricsReport m;
    m.prediction = r.metrics;
    json j = metrics_to_json(m);
    j["model"] = r.model;
    metrics.push_back(std::move(j));
  }
  write_json(cfg, "rq3_metrics.json", metrics);
  return rows;
}

void cmd_export(const RunConfig& cfg) {
  if (!cfg.from_checkpoint) throw std::invalid_argument("export needs --from-checkpoint");
  auto run = load_run(cfg);
  const Diagnosis d = run.model->diagnose_all();
  const auto& ids = run.workspace.dataset.ids;
  {
    auto out = open_output(cfg, "learner_traits.csv");
    write_traits(out, "learner_id", d.learner_traits, ids.learners);
  }
  {
    auto out = open_output(cfg, "question_params.csv");
    write_traits(out, "question_id", d.question_params, ids.questions);
  }
  write_id_table(cfg.out_dir / "learner_ids.csv", ids.learners);
  write_id_table(cfg.out_dir / "question_ids.csv", ids.questions);
}

void cmd_synth(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_dataset(synthesize_exam_dataset(cfg.synth), cfg.out_dir / "logs.csv", cfg.out_dir / "q_matrix.csv");
}

}  // namespace cdm
