#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdm/dataset.hpp"
#include "cdm/metrics.hpp"
#include "cdm/models.hpp"
#include "cdm/synth.hpp"
#include "cdm/training.hpp"

namespace cdm {

struct WidthOverrides {
  std::optional<std::size_t> learner_hidden;
  std::optional<std::size_t> question_hidden1;
  std::optional<std::size_t> question_hidden2;
  std::optional<std::size_t> aggregate_dim;
  std::optional<std::size_t> predictor_hidden1;
  std::optional<std::size_t> predictor_hidden2;
  std::optional<std::size_t> mirt_dim;
  std::optional<std::size_t> ncdm_hidden1;
  std::optional<std::size_t> ncdm_hidden2;
};

struct RunConfig {
  /// Directory holding logs.csv and q_matrix.csv. Ignored when `synthetic` is set.
  std::filesystem::path dataset_dir;
  bool synthetic = false;
  SynthConfig synth{};

  int min_logs = 15;
  bool first_attempt_only = true;
  /// Keep only the first n learners after preprocessing; 0 keeps all.
  std::size_t max_learners = 0;

  double test_ratio = 0.2;
  double val_ratio = 0.1;
  std::uint64_t seed = 0;

  std::vector<std::string> models{"idcdm"};
  WidthOverrides widths{};
  /// Replaces every model's preset learning rate when set.
  std::optional<double> learning_rate;
  /// Batch size, epochs, patience and verbosity; the step size comes from the model or `learning_rate`.
  TrainConfig train{};

  /// Shadow augmentation applied by `train`, so its checkpoint can be scored for identifiability.
  ShadowMode shadow = ShadowMode::None;
  std::size_t repeats = 5;
  double bin_width = 0.05;

  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> from_checkpoint;
};

/// The subset that decides which data a model was trained on; stored in checkpoints.
nlohmann::json run_config_to_json(const RunConfig& cfg);
/// Overlays the data and split settings found in `j` onto `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

std::string shadow_mode_name(ShadowMode mode);
ShadowMode parse_shadow_mode(const std::string& name);

/// Load (or synthesize), preprocess and optionally truncate the dataset.
ResponseDataset prepare_dataset(const RunConfig& cfg);

ModelConfig resolve_model(const RunConfig& cfg, const std::string& name);

struct TrainedRun {
  std::unique_ptr<Model> model;
  TrainReport report;
};

TrainedRun train_model(const RunConfig& cfg, const std::string& name, const ResponseDataset& dataset,
                       const DataSplit& split, std::uint64_t seed);

struct Workspace {
  ResponseDataset dataset;
  DataSplit split;
};

/// Splits `base` with the seed and ratios in `cfg`, then applies the shadow copy to data and split.
Workspace make_workspace(const ResponseDataset& base, const RunConfig& cfg, ShadowMode shadow);
Workspace prepare_workspace(const RunConfig& cfg, ShadowMode shadow);

struct IdsEvaluation {
  double ids = 0.0;
  Groups groups;
  Matrix traits;
};

/// Groups entities with identical fit-set response vectors and scores the matching diagnosis rows.
IdsEvaluation evaluate_ids(const Model& model, const ResponseDataset& dataset, const DataSplit& split,
                           VectorMode mode);

struct DocRow {
  std::string model;
  double doc_train = 0.0;
  double doc_test = 0.0;
  double reo = 0.0;
};

/// DOC of the learner traits on the fit logs and on the test logs.
DocRow evaluate_doc(const Model& model, const ResponseDataset& dataset, const DataSplit& split);
/// True when the model's learner traits are indexed by knowledge concept.
bool has_concept_traits(const Model& model);

struct PredictionRow {
  std::string model;
  ClassificationMetrics metrics;
};

PredictionRow evaluate_prediction(const Model& model, const DataSplit& split);
/// Predicts the fit-set correct rate for every test log.
PredictionRow majority_baseline(const DataSplit& split);

struct IdsRun {
  std::string model;
  std::string mode;
  std::uint64_t seed = 0;
  double ids = 0.0;
};

struct IdsSummary {
  std::string model;
  std::string mode;
  double mean = 0.0;
  double stddev = 0.0;
};

struct Rq1Result {
  std::vector<IdsRun> runs;
  std::vector<IdsSummary> summary;
};

/// Trains each listed model and writes checkpoint_<model>.json, report_<model>.json and epochs_<model>.csv.
std::vector<TrainReport> cmd_train(const RunConfig& cfg);
/// Writes rq1_ids.csv (means over repeats), rq1_runs.csv and hist_<model>_<mode>.csv.
Rq1Result cmd_rq1(const RunConfig& cfg);
/// Writes rq2_doc.csv.
std::vector<DocRow> cmd_rq2(const RunConfig& cfg);
/// Writes rq3_prediction.csv, with a `majority` row first.
std::vector<PredictionRow> cmd_rq3(const RunConfig& cfg);
/// Writes learner_traits.csv, question_params.csv, learner_ids.csv and question_ids.csv.
void cmd_export(const RunConfig& cfg);
/// Writes logs.csv and q_matrix.csv for the synthetic dataset.
void cmd_synth(const RunConfig& cfg);

}  // namespace cdm
