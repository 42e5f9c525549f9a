#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdm/dataset.hpp"
#include "cdm/diffcore.hpp"
#include "cdm/models.hpp"

namespace cdm {

struct TrainConfig {
  AdamConfig adam{};
  std::size_t batch_size = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double fit_loss = 0.0;         // mean over the epoch's batches, weighted by batch size
  double validation_loss = 0.0;  // mean BCE per log on the stopping set
  double validation_acc = 0.0;
  double seconds = 0.0;          // wall clock of the optimisation pass only
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  /// True when the validation set was empty and the fit set drove early stopping.
  bool stopped_on_fit = false;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mini-batch Adam on the summed BCE over fit logs, early stopping on mean validation loss and
/// restoring the best parameters. Binds the model to `dataset` and `split.fit` first.
TrainReport train(Model& model, const ResponseDataset& dataset, const DataSplit& split, const TrainConfig& cfg);

/// Mean BCE per log.
double evaluate_loss(const Model& model, std::span<const ResponseLog> logs);

/// Reports without wall-clock fields, so equal runs produce equal files.
nlohmann::json report_to_json(const TrainReport& report);
void write_report_json(const TrainReport& report, const std::filesystem::path& path);
void write_epoch_csv(const TrainReport& report, const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// JSON container: versioned header, model kind and config, dimensions, and every parameter with its
/// Adam state. `meta` carries the run settings needed to rebuild the fit set.
void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& meta = {});

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json meta;
};

/// Throws CheckpointError on a corrupt file, a version mismatch, or when `expected` names another kind.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected = std::nullopt);

}  // namespace cdm
