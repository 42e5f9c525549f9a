#include "cdm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace cdm {

namespace {

using json = nlohmann::json;

double mean_bce(std::span<const double> preds, std::span<const ResponseLog> logs) {
  double total = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double p = std::clamp(preds[i], kBceClamp, 1.0 - kBceClamp);
    total -= logs[i].score == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(logs.size());
}

std::size_t param_index(const Model& model, const ParamTensor* p) {
  const auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (&params[i] == p) return i;
  }
  throw std::logic_error("gradient for a parameter the model does not own");
}

// Doubles are stored as base64 of their little-endian bytes so checkpoints round-trip bit-exactly.
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string encode_doubles(const Matrix& m) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
  std::memcpy(bytes.data(), m.data(), bytes.size());
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t chunk = (static_cast<std::uint32_t>(bytes[i]) << 16) |
                                (i + 1 < bytes.size() ? static_cast<std::uint32_t>(bytes[i + 1]) << 8 : 0u) |
                                (i + 2 < bytes.size() ? static_cast<std::uint32_t>(bytes[i + 2]) : 0u);
    out.push_back(kAlphabet[(chunk >> 18) & 63]);
    out.push_back(kAlphabet[(chunk >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kAlphabet[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kAlphabet[chunk & 63] : '=');
  }
  return out;
}

Matrix decode_doubles(const std::string& text, Eigen::Index rows, Eigen::Index cols) {
  std::array<int, 256> lookup{};
  lookup.fill(-1);
  for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw CheckpointError("corrupt checkpoint: bad tensor encoding");
  std::vector<unsigned char> bytes;
  bytes.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t chunk = 0;
    int pad = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const char c = text[i + j];
      int v = 0;
      if (c == '=') {
        ++pad;
      } else {
        v = lookup[static_cast<unsigned char>(c)];
        if (v < 0 || pad > 0) throw CheckpointError("corrupt checkpoint: bad tensor encoding");
      }
      chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
    }
    bytes.push_back(static_cast<unsigned char>(chunk >> 16));
    if (pad < 2) bytes.push_back(static_cast<unsigned char>(chunk >> 8));
    if (pad < 1) bytes.push_back(static_cast<unsigned char>(chunk));
  }
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
    throw CheckpointError("corrupt checkpoint: tensor size does not match its shape");
  }
  Matrix m(rows, cols);
  std::memcpy(m.data(), bytes.data(), bytes.size());
  return m;
}

}  // namespace

double evaluate_loss(const Model& model, std::span<const ResponseLog> logs) {
  if (logs.empty()) throw std::invalid_argument("evaluate_loss: no logs");
  const auto preds = model.predict(logs);
  return mean_bce(preds, logs);
}

TrainReport train(Model& model, const ResponseDataset& dataset, const DataSplit& split, const TrainConfig& cfg) {
  if (split.fit.empty()) throw TrainingError("training needs a non-empty fit set");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.patience == 0) throw std::invalid_argument("patience must be >= 1");

  model.bind(dataset, split.fit);
  TrainReport report;
  report.stopped_on_fit = split.validation.empty();
  const std::span<const ResponseLog> stopping =
      report.stopped_on_fit ? std::span<const ResponseLog>(split.fit) : std::span<const ResponseLog>(split.validation);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(split.fit.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ResponseLog> batch;
  batch.reserve(cfg.batch_size);

  double best = std::numeric_limits<double>::infinity();
  std::vector<ParamTensor> best_params = model.params();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const auto start = std::chrono::steady_clock::now();
    double total = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      Matrix targets(static_cast<Eigen::Index>(end - begin), 1);
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(split.fit[order[i]]);
        targets(static_cast<Eigen::Index>(i - begin), 0) = batch.back().score;
      }
      Graph graph;
      const NodeId loss = graph.bce_loss(model.forward(graph, batch), std::move(targets));
      const double value = graph.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      }
      total += value;
      for (const auto& pg : graph.backward(loss)) {
        try {
          adam_step(model.params()[param_index(model, pg.param)], pg.grad, cfg.adam);
        } catch (const NumericError& e) {
          throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_no));
        }
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.fit_loss = total / static_cast<double>(order.size());
    rec.seconds = seconds;
    const auto preds = model.predict(stopping);
    rec.validation_loss = mean_bce(preds, stopping);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < stopping.size(); ++i) {
      correct += static_cast<std::size_t>((preds[i] >= 0.5 ? 1 : 0) == stopping[i].score);
    }
    rec.validation_acc = static_cast<double>(correct) / static_cast<double>(stopping.size());
    report.epochs.push_back(rec);
    if (cfg.verbose) {
      std::cerr << model.config().name << " epoch " << epoch << " fit_loss " << rec.fit_loss << " val_loss "
                << rec.validation_loss << " val_acc " << rec.validation_acc << " (" << seconds << "s)\n";
    }

    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      report.best_epoch = epoch;
      best_params = model.params();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params() = std::move(best_params);
  report.best_validation_loss = best;
  return report;
}

nlohmann::json report_to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"fit_loss", e.fit_loss},
                      {"validation_loss", e.validation_loss},
                      {"validation_acc", e.validation_acc}});
  }
  return {{"epochs", epochs},
          {"best_epoch", report.best_epoch},
          {"best_validation_loss", report.best_validation_loss},
          {"stopped_on_fit", report.stopped_on_fit}};
}

void write_report_json(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
}

void write_epoch_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,fit_loss,validation_loss,validation_acc\n" << std::setprecision(17);
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.fit_loss << ',' << e.validation_loss << ',' << e.validation_acc << '\n';
  }
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"kind", kind_name(c.kind)},
          {"name", c.name},
          {"learning_rate", c.learning_rate},
          {"learner_hidden", c.learner_hidden},
          {"question_hidden1", c.question_hidden1},
          {"question_hidden2", c.question_hidden2},
          {"aggregate_dim", c.aggregate_dim},
          {"predictor_hidden1", c.predictor_hidden1},
          {"predictor_hidden2", c.predictor_hidden2},
          {"monotonicity", c.monotonicity},
          {"encoder", c.encoder},
          {"constrain_predictor", c.constrain_predictor},
          {"mirt_dim", c.mirt_dim},
          {"ncdm_hidden1", c.ncdm_hidden1},
          {"ncdm_hidden2", c.ncdm_hidden2},
          {"ncdm_init", c.ncdm_init == NcdmInit::Constant ? "constant" : "xavier"},
          {"ncdm_const", c.ncdm_const}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_kind(j.at("kind").get<std::string>());
  c.name = j.at("name").get<std::string>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.learner_hidden = j.at("learner_hidden").get<std::size_t>();
  c.question_hidden1 = j.at("question_hidden1").get<std::size_t>();
  c.question_hidden2 = j.at("question_hidden2").get<std::size_t>();
  c.aggregate_dim = j.at("aggregate_dim").get<std::size_t>();
  c.predictor_hidden1 = j.at("predictor_hidden1").get<std::size_t>();
  c.predictor_hidden2 = j.at("predictor_hidden2").get<std::size_t>();
  c.monotonicity = j.at("monotonicity").get<bool>();
  c.encoder = j.at("encoder").get<bool>();
  c.constrain_predictor = j.at("constrain_predictor").get<bool>();
  c.mirt_dim = j.at("mirt_dim").get<std::size_t>();
  c.ncdm_hidden1 = j.at("ncdm_hidden1").get<std::size_t>();
  c.ncdm_hidden2 = j.at("ncdm_hidden2").get<std::size_t>();
  c.ncdm_init = j.at("ncdm_init").get<std::string>() == "constant" ? NcdmInit::Constant : NcdmInit::Xavier;
  c.ncdm_const = j.at("ncdm_const").get<double>();
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& meta) {
  json params = json::array();
  for (const auto& p : model.params()) {
    json entry = {{"name", p.name},
                  {"rows", p.value.rows()},
                  {"cols", p.value.cols()},
                  {"constrained", p.constrained},
                  {"step", p.step},
                  {"value", encode_doubles(p.value)}};
    if (p.adam_m.size() != 0) {
      entry["adam_m"] = encode_doubles(p.adam_m);
      entry["adam_v"] = encode_doubles(p.adam_v);
    }
    params.push_back(std::move(entry));
  }
  const json doc = {{"format", "cdm-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"encoding", "f64le-base64"},
                    {"model_kind", kind_name(model.kind())},
                    {"config", model_config_to_json(model.config())},
                    {"dims",
                     {{"learners", model.dims().learners},
                      {"questions", model.dims().questions},
                      {"concepts", model.dims().concepts}}},
                    {"meta", meta.is_null() ? json::object() : meta},
                    {"params", params}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << doc.dump() << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "cdm-checkpoint") throw CheckpointError("not a cdm checkpoint");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::string kind_text = doc.at("model_kind").get<std::string>();
    ModelKind kind{};
    try {
      kind = parse_kind(kind_text);
    } catch (const std::invalid_argument&) {
      throw CheckpointError("unknown checkpoint kind: " + kind_text);
    }
    if (expected && *expected != kind) {
      throw CheckpointError("checkpoint holds a " + kind_text + " model, expected " +
                            std::string(kind_name(*expected)));
    }
    const ModelConfig cfg = model_config_from_json(doc.at("config"));
    const auto& d = doc.at("dims");
    const Dims dims{d.at("learners").get<std::size_t>(), d.at("questions").get<std::size_t>(),
                    d.at("concepts").get<std::size_t>()};
    LoadedCheckpoint out;
    out.model = make_model(cfg, dims, 0);
    auto& params = out.model->params();
    const auto& stored = doc.at("params");
    if (stored.size() != params.size()) throw CheckpointError("corrupt checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = stored[i];
      auto& p = params[i];
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      if (e.at("name").get<std::string>() != p.name || rows != p.value.rows() || cols != p.value.cols()) {
        throw CheckpointError("corrupt checkpoint: parameter " + p.name + " does not match the model layout");
      }
      p.value = decode_doubles(e.at("value").get<std::string>(), rows, cols);
      p.constrained = e.at("constrained").get<bool>();
      p.step = e.at("step").get<std::int64_t>();
      if (e.contains("adam_m")) {
        p.adam_m = decode_doubles(e.at("adam_m").get<std::string>(), rows, cols);
        p.adam_v = decode_doubles(e.at("adam_v").get<std::string>(), rows, cols);
      } else {
        p.adam_m.resize(0, 0);
        p.adam_v.resize(0, 0);
      }
    }
    out.meta = doc.at("meta");
    return out;
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cdm
