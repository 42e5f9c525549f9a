#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

#include "cdm/training.hpp"
#include "grad_cases.hpp"

using namespace cdm;
using cdm::testing::toy_dataset;
using cdm::testing::toy_idcdm_config;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cdm_training_" + std::to_string(::getpid()) + "_" + name);
}

bool reports_equal(const TrainReport& a, const TrainReport& b) {
  if (a.epochs.size() != b.epochs.size() || a.best_epoch != b.best_epoch ||
      a.best_validation_loss != b.best_validation_loss || a.stopped_on_fit != b.stopped_on_fit) {
    return false;
  }
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    if (x.epoch != y.epoch || x.fit_loss != y.fit_loss || x.validation_loss != y.validation_loss ||
        x.validation_acc != y.validation_acc) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("a single correct response is learned") {
  ResponseDataset ds;
  ds.num_learners = 1;
  ds.num_questions = 1;
  ds.num_concepts = 1;
  ds.q_matrix = QMatrix(Matrix::Ones(1, 1));
  ds.logs = {{0, 0, 1, 0}};
  for (const auto& name : known_model_names()) {
    CAPTURE(name);
    const auto mc = model_config_for(name);
    auto model = make_model(mc, {1, 1, 1}, 0);
    TrainConfig cfg;
    cfg.adam.lr = mc.learning_rate;
    cfg.max_epochs = 200;
    cfg.patience = 200;
    DataSplit split;
    split.fit = ds.logs;
    model->bind(ds, split.fit);
    const double before = model->predict(ds.logs)[0];
    const auto report = train(*model, ds, split, cfg);
    CHECK(report.stopped_on_fit);
    const double after = model->predict(ds.logs)[0];
    if (mc.kind == ModelKind::Irt || mc.kind == ModelKind::Dina) {
      // Three scalars and no output bias: each Adam step moves them by about lr, so only the direction is checked.
      CHECK(after > before);
      for (std::size_t e = 1; e < report.epochs.size(); ++e) {
        CHECK(report.epochs[e].fit_loss < report.epochs[e - 1].fit_loss);
      }
    } else {
      CHECK(after > 0.9);
    }
  }
}

TEST_CASE("training is reproducible") {
  const auto ds = toy_dataset(30, 10, 3, 1);
  const auto split = split_dataset(ds.logs, 0.2, 0.1, 1);
  for (const char* name : {"idcdm", "ncdm", "dina"}) {
    CAPTURE(name);
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.batch_size = 16;
    cfg.seed = 5;
    auto a = make_model(toy_idcdm_config(name), {30, 10, 3}, 2);
    auto b = make_model(toy_idcdm_config(name), {30, 10, 3}, 2);
    const auto ra = train(*a, ds, split, cfg);
    const auto rb = train(*b, ds, split, cfg);
    CHECK(reports_equal(ra, rb));
    for (std::size_t i = 0; i < a->params().size(); ++i) CHECK(a->params()[i].value == b->params()[i].value);
    CHECK(report_to_json(ra).dump() == report_to_json(rb).dump());
  }
}

TEST_CASE("the best parameters are restored") {
  const auto ds = toy_dataset(40, 12, 3, 2);
  const auto split = split_dataset(ds.logs, 0.2, 0.3, 2);
  TrainConfig cfg;
  cfg.max_epochs = 40;
  cfg.patience = 3;
  cfg.batch_size = 8;
  cfg.adam.lr = 0.02;
  auto model = make_model(toy_idcdm_config("ncdm"), {40, 12, 3}, 1);
  const auto report = train(*model, ds, split, cfg);
  REQUIRE_FALSE(report.epochs.empty());
  double best = INFINITY;
  for (const auto& e : report.epochs) best = std::min(best, e.validation_loss);
  CHECK(report.best_validation_loss == best);
  CHECK(report.epochs[report.best_epoch - 1].validation_loss == best);
  CHECK(evaluate_loss(*model, split.validation) == doctest::Approx(best).epsilon(1e-12));
  CHECK_FALSE(report.stopped_on_fit);
  // Patience ended the run unless the last epoch was the best.
  if (report.epochs.size() < cfg.max_epochs) CHECK(report.epochs.size() == report.best_epoch + cfg.patience);
}

TEST_CASE("projection persists through training") {
  const auto ds = toy_dataset(20, 8, 3, 3);
  const auto split = split_dataset(ds.logs, 0.2, 0.1, 3);
  for (const char* name : {"idcdm", "ncdm"}) {
    auto model = make_model(toy_idcdm_config(name), {20, 8, 3}, 3);
    TrainConfig cfg;
    cfg.max_epochs = 10;
    cfg.adam.lr = 0.05;
    train(*model, ds, split, cfg);
    std::size_t constrained = 0;
    for (const auto& p : model->params()) {
      if (!p.constrained) continue;
      ++constrained;
      CHECK(p.value.minCoeff() >= 0.0);
    }
    CHECK(constrained > 0);
  }
}

TEST_CASE("train validates its input") {
  const auto ds = toy_dataset(5, 4, 2, 4);
  auto model = make_model(toy_idcdm_config("irt"), {5, 4, 2}, 0);
  CHECK_THROWS(train(*model, ds, DataSplit{}, TrainConfig{}));
  DataSplit split;
  split.fit = ds.logs;
  TrainConfig zero_batch;
  zero_batch.batch_size = 0;
  CHECK_THROWS(train(*model, ds, split, zero_batch));
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  const auto ds = toy_dataset(5, 4, 2, 4);
  auto model = make_model(toy_idcdm_config("irt"), {5, 4, 2}, 0);
  model->params()[0].value(0, 0) = std::nan("");
  DataSplit split;
  split.fit = ds.logs;
  CHECK_THROWS_WITH_AS(train(*model, ds, split, TrainConfig{}), doctest::Contains("non-finite loss at epoch 1"),
                       TrainingError);
}

TEST_CASE("evaluate_loss") {
  ResponseDataset ds;
  ds.num_learners = 2;
  ds.num_questions = 1;
  ds.num_concepts = 1;
  ds.q_matrix = QMatrix(Matrix::Ones(1, 1));
  ds.logs = {{0, 0, 1, 0}, {1, 0, 0, 0}};
  IrtModel model(toy_idcdm_config("irt"), {2, 1, 1}, 0);
  model.bind(ds, ds.logs);
  auto& theta = model.params()[0].value;
  auto& a = model.params()[1].value;
  auto& b = model.params()[2].value;

  a(0, 0) = 0.0;
  CHECK(evaluate_loss(model, ds.logs) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // Saturated predictions hit the clamp.
  a(0, 0) = 1.0;
  b(0, 0) = 0.0;
  theta(0, 0) = 1000.0;
  theta(1, 0) = -1000.0;
  CHECK(evaluate_loss(model, ds.logs) == doctest::Approx(-std::log(1.0 - kBceClamp)).epsilon(1e-9));

  // y = sigmoid(0.5) for a correct log and sigmoid(-1.2) for an incorrect one.
  theta(0, 0) = 0.5;
  theta(1, 0) = -1.2;
  const double y0 = 1.0 / (1.0 + std::exp(-0.5));
  const double y1 = 1.0 / (1.0 + std::exp(1.2));
  CHECK(evaluate_loss(model, ds.logs) == doctest::Approx(-(std::log(y0) + std::log(1.0 - y1)) / 2.0).epsilon(1e-14));

  CHECK_THROWS(evaluate_loss(model, std::vector<ResponseLog>{}));
}

TEST_CASE("checkpoint round trip") {
  const auto ds = toy_dataset(10, 6, 3, 7);
  const auto path = temp_path("ckpt.json");
  for (const auto& name : known_model_names()) {
    CAPTURE(name);
    auto model = make_model(toy_idcdm_config(name), {10, 6, 3}, 4);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    DataSplit split;
    split.fit = ds.logs;
    train(*model, ds, split, cfg);
    nlohmann::json meta{{"note", "x"}};
    save_checkpoint(*model, path, meta);
    auto loaded = load_checkpoint(path, model->kind());
    CHECK(loaded.meta == meta);
    CHECK(loaded.model->config().name == name);
    REQUIRE(loaded.model->params().size() == model->params().size());
    for (std::size_t i = 0; i < model->params().size(); ++i) {
      const auto& p = model->params()[i];
      const auto& q = loaded.model->params()[i];
      CHECK(p.name == q.name);
      CHECK(p.value == q.value);
      CHECK(p.adam_m == q.adam_m);
      CHECK(p.adam_v == q.adam_v);
      CHECK(p.step == q.step);
      CHECK(p.constrained == q.constrained);
    }
    loaded.model->bind(ds, ds.logs);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> li(0, 9), qi(0, 5);
    std::vector<ResponseLog> pairs;
    for (int i = 0; i < 100; ++i) pairs.push_back({li(rng), qi(rng), 0, 0});
    CHECK(loaded.model->predict(pairs) == model->predict(pairs));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  const auto path = temp_path("bad.json");
  auto model = make_model(toy_idcdm_config("ncdm"), {4, 3, 2}, 4);
  save_checkpoint(*model, path);

  CHECK_THROWS_WITH_AS(load_checkpoint(path, ModelKind::Irt), doctest::Contains("checkpoint holds a ncdm model"),
                       CheckpointError);

  std::string body;
  {
    std::ifstream in(path);
    body.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::ofstream(path) << body.substr(0, body.size() / 2);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt"), CheckpointError);

  auto j = nlohmann::json::parse(body);
  j["version"] = kCheckpointVersion + 1;
  std::ofstream(path) << j.dump();
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), CheckpointError);

  j = nlohmann::json::parse(body);
  j["params"][0]["rows"] = 99;
  std::ofstream(path) << j.dump();
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  CHECK_THROWS_WITH_AS(load_checkpoint(temp_path("missing.json")), doctest::Contains("file not found"),
                       CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("report files") {
  TrainReport r;
  r.epochs.push_back({1, 0.7, 0.65, 0.6, 1.5});
  r.epochs.push_back({2, 0.6, 0.62, 0.7, 1.4});
  r.best_epoch = 2;
  r.best_validation_loss = 0.62;
  const auto j = report_to_json(r);
  CHECK(j.dump().find("seconds") == std::string::npos);
  const auto csv = temp_path("epochs.csv");
  write_epoch_csv(r, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,fit_loss,validation_loss,validation_acc");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
  std::filesystem::remove(csv);
}
