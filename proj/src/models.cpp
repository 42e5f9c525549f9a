#include "cdm/models.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace cdm {

namespace {

constexpr std::size_t kPredictChunk = 4096;

struct UniqueIds {
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> position;
};

template <typename Getter>
UniqueIds unique_ids(std::span<const ResponseLog> batch, Getter get) {
  UniqueIds out;
  std::unordered_map<std::size_t, Eigen::Index> seen;
  out.position.reserve(batch.size());
  for (const auto& log : batch) {
    auto [it, inserted] = seen.try_emplace(get(log), static_cast<Eigen::Index>(out.ids.size()));
    if (inserted) out.ids.push_back(get(log));
    out.position.push_back(it->second);
  }
  return out;
}

std::vector<Eigen::Index> learner_rows(std::span<const ResponseLog> batch) {
  std::vector<Eigen::Index> rows;
  rows.reserve(batch.size());
  for (const auto& log : batch) rows.push_back(static_cast<Eigen::Index>(log.learner));
  return rows;
}

std::vector<Eigen::Index> question_rows(std::span<const ResponseLog> batch) {
  std::vector<Eigen::Index> rows;
  rows.reserve(batch.size());
  for (const auto& log : batch) rows.push_back(static_cast<Eigen::Index>(log.question));
  return rows;
}

Matrix rows_as_double(const ResponseMatrix& x, std::span<const std::size_t> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), x.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(ids[i])).cast<double>();
  }
  return out;
}

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

std::string_view kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Idcdm: return "idcdm";
    case ModelKind::Irt: return "irt";
    case ModelKind::Mirt: return "mirt";
    case ModelKind::Dina: return "dina";
    case ModelKind::Ncdm: return "ncdm";
  }
  return "unknown";
}

ModelKind parse_kind(std::string_view name) {
  for (auto k : {ModelKind::Idcdm, ModelKind::Irt, ModelKind::Mirt, ModelKind::Dina, ModelKind::Ncdm}) {
    if (kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown model kind: " + std::string(name));
}

ModelConfig model_config_for(std::string_view name) {
  ModelConfig cfg;
  cfg.name = std::string(name);
  if (name == "idcdm") return cfg;
  if (name == "idcdm-nmono") {
    cfg.monotonicity = false;
    return cfg;
  }
  if (name == "idcdm-nenc") {
    cfg.encoder = false;
    return cfg;
  }
  cfg.learning_rate = 0.002;
  if (name == "ncdm" || name == "ncdm-const") {
    cfg.kind = ModelKind::Ncdm;
    if (name == "ncdm-const") cfg.ncdm_init = NcdmInit::Constant;
    return cfg;
  }
  if (name == "irt") cfg.kind = ModelKind::Irt;
  else if (name == "mirt") cfg.kind = ModelKind::Mirt;
  else if (name == "dina") cfg.kind = ModelKind::Dina;
  else throw std::invalid_argument("unknown model: " + std::string(name));
  return cfg;
}

std::vector<std::string> known_model_names() {
  return {"idcdm", "idcdm-nmono", "idcdm-nenc", "ncdm", "ncdm-const", "irt", "mirt", "dina"};
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(ModelConfig cfg, Dims dims) : cfg_(std::move(cfg)), dims_(dims) {
  if (dims_.learners == 0 || dims_.questions == 0 || dims_.concepts == 0) {
    throw DimensionError("model dimensions must be positive");
  }
}

std::size_t Model::add_param(std::string name, Matrix init, bool constrained) {
  if (constrained) init = project_nonnegative(std::move(init));
  params_.emplace_back(std::move(name), std::move(init), constrained);
  return params_.size() - 1;
}

void Model::bind(const ResponseDataset& dataset, std::span<const ResponseLog>) {
  if (dataset.num_learners != dims_.learners || dataset.num_questions != dims_.questions ||
      dataset.num_concepts != dims_.concepts) {
    throw DimensionError("dataset shape does not match the model");
  }
  q_ = dataset.q_matrix.entries();
  bound_ = true;
}

void Model::require_bound() const {
  if (!bound_) throw std::logic_error(std::string(kind_name(cfg_.kind)) + ": bind() must be called first");
}

Matrix Model::q_rows(std::span<const ResponseLog> batch) const {
  require_bound();
  Matrix out(idx(batch.size()), q_.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) out.row(idx(i)) = q_.row(idx(batch[i].question));
  return out;
}

std::vector<double> Model::predict(std::span<const ResponseLog> logs) const {
  std::vector<double> out;
  out.reserve(logs.size());
  for (std::size_t begin = 0; begin < logs.size(); begin += kPredictChunk) {
    const auto chunk = logs.subspan(begin, std::min(kPredictChunk, logs.size() - begin));
    Graph graph;
    const auto& y = graph.value(forward(graph, chunk));
    for (Eigen::Index i = 0; i < y.rows(); ++i) out.push_back(y(i, 0));
  }
  return out;
}

std::unique_ptr<Model> make_model(const ModelConfig& cfg, const Dims& dims, std::uint64_t seed) {
  switch (cfg.kind) {
    case ModelKind::Idcdm: return std::make_unique<IdcdmModel>(cfg, dims, seed);
    case ModelKind::Irt: return std::make_unique<IrtModel>(cfg, dims, seed);
    case ModelKind::Mirt: return std::make_unique<MirtModel>(cfg, dims, seed);
    case ModelKind::Dina: return std::make_unique<DinaModel>(cfg, dims, seed);
    case ModelKind::Ncdm: return std::make_unique<NcdmModel>(cfg, dims, seed);
  }
  throw std::invalid_argument("unknown model kind");
}

// ---------------------------------------------------------------------------
// ID-CDM
// ---------------------------------------------------------------------------

IdcdmModel::IdcdmModel(ModelConfig cfg, Dims dims, std::uint64_t seed) : Model(std::move(cfg), dims) {
  std::mt19937_64 rng(seed);
  const auto layer = [&](const std::string& name, std::size_t in, std::size_t out, bool constrained) {
    Layer l;
    l.weight = add_param(name + ".weight", xavier_normal_init(idx(in), idx(out), rng), constrained);
    l.bias = add_param(name + ".bias", Matrix::Zero(1, idx(out)), false);
    return l;
  };
  const auto& c = cfg_;
  const std::size_t k = dims_.concepts;
  if (c.encoder) {
    learner_net_.push_back(layer("learner.l1", dims_.questions, c.learner_hidden, c.monotonicity));
    learner_net_.push_back(layer("learner.l2", c.learner_hidden, k, c.monotonicity));
    question_net_.push_back(layer("question.l1", dims_.learners, c.question_hidden1, false));
    question_net_.push_back(layer("question.l2", c.question_hidden1, c.question_hidden2, false));
    question_net_.push_back(layer("question.l3", c.question_hidden2, k, false));
  } else {
    learner_embedding_ = add_param("learner.embedding", xavier_normal_init(idx(dims_.learners), idx(k), rng), false);
    question_embedding_ =
        add_param("question.embedding", xavier_normal_init(idx(dims_.questions), idx(k), rng), false);
  }
  const bool pc = c.constrain_predictor;
  learner_aggregate_ = layer("aggregate.learner", k, c.aggregate_dim, pc);
  question_aggregate_ = layer("aggregate.question", k, c.aggregate_dim, pc);
  predictor_.push_back(layer("predict.l1", c.aggregate_dim, c.predictor_hidden1, pc));
  predictor_.push_back(layer("predict.l2", c.predictor_hidden1, c.predictor_hidden2, pc));
  predictor_.push_back(layer("predict.l3", c.predictor_hidden2, 1, pc));
}

void IdcdmModel::bind(const ResponseDataset& dataset, std::span<const ResponseLog> fit) {
  Model::bind(dataset, fit);
  learner_x_ = build_response_vectors(dataset, fit, VectorMode::Learner);
  question_x_ = build_response_vectors(dataset, fit, VectorMode::Question);
}

NodeId IdcdmModel::dense(Graph& graph, NodeId input, const Layer& layer) const {
  return graph.add_bias(graph.matmul(input, graph.parameter(param(layer.weight))), graph.parameter(param(layer.bias)));
}

NodeId IdcdmModel::learner_traits(Graph& graph, const Matrix& x) const {
  NodeId h = graph.constant(x);
  for (const auto& l : learner_net_) h = graph.sigmoid(dense(graph, h, l));
  return h;
}

NodeId IdcdmModel::question_params(Graph& graph, const Matrix& x) const {
  NodeId h = graph.constant(x);
  for (const auto& l : question_net_) h = graph.sigmoid(dense(graph, h, l));
  return h;
}

NodeId IdcdmModel::predict_from(Graph& graph, NodeId theta, NodeId psi, const Matrix& q) const {
  const NodeId alpha = graph.sigmoid(dense(graph, graph.mask(theta, q), learner_aggregate_));
  const NodeId phi = graph.sigmoid(dense(graph, graph.mask(psi, q), question_aggregate_));
  NodeId z = graph.subtract(alpha, phi);
  for (const auto& l : predictor_) z = graph.sigmoid(dense(graph, z, l));
  return z;
}

NodeId IdcdmModel::forward(Graph& graph, std::span<const ResponseLog> batch) const {
  require_bound();
  NodeId theta{};
  NodeId psi{};
  if (cfg_.encoder) {
    const auto learners = unique_ids(batch, [](const ResponseLog& l) { return l.learner; });
    const auto questions = unique_ids(batch, [](const ResponseLog& l) { return l.question; });
    theta = graph.gather_rows(learner_traits(graph, rows_as_double(learner_x_, learners.ids)), learners.position);
    psi = graph.gather_rows(question_params(graph, rows_as_double(question_x_, questions.ids)), questions.position);
  } else {
    theta = graph.sigmoid(graph.gather_rows(graph.parameter(param(learner_embedding_)), learner_rows(batch)));
    psi = graph.sigmoid(graph.gather_rows(graph.parameter(param(question_embedding_)), question_rows(batch)));
  }
  return predict_from(graph, theta, psi, q_rows(batch));
}

Matrix IdcdmModel::diagnose_learners(const Matrix& x) const {
  if (!cfg_.encoder) throw std::logic_error("diagnose_learners needs the diagnostic encoder");
  if (x.cols() != idx(dims_.questions)) throw DimensionError("learner response vector must have length M");
  Graph graph;
  return graph.value(learner_traits(graph, x));
}

Matrix IdcdmModel::diagnose_questions(const Matrix& x) const {
  if (!cfg_.encoder) throw std::logic_error("diagnose_questions needs the diagnostic encoder");
  if (x.cols() != idx(dims_.learners)) throw DimensionError("question response vector must have length N");
  Graph graph;
  return graph.value(question_params(graph, x));
}

double IdcdmModel::predict_pair(const Matrix& theta, const Matrix& psi, const Matrix& q) const {
  const auto k = idx(dims_.concepts);
  if (theta.size() != k || psi.size() != k || q.size() != k) throw DimensionError("idcdm_predict: vectors must have length K");
  Graph graph;
  const NodeId t = graph.constant(theta.reshaped<Eigen::RowMajor>(1, k));
  const NodeId p = graph.constant(psi.reshaped<Eigen::RowMajor>(1, k));
  return graph.value(predict_from(graph, t, p, q.reshaped<Eigen::RowMajor>(1, k)))(0, 0);
}

Diagnosis IdcdmModel::diagnose_all() const {
  require_bound();
  Diagnosis d;
  if (!cfg_.encoder) {
    d.learner_traits = param(learner_embedding_).value.unaryExpr([](double z) { return sigmoid(z); });
    d.question_params = param(question_embedding_).value.unaryExpr([](double z) { return sigmoid(z); });
    return d;
  }
  // Each distinct response vector is diagnosed once, so equal vectors get bit-equal rows.
  const auto run = [](const ResponseMatrix& x, std::size_t chunk, auto&& fn) {
    const auto groups = group_identical(x);
    ResponseMatrix distinct(idx(groups.size()), x.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) distinct.row(idx(g)) = x.row(idx(groups[g].front()));
    Matrix unique;
    for (Eigen::Index begin = 0; begin < distinct.rows(); begin += idx(chunk)) {
      const Eigen::Index n = std::min<Eigen::Index>(idx(chunk), distinct.rows() - begin);
      Matrix part = fn(Matrix(distinct.middleRows(begin, n).cast<double>()));
      if (unique.size() == 0) unique.resize(distinct.rows(), part.cols());
      unique.middleRows(begin, n) = part;
    }
    Matrix out(x.rows(), unique.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t r : groups[g]) out.row(idx(r)) = unique.row(idx(g));
    }
    return out;
  };
  d.learner_traits = run(learner_x_, 2048, [&](const Matrix& x) { return diagnose_learners(x); });
  d.question_params = run(question_x_, 64, [&](const Matrix& x) { return diagnose_questions(x); });
  return d;
}

// ---------------------------------------------------------------------------
// IRT / MIRT / DINA
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kTheta = 0;
constexpr std::size_t kA = 1;
constexpr std::size_t kB = 2;
}  // namespace

IrtModel::IrtModel(ModelConfig cfg, Dims dims, std::uint64_t seed) : Model(std::move(cfg), dims) {
  std::mt19937_64 rng(seed);
  add_param("theta", xavier_normal_init(idx(dims_.learners), 1, rng), false);
  add_param("a", xavier_normal_init(idx(dims_.questions), 1, rng), false);
  add_param("b", xavier_normal_init(idx(dims_.questions), 1, rng), false);
}

NodeId IrtModel::forward(Graph& graph, std::span<const ResponseLog> batch) const {
  require_bound();
  const auto qs = question_rows(batch);
  const NodeId theta = graph.gather_rows(graph.parameter(param(kTheta)), learner_rows(batch));
  const NodeId a = graph.gather_rows(graph.parameter(param(kA)), qs);
  const NodeId b = graph.gather_rows(graph.parameter(param(kB)), qs);
  return graph.sigmoid(graph.mul(a, graph.subtract(theta, b)));
}

Diagnosis IrtModel::diagnose_all() const {
  Diagnosis d;
  d.learner_traits = param(kTheta).value;
  d.question_params.resize(idx(dims_.questions), 2);
  d.question_params << param(kA).value, param(kB).value;
  return d;
}

MirtModel::MirtModel(ModelConfig cfg, Dims dims, std::uint64_t seed) : Model(std::move(cfg), dims) {
  std::mt19937_64 rng(seed);
  const auto d = idx(cfg_.mirt_dim);
  add_param("theta", xavier_normal_init(idx(dims_.learners), d, rng), false);
  add_param("a", xavier_normal_init(idx(dims_.questions), d, rng), false);
  add_param("b", xavier_normal_init(idx(dims_.questions), 1, rng), false);
}

NodeId MirtModel::forward(Graph& graph, std::span<const ResponseLog> batch) const {
  require_bound();
  const auto qs = question_rows(batch);
  const NodeId theta = graph.gather_rows(graph.parameter(param(kTheta)), learner_rows(batch));
  const NodeId a = graph.gather_rows(graph.parameter(param(kA)), qs);
  const NodeId b = graph.gather_rows(graph.parameter(param(kB)), qs);
  const NodeId dot = graph.matmul(graph.mul(theta, a), graph.constant(Matrix::Ones(idx(cfg_.mirt_dim), 1)));
  return graph.sigmoid(graph.subtract(dot, b));
}

Diagnosis MirtModel::diagnose_all() const {
  Diagnosis d;
  d.learner_traits = param(kTheta).value;
  d.question_params.resize(idx(dims_.questions), idx(cfg_.mirt_dim) + 1);
  d.question_params << param(kA).value, param(kB).value;
  return d;
}

namespace {
constexpr std::size_t kMastery = 0;
constexpr std::size_t kGuess = 1;
constexpr std::size_t kSlip = 2;
}  // namespace

DinaModel::DinaModel(ModelConfig cfg, Dims dims, std::uint64_t seed) : Model(std::move(cfg), dims) {
  std::mt19937_64 rng(seed);
  add_param("mastery", xavier_normal_init(idx(dims_.learners), idx(dims_.concepts), rng), false);
  add_param("guess", xavier_normal_init(idx(dims_.questions), 1, rng), false);
  add_param("slip", xavier_normal_init(idx(dims_.questions), 1, rng), false);
}

NodeId DinaModel::forward(Graph& graph, std::span<const ResponseLog> batch) const {
  const Matrix q = q_rows(batch);
  const auto qs = question_rows(batch);
  const auto rows = idx(batch.size());
  const NodeId mastery = graph.sigmoid(graph.gather_rows(graph.parameter(param(kMastery)), learner_rows(batch)));
  const NodeId log_eta =
      graph.matmul(graph.mask(graph.log(mastery), q), graph.constant(Matrix::Ones(idx(dims_.concepts), 1)));
  const NodeId eta = graph.exp(log_eta);
  const NodeId log_g = graph.log(graph.sigmoid(graph.gather_rows(graph.parameter(param(kGuess)), qs)));
  const NodeId slip = graph.sigmoid(graph.gather_rows(graph.parameter(param(kSlip)), qs));
  const NodeId log_not_slip = graph.log(graph.subtract(graph.constant(Matrix::Ones(rows, 1)), slip));
  // (1 - eta) ln g + eta ln(1 - s), written with the available ops.
  return graph.exp(graph.subtract(log_g, graph.mul(eta, graph.subtract(log_g, log_not_slip))));
}

Diagnosis DinaModel::diagnose_all() const {
  const auto sig = [](double z) { return sigmoid(z); };
  Diagnosis d;
  d.learner_traits = param(kMastery).value.unaryExpr(sig);
  d.question_params.resize(idx(dims_.questions), 2);
  d.question_params << param(kGuess).value.unaryExpr(sig), param(kSlip).value.unaryExpr(sig);
  return d;
}

// ---------------------------------------------------------------------------
// NCDM
// ---------------------------------------------------------------------------

namespace {
constexpr std::size_t kTrait = 0;
constexpr std::size_t kDifficulty = 1;
constexpr std::size_t kDiscrimination = 2;
constexpr std::size_t kInteraction = 3;  // three (weight, bias) pairs follow
}  // namespace

NcdmModel::NcdmModel(ModelConfig cfg, Dims dims, std::uint64_t seed) : Model(std::move(cfg), dims) {
  std::mt19937_64 rng(seed);
  const auto n = idx(dims_.learners);
  const auto m = idx(dims_.questions);
  const auto k = idx(dims_.concepts);
  if (cfg_.ncdm_init == NcdmInit::Constant) {
    add_param("trait", Matrix::Constant(n, k, cfg_.ncdm_const), false);
    add_param("difficulty", Matrix::Constant(m, k, cfg_.ncdm_const), false);
    add_param("discrimination", Matrix::Constant(m, 1, cfg_.ncdm_const), false);
  } else {
    add_param("trait", xavier_normal_init(n, k, rng), false);
    add_param("difficulty", xavier_normal_init(m, k, rng), false);
    add_param("discrimination", xavier_normal_init(m, 1, rng), false);
  }
  const std::size_t widths[] = {dims_.concepts, cfg_.ncdm_hidden1, cfg_.ncdm_hidden2, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "interaction.l" + std::to_string(i + 1);
    add_param(name + ".weight", xavier_normal_init(idx(widths[i]), idx(widths[i + 1]), rng), true);
    add_param(name + ".bias", Matrix::Zero(1, idx(widths[i + 1])), false);
  }
}

NodeId NcdmModel::interaction(Graph& graph, NodeId input) const {
  NodeId h = input;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& w = param(kInteraction + 2 * i);
    const auto& b = param(kInteraction + 2 * i + 1);
    h = graph.sigmoid(graph.add_bias(graph.matmul(h, graph.parameter(w)), graph.parameter(b)));
  }
  return h;
}

NodeId NcdmModel::forward(Graph& graph, std::span<const ResponseLog> batch) const {
  const Matrix q = q_rows(batch);
  const auto qs = question_rows(batch);
  const NodeId trait = graph.sigmoid(graph.gather_rows(graph.parameter(param(kTrait)), learner_rows(batch)));
  const NodeId diff = graph.sigmoid(graph.gather_rows(graph.parameter(param(kDifficulty)), qs));
  const NodeId disc = graph.sigmoid(graph.gather_rows(graph.parameter(param(kDiscrimination)), qs));
  const NodeId disc_wide = graph.matmul(disc, graph.constant(Matrix::Ones(1, idx(dims_.concepts))));
  return interaction(graph, graph.mask(graph.mul(disc_wide, graph.subtract(trait, diff)), q));
}

double NcdmModel::predict_pair(const Matrix& trait_logits, const Matrix& difficulty_logits,
                               double discrimination_logit, const Matrix& q) const {
  const auto k = idx(dims_.concepts);
  if (trait_logits.size() != k || difficulty_logits.size() != k || q.size() != k) {
    throw DimensionError("ncdm_predict: vectors must have length K");
  }
  Graph graph;
  const NodeId trait = graph.sigmoid(graph.constant(trait_logits.reshaped<Eigen::RowMajor>(1, k)));
  const NodeId diff = graph.sigmoid(graph.constant(difficulty_logits.reshaped<Eigen::RowMajor>(1, k)));
  const NodeId disc = graph.constant(Matrix::Constant(1, k, sigmoid(discrimination_logit)));
  const NodeId input = graph.mask(graph.mul(disc, graph.subtract(trait, diff)), q.reshaped<Eigen::RowMajor>(1, k));
  return graph.value(interaction(graph, input))(0, 0);
}

Diagnosis NcdmModel::diagnose_all() const {
  const auto sig = [](double z) { return sigmoid(z); };
  Diagnosis d;
  d.learner_traits = param(kTrait).value.unaryExpr(sig);
  d.question_params.resize(idx(dims_.questions), idx(dims_.concepts) + 1);
  d.question_params << param(kDifficulty).value.unaryExpr(sig), param(kDiscrimination).value.unaryExpr(sig);
  return d;
}

// ---------------------------------------------------------------------------
// closed forms
// ---------------------------------------------------------------------------

double irt_predict(double theta, double a, double b) { return sigmoid(a * (theta - b)); }

double mirt_predict(std::span<const double> theta, std::span<const double> a, double b) {
  if (theta.size() != a.size()) throw DimensionError("mirt_predict: theta and a differ in length");
  double dot = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) dot += theta[i] * a[i];
  return sigmoid(dot - b);
}

double dina_predict(std::span<const double> mastery, std::span<const double> q, double guess, double slip) {
  if (mastery.size() != q.size()) throw DimensionError("dina_predict: mastery and q differ in length");
  double log_eta = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] != 0.0) log_eta += std::log(mastery[k]);
  }
  const double eta = std::exp(log_eta);
  return std::exp(eta * std::log(1.0 - slip) + (1.0 - eta) * std::log(guess));
}

}  // namespace cdm
