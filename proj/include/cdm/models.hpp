#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdm/dataset.hpp"
#include "cdm/diffcore.hpp"

namespace cdm {

enum class ModelKind { Idcdm, Irt, Mirt, Dina, Ncdm };

std::string_view kind_name(ModelKind kind);
ModelKind parse_kind(std::string_view name);

enum class NcdmInit { Xavier, Constant };

struct ModelConfig {
  ModelKind kind = ModelKind::Idcdm;
  /// Display name used in reports, e.g. "idcdm-nmono".
  std::string name = "idcdm";
  /// Adam step size used unless a run overrides it.
  double learning_rate = 0.0002;

  // ID-CDM widths. Only the aggregate width comes fixed (64); the rest are sized for Math1-scale data.
  std::size_t learner_hidden = 256;
  std::size_t question_hidden1 = 256;
  std::size_t question_hidden2 = 128;
  std::size_t aggregate_dim = 64;
  std::size_t predictor_hidden1 = 128;
  std::size_t predictor_hidden2 = 64;
  bool monotonicity = true;
  bool encoder = true;
  bool constrain_predictor = false;

  std::size_t mirt_dim = 16;

  std::size_t ncdm_hidden1 = 128;
  std::size_t ncdm_hidden2 = 64;
  NcdmInit ncdm_init = NcdmInit::Xavier;
  double ncdm_const = 0.0;
};

/// Named presets: idcdm, idcdm-nmono, idcdm-nenc, ncdm, ncdm-const, irt, mirt, dina.
ModelConfig model_config_for(std::string_view name);
std::vector<std::string> known_model_names();

struct Dims {
  std::size_t learners = 0;
  std::size_t questions = 0;
  std::size_t concepts = 0;
};

/// Learner traits (one row per learner) and question parameters (one row per question), in dense-id order.
struct Diagnosis {
  Matrix learner_traits;
  Matrix question_params;
};

class Model {
 public:
  Model(ModelConfig cfg, Dims dims);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  const Dims& dims() const { return dims_; }
  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

  /// Supplies the Q-matrix and the fit logs that inductive models read their inputs from.
  virtual void bind(const ResponseDataset& dataset, std::span<const ResponseLog> fit);
  bool bound() const { return bound_; }

  /// Probability of a correct response for every log in the batch, as a B x 1 node.
  virtual NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const = 0;

  virtual Diagnosis diagnose_all() const = 0;

  std::vector<double> predict(std::span<const ResponseLog> logs) const;

 protected:
  std::size_t add_param(std::string name, Matrix init, bool constrained);
  const ParamTensor& param(std::size_t index) const { return params_[index]; }
  Matrix q_rows(std::span<const ResponseLog> batch) const;
  void require_bound() const;

  ModelConfig cfg_;
  Dims dims_;
  std::vector<ParamTensor> params_;
  Matrix q_;
  bool bound_ = false;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg, const Dims& dims, std::uint64_t seed);

/// Identifiable CDM: traits and question parameters are functions of fit-set response vectors.
class IdcdmModel final : public Model {
 public:
  IdcdmModel(ModelConfig cfg, Dims dims, std::uint64_t seed);

  void bind(const ResponseDataset& dataset, std::span<const ResponseLog> fit) override;
  NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const override;
  Diagnosis diagnose_all() const override;

  /// Rows of x are learner response vectors (length M); returns rows of traits in (0,1)^K.
  Matrix diagnose_learners(const Matrix& x) const;
  /// Rows of x are question response vectors (length N).
  Matrix diagnose_questions(const Matrix& x) const;
  double predict_pair(const Matrix& theta, const Matrix& psi, const Matrix& q) const;

  NodeId learner_traits(Graph& graph, const Matrix& x) const;
  NodeId question_params(Graph& graph, const Matrix& x) const;
  NodeId predict_from(Graph& graph, NodeId theta, NodeId psi, const Matrix& q) const;

 private:
  struct Layer {
    std::size_t weight;
    std::size_t bias;
  };
  NodeId dense(Graph& graph, NodeId input, const Layer& layer) const;

  std::vector<Layer> learner_net_;
  std::vector<Layer> question_net_;
  std::size_t learner_embedding_ = 0;
  std::size_t question_embedding_ = 0;
  Layer learner_aggregate_{};
  Layer question_aggregate_{};
  std::vector<Layer> predictor_;
  ResponseMatrix learner_x_;
  ResponseMatrix question_x_;
};

class IrtModel final : public Model {
 public:
  IrtModel(ModelConfig cfg, Dims dims, std::uint64_t seed);
  NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const override;
  Diagnosis diagnose_all() const override;
};

class MirtModel final : public Model {
 public:
  MirtModel(ModelConfig cfg, Dims dims, std::uint64_t seed);
  NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const override;
  Diagnosis diagnose_all() const override;
};

/// DINA with a soft mastery relaxation so it trains by gradient descent like the other models.
class DinaModel final : public Model {
 public:
  DinaModel(ModelConfig cfg, Dims dims, std::uint64_t seed);
  NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const override;
  Diagnosis diagnose_all() const override;
};

class NcdmModel final : public Model {
 public:
  NcdmModel(ModelConfig cfg, Dims dims, std::uint64_t seed);
  NodeId forward(Graph& graph, std::span<const ResponseLog> batch) const override;
  Diagnosis diagnose_all() const override;

  /// Single-pair evaluation from raw logits, bypassing the stored embeddings.
  double predict_pair(const Matrix& trait_logits, const Matrix& difficulty_logits, double discrimination_logit,
                      const Matrix& q) const;

 private:
  NodeId interaction(Graph& graph, NodeId input) const;
};

double irt_predict(double theta, double a, double b);
double mirt_predict(std::span<const double> theta, std::span<const double> a, double b);
/// exp(eta * ln(1 - s) + (1 - eta) * ln g) with eta = prod_k mastery_k^q_k.
double dina_predict(std::span<const double> mastery, std::span<const double> q, double guess, double slip);

}  // namespace cdm
