#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cdm/dataset.hpp"
#include "cdm/diffcore.hpp"
#include "cdm/models.hpp"

namespace cdm::testing {

/// One randomly shaped graph exercising a single op, reduced to a scalar by u^T X v with constant u, v.
struct OpCase {
  Op op;
  std::vector<std::unique_ptr<ParamTensor>> owned;
  std::vector<ParamTensor*> params;
  GraphBuilder build;
};

inline Matrix uniform(Eigen::Index r, Eigen::Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline NodeId reduce(Graph& g, NodeId x, const Matrix& u, const Matrix& v) {
  return g.matmul(g.matmul(g.constant(u), x), g.constant(v));
}

inline std::vector<Op> differentiable_ops() {
  return {Op::MatMul, Op::AddBias, Op::Sigmoid, Op::ElementwiseMul, Op::Subtract, Op::BceLoss,
          Op::Mask,   Op::ConcatRows, Op::GatherRows, Op::Log, Op::Exp};
}

inline OpCase make_op_case(Op op, std::mt19937_64& rng) {
  std::uniform_int_distribution<Eigen::Index> dim(1, 5);
  const Eigen::Index r = dim(rng), c = dim(rng), inner = dim(rng);
  OpCase oc;
  oc.op = op;
  auto add = [&](const char* name, Matrix init) {
    oc.owned.push_back(std::make_unique<ParamTensor>(name, std::move(init), false));
    oc.params.push_back(oc.owned.back().get());
    return oc.owned.back().get();
  };
  const Matrix u = uniform(1, r, -1.0, 1.0, rng);
  const Matrix v = uniform(c, 1, -1.0, 1.0, rng);
  switch (op) {
    case Op::MatMul: {
      auto* a = add("a", uniform(r, inner, -1, 1, rng));
      auto* b = add("b", uniform(inner, c, -1, 1, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.matmul(g.parameter(*a), g.parameter(*b)), u, v); };
      break;
    }
    case Op::AddBias: {
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      auto* b = add("b", uniform(1, c, -1, 1, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.add_bias(g.parameter(*a), g.parameter(*b)), u, v); };
      break;
    }
    case Op::Sigmoid: {
      auto* a = add("a", uniform(r, c, -4, 4, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.sigmoid(g.parameter(*a)), u, v); };
      break;
    }
    case Op::ElementwiseMul: {
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      auto* b = add("b", uniform(r, c, -1, 1, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.mul(g.parameter(*a), g.parameter(*b)), u, v); };
      break;
    }
    case Op::Subtract: {
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      auto* b = add("b", uniform(r, c, -1, 1, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.subtract(g.parameter(*a), g.parameter(*b)), u, v); };
      break;
    }
    case Op::BceLoss: {
      auto* y = add("y", uniform(r, 1, 0.05, 0.95, rng));
      Matrix t(r, 1);
      std::bernoulli_distribution coin(0.5);
      for (Eigen::Index i = 0; i < r; ++i) t(i, 0) = coin(rng) ? 1.0 : 0.0;
      oc.build = [=](Graph& g) { return g.bce_loss(g.parameter(*y), t); };
      break;
    }
    case Op::Mask: {
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      Matrix m(r, c);
      std::bernoulli_distribution coin(0.5);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng) ? 1.0 : 0.0;
      oc.build = [=](Graph& g) { return reduce(g, g.mask(g.parameter(*a), m), u, v); };
      break;
    }
    case Op::ConcatRows: {
      const Eigen::Index r2 = dim(rng);
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      auto* b = add("b", uniform(r2, c, -1, 1, rng));
      const Matrix uu = uniform(1, r + r2, -1, 1, rng);
      oc.build = [=](Graph& g) { return reduce(g, g.concat_rows(g.parameter(*a), g.parameter(*b)), uu, v); };
      break;
    }
    case Op::GatherRows: {
      const Eigen::Index out = dim(rng) + 1;
      auto* a = add("a", uniform(r, c, -1, 1, rng));
      std::uniform_int_distribution<Eigen::Index> pick(0, r - 1);
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(out));
      for (auto& x : rows) x = pick(rng);
      const Matrix uu = uniform(1, out, -1, 1, rng);
      oc.build = [=](Graph& g) { return reduce(g, g.gather_rows(g.parameter(*a), rows), uu, v); };
      break;
    }
    case Op::Log: {
      auto* a = add("a", uniform(r, c, 0.2, 3.0, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.log(g.parameter(*a)), u, v); };
      break;
    }
    case Op::Exp: {
      auto* a = add("a", uniform(r, c, -2.0, 2.0, rng));
      oc.build = [=](Graph& g) { return reduce(g, g.exp(g.parameter(*a)), u, v); };
      break;
    }
    default:
      throw std::invalid_argument("no gradient case for this op");
  }
  return oc;
}

/// A dense random dataset small enough for exhaustive checks.
inline ResponseDataset toy_dataset(std::size_t n, std::size_t m, std::size_t k, std::uint64_t seed,
                                   double answered = 0.8) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5), seen(answered);
  Matrix q = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(k) - 1);
  for (Eigen::Index j = 0; j < q.rows(); ++j) {
    for (Eigen::Index c = 0; c < q.cols(); ++c) q(j, c) = coin(rng) ? 1.0 : 0.0;
    q(j, pick(rng)) = 1.0;
  }
  ResponseDataset ds;
  ds.num_learners = n;
  ds.num_questions = m;
  ds.num_concepts = k;
  ds.q_matrix = QMatrix(q);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (seen(rng)) ds.logs.push_back({i, j, coin(rng) ? 1 : 0, static_cast<std::int64_t>(j)});
    }
    ds.ids.learners.push_back("L" + std::to_string(i));
  }
  for (std::size_t j = 0; j < m; ++j) ds.ids.questions.push_back("Q" + std::to_string(j));
  return ds;
}

/// Small-width ID-CDM preset for fast exhaustive tests.
inline ModelConfig toy_idcdm_config(const std::string& preset = "idcdm") {
  ModelConfig cfg = model_config_for(preset);
  cfg.learner_hidden = 6;
  cfg.question_hidden1 = 6;
  cfg.question_hidden2 = 5;
  cfg.aggregate_dim = 4;
  cfg.predictor_hidden1 = 5;
  cfg.predictor_hidden2 = 3;
  cfg.mirt_dim = 3;
  cfg.ncdm_hidden1 = 5;
  cfg.ncdm_hidden2 = 3;
  return cfg;
}

/// Full forward graph of a bound model over `batch`, ending in the summed BCE loss.
inline GraphBuilder loss_builder(const Model& model, std::vector<ResponseLog> batch) {
  Matrix targets(static_cast<Eigen::Index>(batch.size()), 1);
  for (std::size_t i = 0; i < batch.size(); ++i) targets(static_cast<Eigen::Index>(i), 0) = batch[i].score;
  return [&model, batch = std::move(batch), targets](Graph& g) {
    return g.bce_loss(model.forward(g, batch), targets);
  };
}

inline std::vector<ParamTensor*> param_pointers(Model& model) {
  std::vector<ParamTensor*> out;
  for (auto& p : model.params()) out.push_back(&p);
  return out;
}

}  // namespace cdm::testing
