#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cdm/dataset.hpp"

namespace cdm {

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// A trainable matrix with its Adam moments. Constrained tensors are kept element-wise non-negative.
struct ParamTensor {
  std::string name;
  Matrix value;
  bool constrained = false;
  Matrix adam_m;
  Matrix adam_v;
  std::int64_t step = 0;

  ParamTensor() = default;
  ParamTensor(std::string name, Matrix init, bool constrained);
};

enum class Op {
  Parameter,
  Constant,
  MatMul,
  AddBias,
  Sigmoid,
  ElementwiseMul,
  Subtract,
  BceLoss,
  Mask,
  ConcatRows,
  GatherRows,
  Log,
  Exp,
};

std::string_view op_name(Op op);

/// Lower and upper clamp applied to predictions before the log in the BCE loss.
inline constexpr double kBceClamp = 1e-7;

/// Overflow-safe logistic function.
double sigmoid(double z);

struct NodeId {
  std::size_t index = 0;
};

struct ParamGradient {
  const ParamTensor* param = nullptr;
  Matrix grad;
};

/// Define-by-run tape. Each node's value is computed once when it is added; nodes are appended in
/// topological order, so backward is a single reverse sweep. Parameter nodes refer to their tensor,
/// which must stay alive and unchanged until backward() returns.
class Graph {
 public:
  NodeId parameter(const ParamTensor& p);
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  /// a (r x c) plus a 1 x c row broadcast over rows.
  NodeId add_bias(NodeId a, NodeId bias);
  NodeId sigmoid(NodeId a);
  NodeId mul(NodeId a, NodeId b);
  NodeId subtract(NodeId a, NodeId b);
  /// Summed binary cross entropy of `prediction` against constant targets; a 1 x 1 node.
  NodeId bce_loss(NodeId prediction, Matrix targets);
  /// Element-wise product with a constant mask; no gradient flows to the mask.
  NodeId mask(NodeId a, Matrix mask);
  NodeId concat_rows(NodeId top, NodeId bottom);
  NodeId gather_rows(NodeId a, std::vector<Eigen::Index> rows);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);

  const Matrix& value(NodeId id) const { return nodes_.at(id.index).val(); }
  /// Empty until backward() reaches the node. Parameter nodes hand theirs to backward()'s result.
  const Matrix& grad(NodeId id) const { return nodes_.at(id.index).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a 1 x 1 root. Returns one summed gradient per distinct parameter.
  std::vector<ParamGradient> backward(NodeId root);

  /// Test aid: scales the backward rule of `op` so gradient checks can be shown to catch it.
  void inject_gradient_fault(Op op, double scale = 1.5) {
    fault_op_ = op;
    fault_scale_ = scale;
  }

 private:
  struct Node {
    explicit Node(Op o, std::size_t l = 0, std::size_t r = 0) : op(o), lhs(l), rhs(r) {}
    Op op;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    Matrix value;
    Matrix grad;
    Matrix aux;
    std::vector<Eigen::Index> rows;
    const ParamTensor* param = nullptr;

    const Matrix& val() const { return param != nullptr ? param->value : value; }
  };

  NodeId push(Node node);
  const Node& at(NodeId id) const { return nodes_.at(id.index); }
  void accumulate(std::size_t index, Matrix&& g);

  std::vector<Node> nodes_;
  std::optional<Op> fault_op_;
  double fault_scale_ = 1.0;
};

inline const Matrix& evaluate(const Graph& graph, NodeId root) { return graph.value(root); }

/// Normal(0, 2 / (fan_in + fan_out)) with fan_in = rows, fan_out = cols.
Matrix xavier_normal_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);
Matrix xavier_normal_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

Matrix project_nonnegative(Matrix m);

/// Bias-corrected Adam update; projects constrained tensors afterwards. Throws NumericError on a
/// non-finite gradient.
void adam_step(ParamTensor& param, const Matrix& grad, const AdamConfig& cfg);

struct GradientCheck {
  std::string label;
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct GradientReport {
  std::vector<GradientCheck> checks;
  bool all_passed() const;
  const GradientCheck* find(std::string_view label) const;
};

using GraphBuilder = std::function<NodeId(Graph&)>;

struct GradientCheckOptions {
  double h = 1e-3;
  double tolerance = 1e-3;
  std::size_t samples_per_param = 12;
  std::uint64_t seed = 0;
  std::optional<Op> faulty_op;
};

/// Compares backward() against five-point central differences on sampled parameter entries. The relative error
/// is |a - n| / max(|a|, |n|, 1e-8). Parameters are restored before returning.
GradientCheck finite_difference_check(const GraphBuilder& build, std::span<ParamTensor* const> params,
                                      std::string label, const GradientCheckOptions& options = {});

}  // namespace cdm
