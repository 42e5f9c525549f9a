#include "cdm/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace cdm {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void dimension_error(Op op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

}  // namespace

ParamTensor::ParamTensor(std::string n, Matrix init, bool c)
    : name(std::move(n)), value(std::move(init)), constrained(c) {}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Sigmoid: return "sigmoid";
    case Op::ElementwiseMul: return "elementwise_mul";
    case Op::Subtract: return "subtract";
    case Op::BceLoss: return "bce_loss";
    case Op::Mask: return "mask";
    case Op::ConcatRows: return "concat_rows";
    case Op::GatherRows: return "gather_rows";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
  }
  return "unknown";
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::parameter(const ParamTensor& p) {
  Node n{Op::Parameter};
  n.param = &p;
  return push(std::move(n));
}

NodeId Graph::constant(Matrix value) {
  Node n{Op::Constant};
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const auto& va = at(a).val();
  const auto& vb = at(b).val();
  if (va.cols() != vb.rows()) dimension_error(Op::MatMul, va, vb);
  Node n{Op::MatMul, a.index, b.index};
  n.value.noalias() = va * vb;
  return push(std::move(n));
}

NodeId Graph::add_bias(NodeId a, NodeId bias) {
  const auto& va = at(a).val();
  const auto& vb = at(bias).val();
  if (vb.rows() != 1 || vb.cols() != va.cols()) dimension_error(Op::AddBias, va, vb);
  Node n{Op::AddBias, a.index, bias.index};
  n.value = va.rowwise() + vb.row(0);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
  Node n{Op::Sigmoid, a.index};
  n.value = at(a).val().unaryExpr([](double z) { return cdm::sigmoid(z); });
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const auto& va = at(a).val();
  const auto& vb = at(b).val();
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) dimension_error(Op::ElementwiseMul, va, vb);
  Node n{Op::ElementwiseMul, a.index, b.index};
  n.value = va.cwiseProduct(vb);
  return push(std::move(n));
}

NodeId Graph::subtract(NodeId a, NodeId b) {
  const auto& va = at(a).val();
  const auto& vb = at(b).val();
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) dimension_error(Op::Subtract, va, vb);
  Node n{Op::Subtract, a.index, b.index};
  n.value = va - vb;
  return push(std::move(n));
}

NodeId Graph::bce_loss(NodeId prediction, Matrix targets) {
  const auto& y = at(prediction).val();
  if (y.rows() != targets.rows() || y.cols() != targets.cols()) dimension_error(Op::BceLoss, y, targets);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y.data()[i], kBceClamp, 1.0 - kBceClamp);
    const double r = targets.data()[i];
    loss -= r * std::log(p) + (1.0 - r) * std::log(1.0 - p);
  }
  Node n{Op::BceLoss, prediction.index};
  n.value = Matrix::Constant(1, 1, loss);
  n.aux = std::move(targets);
  return push(std::move(n));
}

NodeId Graph::mask(NodeId a, Matrix mask) {
  const auto& va = at(a).val();
  if (va.rows() != mask.rows() || va.cols() != mask.cols()) dimension_error(Op::Mask, va, mask);
  Node n{Op::Mask, a.index};
  n.value = va.cwiseProduct(mask);
  n.aux = std::move(mask);
  return push(std::move(n));
}

NodeId Graph::concat_rows(NodeId top, NodeId bottom) {
  const auto& vt = at(top).val();
  const auto& vb = at(bottom).val();
  if (vt.cols() != vb.cols()) dimension_error(Op::ConcatRows, vt, vb);
  Node n{Op::ConcatRows, top.index, bottom.index};
  n.value.resize(vt.rows() + vb.rows(), vt.cols());
  n.value << vt, vb;
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<Eigen::Index> rows) {
  const auto& va = at(a).val();
  Node n{Op::GatherRows, a.index};
  n.value.resize(static_cast<Eigen::Index>(rows.size()), va.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= va.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape(va));
    }
    n.value.row(static_cast<Eigen::Index>(i)) = va.row(rows[i]);
  }
  n.rows = std::move(rows);
  return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
  Node n{Op::Log, a.index};
  n.value = at(a).val().array().log().matrix();
  return push(std::move(n));
}

NodeId Graph::exp(NodeId a) {
  Node n{Op::Exp, a.index};
  n.value = at(a).val().array().exp().matrix();
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Graph::accumulate(std::size_t index, Matrix&& g) {
  auto& node = nodes_[index];
  if (node.op == Op::Constant) return;
  if (node.grad.size() == 0) node.grad = std::move(g);
  else node.grad += g;
}

std::vector<ParamGradient> Graph::backward(NodeId root) {
  const auto& r = at(root).val();
  if (r.rows() != 1 || r.cols() != 1) {
    throw DimensionError("backward: root must be 1x1, got " + shape(r));
  }
  for (auto& node : nodes_) node.grad.resize(0, 0);

  // Nodes that do not depend on any parameter never need a gradient.
  std::vector<char> live(nodes_.size(), 0);
  for (std::size_t i = 0; i <= root.index; ++i) {
    const auto& n = nodes_[i];
    switch (n.op) {
      case Op::Parameter: live[i] = 1; break;
      case Op::Constant: break;
      case Op::MatMul:
      case Op::AddBias:
      case Op::ElementwiseMul:
      case Op::Subtract:
      case Op::ConcatRows: live[i] = live[n.lhs] || live[n.rhs]; break;
      default: live[i] = live[n.lhs]; break;
    }
  }

  nodes_[root.index].grad = Matrix::Ones(1, 1);
  std::vector<ParamGradient> out;
  std::unordered_map<const ParamTensor*, std::size_t> slot;

  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (!live[i] || nodes_[i].grad.size() == 0) continue;
    const Node& n = nodes_[i];
    const Matrix& g = n.grad;
    const double scale = fault_op_ && *fault_op_ == n.op ? fault_scale_ : 1.0;
    const auto push_grad = [&](std::size_t input, Matrix dg) {
      if (!live[input]) return;
      if (scale != 1.0) dg *= scale;
      accumulate(input, std::move(dg));
    };

    switch (n.op) {
      case Op::Parameter: {
        auto [it, inserted] = slot.try_emplace(n.param, out.size());
        if (inserted) out.push_back({n.param, std::move(nodes_[i].grad)});
        else out[it->second].grad += g;
        break;
      }
      case Op::Constant: break;
      case Op::MatMul: {
        const auto& a = nodes_[n.lhs].val();
        const auto& b = nodes_[n.rhs].val();
        if (live[n.lhs]) push_grad(n.lhs, g * b.transpose());
        if (live[n.rhs]) push_grad(n.rhs, a.transpose() * g);
        break;
      }
      case Op::AddBias:
        push_grad(n.lhs, g);
        push_grad(n.rhs, g.colwise().sum());
        break;
      case Op::Sigmoid:
        push_grad(n.lhs, g.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
        break;
      case Op::ElementwiseMul:
        push_grad(n.lhs, g.cwiseProduct(nodes_[n.rhs].val()));
        push_grad(n.rhs, g.cwiseProduct(nodes_[n.lhs].val()));
        break;
      case Op::Subtract:
        push_grad(n.lhs, g);
        push_grad(n.rhs, -g);
        break;
      case Op::BceLoss: {
        const auto& y = nodes_[n.lhs].val();
        Matrix dy(y.rows(), y.cols());
        for (Eigen::Index k = 0; k < y.size(); ++k) {
          const double p = std::clamp(y.data()[k], kBceClamp, 1.0 - kBceClamp);
          const double t = n.aux.data()[k];
          dy.data()[k] = g(0, 0) * (-t / p + (1.0 - t) / (1.0 - p));
        }
        push_grad(n.lhs, std::move(dy));
        break;
      }
      case Op::Mask:
        push_grad(n.lhs, g.cwiseProduct(n.aux));
        break;
      case Op::ConcatRows: {
        const auto top_rows = nodes_[n.lhs].val().rows();
        push_grad(n.lhs, g.topRows(top_rows));
        push_grad(n.rhs, g.bottomRows(g.rows() - top_rows));
        break;
      }
      case Op::GatherRows: {
        const auto& src = nodes_[n.lhs].val();
        Matrix dsrc = Matrix::Zero(src.rows(), src.cols());
        for (std::size_t k = 0; k < n.rows.size(); ++k) dsrc.row(n.rows[k]) += g.row(static_cast<Eigen::Index>(k));
        push_grad(n.lhs, std::move(dsrc));
        break;
      }
      case Op::Log:
        push_grad(n.lhs, g.cwiseQuotient(nodes_[n.lhs].val()));
        break;
      case Op::Exp:
        push_grad(n.lhs, g.cwiseProduct(n.value));
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

Matrix xavier_normal_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  if (rows < 1 || cols < 1) throw DimensionError("xavier_normal_init: fan_in and fan_out must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix xavier_normal_init(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return xavier_normal_init(rows, cols, rng);
}

Matrix project_nonnegative(Matrix m) {
  m = m.cwiseMax(0.0);
  return m;
}

void adam_step(ParamTensor& param, const Matrix& grad, const AdamConfig& cfg) {
  if (grad.rows() != param.value.rows() || grad.cols() != param.value.cols()) {
    throw DimensionError("adam_step: gradient " + shape(grad) + " does not match " + param.name + " " +
                         shape(param.value));
  }
  // Any inf or NaN entry turns the probe into NaN.
  double probe = 0.0;
  for (Eigen::Index i = 0; i < grad.size(); ++i) probe += grad.data()[i] * 0.0;
  if (probe != 0.0) throw NumericError("non-finite gradient for " + param.name);
  if (param.adam_m.size() == 0) {
    param.adam_m = Matrix::Zero(grad.rows(), grad.cols());
    param.adam_v = Matrix::Zero(grad.rows(), grad.cols());
  }
  ++param.step;
  const double t = static_cast<double>(param.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double step_size = cfg.lr / c1;
  const double inv_c2 = 1.0 / c2;
  const double* g = grad.data();
  double* m = param.adam_m.data();
  double* v = param.adam_v.data();
  double* w = param.value.data();
  const Eigen::Index size = grad.size();
  for (Eigen::Index i = 0; i < size; ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + cfg.eps);
  }
  if (param.constrained) param.value = param.value.cwiseMax(0.0);
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

bool GradientReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const GradientCheck& c) { return c.passed; });
}

const GradientCheck* GradientReport::find(std::string_view label) const {
  for (const auto& c : checks) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

GradientCheck finite_difference_check(const GraphBuilder& build, std::span<ParamTensor* const> params,
                                      std::string label, const GradientCheckOptions& options) {
  Graph graph;
  if (options.faulty_op) graph.inject_gradient_fault(*options.faulty_op);
  const NodeId root = build(graph);
  const auto grads = graph.backward(root);

  const auto scalar_at = [&]() {
    Graph g;
    return g.value(build(g))(0, 0);
  };

  GradientCheck check;
  check.label = std::move(label);
  std::mt19937_64 rng(options.seed);
  for (ParamTensor* p : params) {
    Matrix analytic = Matrix::Zero(p->value.rows(), p->value.cols());
    for (const auto& pg : grads) {
      if (pg.param == p) analytic = pg.grad;
    }
    const auto size = static_cast<std::size_t>(p->value.size());
    std::vector<std::size_t> entries;
    if (size <= options.samples_per_param) {
      for (std::size_t i = 0; i < size; ++i) entries.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, size - 1);
      for (std::size_t i = 0; i < options.samples_per_param; ++i) entries.push_back(pick(rng));
    }
    for (auto e : entries) {
      double& slot = p->value.data()[e];
      const double original = slot;
      const auto at = [&](double offset) {
        slot = original + offset;
        return scalar_at();
      };
      const double h = options.h;
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      slot = original;
      const double a = analytic.data()[e];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      check.max_relative_error = std::max(check.max_relative_error, std::abs(a - numeric) / denom);
      ++check.checked;
    }
  }
  check.passed = check.max_relative_error <= options.tolerance;
  return check;
}

}  // namespace cdm
