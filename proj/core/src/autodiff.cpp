#include "gfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gfm::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(Op op, const Matrix& a, const Matrix* b,
                              std::string_view detail = {}) {
  std::ostringstream os;
  os << "shape mismatch in " << op_name(op) << ": " << shape_str(a);
  if (b != nullptr) os << " vs " << shape_str(*b);
  if (!detail.empty()) os << " (" << detail << ")";
  throw ShapeError(os.str());
}

int expected_arity(Op op) {
  switch (op) {
    case Op::Leaf:
      return 0;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::MatMul:
    case Op::ConcatCols:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::PRelu: return "prelu";
    case Op::Softplus: return "softplus";
    case Op::Sum: return "sum";
    case Op::Broadcast: return "broadcast";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::ClampMin: return "clamp_min";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
  }
  return "unknown";
}

double prelu(double x) { return x >= 0.0 ? x : kPReluSlope * x; }

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix prelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return prelu(v); });
}

Matrix softplus(const Matrix& x) {
  return x.unaryExpr([](double v) { return softplus(v); });
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

std::size_t Tape::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("tape node id " + std::to_string(id) +
                            " out of range (size " +
                            std::to_string(nodes_.size()) + ")");
  }
  return static_cast<std::size_t>(id);
}

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::leaf(double value) { return leaf(Matrix::Constant(1, 1, value)); }

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

NodeId Tape::record(Op op, std::span<const NodeId> inputs, double aux,
                    Eigen::Index rows, Eigen::Index cols) {
  if (op == Op::Leaf) {
    throw std::invalid_argument("record: use Tape::leaf for leaf nodes");
  }
  if (static_cast<int>(inputs.size()) != expected_arity(op)) {
    throw std::invalid_argument("record: " + std::string(op_name(op)) +
                                " expects " +
                                std::to_string(expected_arity(op)) +
                                " inputs, got " + std::to_string(inputs.size()));
  }
  const Matrix& a = nodes_[check(inputs[0])].value;
  const Matrix* b = inputs.size() > 1 ? &nodes_[check(inputs[1])].value : nullptr;

  Node n;
  n.op = op;
  n.arity = static_cast<std::uint8_t>(inputs.size());
  n.parents[0] = inputs[0];
  if (b != nullptr) n.parents[1] = inputs[1];
  n.aux = aux;

  auto same_shape = [&] {
    if (a.rows() != b->rows() || a.cols() != b->cols()) shape_error(op, a, b);
  };

  switch (op) {
    case Op::Add:
      same_shape();
      n.value = a + *b;
      break;
    case Op::Sub:
      same_shape();
      n.value = a - *b;
      break;
    case Op::Mul:
      same_shape();
      n.value = a.cwiseProduct(*b);
      break;
    case Op::Div:
      same_shape();
      n.value = a.cwiseQuotient(*b);
      break;
    case Op::MatMul:
      if (a.cols() != b->rows()) shape_error(op, a, b, "inner dimensions");
      n.value.noalias() = a * *b;
      break;
    case Op::Exp:
      n.value = a.array().exp().matrix();
      break;
    case Op::Log:
      n.value = a.array().log().matrix();
      break;
    case Op::Sqrt:
      n.value = a.array().sqrt().matrix();
      break;
    case Op::Square:
      n.value = a.array().square().matrix();
      break;
    case Op::Tanh:
      n.value = a.array().tanh().matrix();
      break;
    case Op::Sigmoid:
      n.value = sigmoid(a);
      break;
    case Op::PRelu:
      n.value = prelu(a);
      break;
    case Op::Softplus:
      n.value = softplus(a);
      break;
    case Op::Sum:
      n.value = Matrix::Constant(1, 1, a.sum());
      break;
    case Op::Broadcast:
      if (a.rows() != 1 || a.cols() != 1) {
        shape_error(op, a, nullptr, "only scalar-to-array broadcast");
      }
      if (rows < 1 || cols < 1) shape_error(op, a, nullptr, "empty target");
      n.value = Matrix::Constant(rows, cols, a(0, 0));
      break;
    case Op::Scale:
      n.value = aux * a;
      break;
    case Op::Shift:
      n.value = a.array() + aux;
      break;
    case Op::ClampMin:
      n.value = a.cwiseMax(aux);
      break;
    case Op::SliceCols:
      if (rows < 0 || cols < 1 || rows + cols > a.cols()) {
        shape_error(op, a, nullptr,
                    "columns [" + std::to_string(rows) + ", " +
                        std::to_string(rows + cols) + ") out of range");
      }
      n.aux = static_cast<double>(rows);
      n.value = a.middleCols(rows, cols);
      break;
    case Op::ConcatCols:
      if (a.rows() != b->rows()) shape_error(op, a, b, "row counts differ");
      n.value.resize(a.rows(), a.cols() + b->cols());
      n.value << a, *b;
      break;
    case Op::Leaf:
      break;
  }
  return push(std::move(n));
}

void Tape::backward(NodeId seed) {
  const std::size_t s = check(seed);
  if (nodes_[s].value.rows() != 1 || nodes_[s].value.cols() != 1) {
    throw ShapeError("backward: seed node must be 1x1, got " +
                     shape_str(nodes_[s].value));
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].grad.setZero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  std::vector<char> live(s + 1, 0);
  nodes_[s].grad(0, 0) = 1.0;
  live[s] = 1;

  for (std::size_t k = s + 1; k-- > 0;) {
    if (!live[k]) continue;
    Node& n = nodes_[k];
    if (n.op == Op::Leaf) continue;
    const Matrix& g = n.grad;
    const std::size_t p0 = static_cast<std::size_t>(n.parents[0]);
    Matrix& g0 = nodes_[p0].grad;
    const Matrix& v0 = nodes_[p0].value;
    live[p0] = 1;
    Matrix* g1 = nullptr;
    const Matrix* v1 = nullptr;
    if (n.arity == 2) {
      const std::size_t p1 = static_cast<std::size_t>(n.parents[1]);
      g1 = &nodes_[p1].grad;
      v1 = &nodes_[p1].value;
      live[p1] = 1;
    }

    switch (n.op) {
      case Op::Add:
        g0 += g;
        *g1 += g;
        break;
      case Op::Sub:
        g0 += g;
        *g1 -= g;
        break;
      case Op::Mul:
        g0 += g.cwiseProduct(*v1);
        *g1 += g.cwiseProduct(v0);
        break;
      case Op::Div:
        g0 += g.cwiseQuotient(*v1);
        *g1 -= g.cwiseProduct(n.value).cwiseQuotient(*v1);
        break;
      case Op::MatMul:
        g0.noalias() += g * v1->transpose();
        g1->noalias() += v0.transpose() * g;
        break;
      case Op::Exp:
        g0 += g.cwiseProduct(n.value);
        break;
      case Op::Log:
        g0 += g.cwiseQuotient(v0);
        break;
      case Op::Sqrt:
        g0.array() += 0.5 * g.array() / n.value.array();
        break;
      case Op::Square:
        g0.array() += 2.0 * g.array() * v0.array();
        break;
      case Op::Tanh:
        g0.array() += g.array() * (1.0 - n.value.array().square());
        break;
      case Op::Sigmoid:
        g0.array() += g.array() * n.value.array() * (1.0 - n.value.array());
        break;
      case Op::PRelu:
        g0.array() += g.array() * v0.array().unaryExpr([](double x) { return x >= 0.0 ? 1.0 : kPReluSlope; });
        break;
      case Op::Softplus:
        g0 += g.cwiseProduct(sigmoid(v0));
        break;
      case Op::Sum:
        g0.array() += g(0, 0);
        break;
      case Op::Broadcast:
        g0(0, 0) += g.sum();
        break;
      case Op::Scale:
        g0 += n.aux * g;
        break;
      case Op::Shift:
        g0 += g;
        break;
      case Op::ClampMin:
        g0.array() += (v0.array() > n.aux).select(g.array(), 0.0);
        break;
      case Op::SliceCols:
        g0.middleCols(static_cast<Eigen::Index>(n.aux), g.cols()) += g;
        break;
      case Op::ConcatCols:
        g0 += g.leftCols(v0.cols());
        *g1 += g.rightCols(v1->cols());
        break;
      case Op::Leaf:
        break;
    }
  }
}

Var constant(Tape& tape, Matrix value) { return {tape, tape.leaf(std::move(value))}; }
Var constant(Tape& tape, double value) { return {tape, tape.leaf(value)}; }

namespace {

Var unary(Op op, const Var& a, double aux = 0.0) {
  const NodeId in[1] = {a.id()};
  return {a.tape(), a.tape().record(op, in, aux)};
}

Var binary(Op op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op_name(op)) +
                                ": operands live on different tapes");
  }
  const NodeId in[2] = {a.id(), b.id()};
  return {a.tape(), a.tape().record(op, in)};
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(Op::Add, a, b); }
Var operator-(const Var& a, const Var& b) { return binary(Op::Sub, a, b); }
Var operator*(const Var& a, const Var& b) { return binary(Op::Mul, a, b); }
Var operator/(const Var& a, const Var& b) { return binary(Op::Div, a, b); }
Var operator+(const Var& a, double c) { return unary(Op::Shift, a, c); }
Var operator+(double c, const Var& a) { return unary(Op::Shift, a, c); }
Var operator-(const Var& a, double c) { return unary(Op::Shift, a, -c); }
Var operator-(double c, const Var& a) { return unary(Op::Shift, unary(Op::Scale, a, -1.0), c); }
Var operator*(const Var& a, double c) { return unary(Op::Scale, a, c); }
Var operator*(double c, const Var& a) { return unary(Op::Scale, a, c); }
Var operator-(const Var& a) { return unary(Op::Scale, a, -1.0); }

Var matmul(const Var& a, const Var& b) { return binary(Op::MatMul, a, b); }
Var exp(const Var& a) { return unary(Op::Exp, a); }
Var log(const Var& a) { return unary(Op::Log, a); }
Var sqrt(const Var& a) { return unary(Op::Sqrt, a); }
Var square(const Var& a) { return unary(Op::Square, a); }
Var tanh(const Var& a) { return unary(Op::Tanh, a); }
Var sigmoid(const Var& a) { return unary(Op::Sigmoid, a); }
Var prelu(const Var& a) { return unary(Op::PRelu, a); }
Var softplus(const Var& a) { return unary(Op::Softplus, a); }
Var sum(const Var& a) { return unary(Op::Sum, a); }
Var clamp_min(const Var& a, double floor) { return unary(Op::ClampMin, a, floor); }

Var broadcast(const Var& scalar, Eigen::Index rows, Eigen::Index cols) {
  const NodeId in[1] = {scalar.id()};
  return {scalar.tape(), scalar.tape().record(Op::Broadcast, in, 0.0, rows, cols)};
}

Var slice_cols(const Var& a, Eigen::Index offset, Eigen::Index count) {
  const NodeId in[1] = {a.id()};
  return {a.tape(), a.tape().record(Op::SliceCols, in, 0.0, offset, count)};
}

Var concat_cols(const Var& a, const Var& b) { return binary(Op::ConcatCols, a, b); }

double grad_check(const TapeFunction& f, std::span<const Matrix> point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");

  auto evaluate = [&](std::span<const Matrix> at, Tape& tape) {
    std::vector<Var> leaves;
    leaves.reserve(at.size());
    for (const Matrix& m : at) leaves.push_back(constant(tape, m));
    return std::pair{f(tape, leaves), leaves};
  };

  Tape tape;
  auto [out, leaves] = evaluate(point, tape);
  tape.backward(out.id());

  std::vector<Matrix> probe(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const Matrix analytic = leaves[k].grad();
    for (Eigen::Index i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k](i);
      probe[k](i) = x0 + step;
      Tape tp;
      const double fp = evaluate(probe, tp).first.scalar();
      probe[k](i) = x0 - step;
      Tape tm;
      const double fm = evaluate(probe, tm).first.scalar();
      probe[k](i) = x0;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic(i);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace gfm::ad
