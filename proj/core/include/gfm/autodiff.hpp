#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape is an append-only list of nodes in creation order, which is also a
// valid topological order. Every forward expression in the library (network
// heads, LSTM steps, Gaussian log densities, the variational lower bound) is
// recorded on a tape and differentiated with Tape::backward.
//
// Vectors are represented as 1 x n row matrices throughout, so a dense layer
// reads `x * W + b` with W stored as in_dim x out_dim.

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gfm::ad {

using Matrix = Eigen::MatrixXd;
using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Exp,
  Log,
  Sqrt,
  Square,
  Tanh,
  Sigmoid,
  PRelu,
  Softplus,
  Sum,
  Broadcast,
  Scale,
  Shift,
  ClampMin,
  SliceCols,
  ConcatCols,
};

std::string_view op_name(Op op);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Slope of the negative branch of PReLU. Fixed, not learned.
inline constexpr double kPReluSlope = 0.5;

// Elementwise kernels shared by the tape and by plain value code.
double prelu(double x);
double softplus(double x);
double sigmoid(double x);
Matrix prelu(const Matrix& x);
Matrix softplus(const Matrix& x);
Matrix sigmoid(const Matrix& x);

struct Node {
  Matrix value;
  Matrix grad;
  Op op = Op::Leaf;
  std::uint8_t arity = 0;
  std::array<NodeId, 2> parents{-1, -1};
  // Op-specific constant: scale factor, shift, clamp floor, or slice offset.
  double aux = 0.0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  NodeId leaf(Matrix value);
  NodeId leaf(double value);

  /// Appends one node computed by `op` from `inputs`. Throws ShapeError when
  /// the operand shapes do not satisfy the primitive's rule. For Broadcast,
  /// `aux` is unused and the target shape is (rows, cols); for SliceCols,
  /// `rows`/`cols` carry (offset, count).
  NodeId record(Op op, std::span<const NodeId> inputs, double aux = 0.0,
                Eigen::Index rows = 0, Eigen::Index cols = 0);

  /// Populates grad() for every node up to and including `seed` with
  /// d(seed)/d(node). Throws ShapeError if the seed is not 1 x 1.
  void backward(NodeId seed);

  const Matrix& value(NodeId id) const { return nodes_[check(id)].value; }
  const Matrix& grad(NodeId id) const { return nodes_[check(id)].grad; }
  const Node& node(NodeId id) const { return nodes_[check(id)]; }

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Drops every node with id >= n. Ids handed out before n stay valid.
  void truncate(std::size_t n);
  void clear() { nodes_.clear(); }

 private:
  std::size_t check(NodeId id) const;
  NodeId push(Node node);

  std::vector<Node> nodes_;
};

/// Lightweight handle to a tape node; arithmetic on handles records nodes.
class Var {
 public:
  Var() = default;
  Var(Tape& tape, NodeId id) : tape_(&tape), id_(id) {}

  NodeId id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const { return tape_->value(id_); }
  const Matrix& grad() const { return tape_->grad(id_); }
  double scalar() const { return value()(0, 0); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

Var constant(Tape& tape, Matrix value);
Var constant(Tape& tape, double value);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // elementwise
Var operator/(const Var& a, const Var& b);  // elementwise
Var operator+(const Var& a, double c);
Var operator+(double c, const Var& a);
Var operator-(const Var& a, double c);
Var operator-(double c, const Var& a);
Var operator*(const Var& a, double c);
Var operator*(double c, const Var& a);
Var operator-(const Var& a);

Var matmul(const Var& a, const Var& b);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var prelu(const Var& a);
Var softplus(const Var& a);
Var sum(const Var& a);
Var broadcast(const Var& scalar, Eigen::Index rows, Eigen::Index cols);
Var clamp_min(const Var& a, double floor);
Var slice_cols(const Var& a, Eigen::Index offset, Eigen::Index count);
Var concat_cols(const Var& a, const Var& b);

/// Builds a scalar expression on `tape` from one leaf per entry of the span.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares backward() against central differences at `point`. Returns the
/// maximum over all coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const TapeFunction& f, std::span<const Matrix> point,
                  double step = 1e-5);

}  // namespace gfm::ad
