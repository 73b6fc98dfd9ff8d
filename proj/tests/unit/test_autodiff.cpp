#include "doctest.h"

#include "gfm/autodiff.hpp"
#include "testing.hpp"

#include <cmath>

using namespace gfm;
using namespace gfm::ad;
using gfm::testing::Matrices;

namespace {

// Evaluates a scalar expression and its tape gradient at `point`.
struct Evaluated {
  double value;
  Matrices grads;
};

Evaluated evaluate(const TapeFunction& f, const Matrices& point) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : point) leaves.emplace_back(tape, tape.leaf(m));
  const Var out = f(tape, leaves);
  tape.backward(out.id());
  Evaluated e{out.scalar(), {}};
  for (const auto& v : leaves) e.grads.push_back(v.grad());
  return e;
}

double max_rel_error(const TapeFunction& f, const Matrices& point) {
  const Evaluated e = evaluate(f, point);
  const Matrices numeric = gfm::testing::numeric_gradient(
      [&](const Matrices& p) { return evaluate(f, p).value; }, point);
  double worst = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Matrix diff = (e.grads[k] - numeric[k]).cwiseAbs();
    const Matrix scale = e.grads[k].cwiseAbs().cwiseMax(1.0);
    worst = std::max(worst, diff.cwiseQuotient(scale).maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("prelu values") {
  CHECK(prelu(2.0) == 2.0);
  CHECK(prelu(-2.0) == -1.0);
  CHECK(prelu(0.0) == 0.0);
}

TEST_CASE("softplus values and asymptotes") {
  CHECK(softplus(0.0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(std::abs(softplus(100.0) - 100.0) <= 1e-12);
  CHECK(std::abs(softplus(-100.0) - std::exp(-100.0)) <= 1e-12 * std::exp(-100.0));
  CHECK(std::isfinite(softplus(1000.0)));
  CHECK(softplus(-1000.0) >= 0.0);
}

TEST_CASE("record applies shape rules") {
  Tape tape;
  const NodeId a = tape.leaf(Matrix::Ones(2, 3));
  const NodeId b = tape.leaf(Matrix::Ones(3, 1));
  const NodeId ab = tape.record(Op::MatMul, std::array{a, b});
  CHECK(tape.value(ab).rows() == 2);
  CHECK(tape.value(ab).cols() == 1);

  const NodeId c = tape.leaf(Matrix::Ones(2, 1));
  const NodeId d = tape.leaf(Matrix::Ones(3, 1));
  CHECK_THROWS_AS(tape.record(Op::Add, std::array{c, d}), ShapeError);
  try {
    tape.record(Op::Add, std::array{c, d});
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("2x1") != std::string::npos);
    CHECK(std::string(e.what()).find("3x1") != std::string::npos);
  }

  const NodeId s = tape.leaf(5.0);
  CHECK(tape.value(s).rows() == 1);
  CHECK(tape.value(s)(0, 0) == 5.0);
  CHECK(tape.node(s).op == Op::Leaf);
}

TEST_CASE("backward on small expressions") {
  SUBCASE("x * x at 3") {
    Tape tape;
    const Var x(tape, tape.leaf(3.0));
    const Var f = x * x;
    tape.backward(f.id());
    CHECK(x.grad()(0, 0) == 6.0);
  }
  SUBCASE("softplus slope at 0") {
    Tape tape;
    const Var x(tape, tape.leaf(0.0));
    tape.backward(softplus(x).id());
    CHECK(x.grad()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("sum(W v) with v = (1, 2)") {
    Tape tape;
    Matrix w(2, 2);
    w << 0.3, -1.2, 2.0, 0.7;
    Matrix v(2, 1);
    v << 1.0, 2.0;
    const Var W(tape, tape.leaf(w));
    const Var V = constant(tape, v);
    tape.backward(sum(matmul(W, V)).id());
    Matrix expected(2, 2);
    expected << 1.0, 2.0, 1.0, 2.0;
    CHECK((W.grad() - expected).cwiseAbs().maxCoeff() == 0.0);
    const Matrices numeric = gfm::testing::numeric_gradient(
        [&](const Matrices& p) { return (p[0] * v).sum(); }, {w});
    CHECK((numeric[0] - expected).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("reused node accumulates") {
    Tape tape;
    const Var x(tape, tape.leaf(1.5));
    const Var f = x * x + x;
    tape.backward(f.id());
    CHECK(x.grad()(0, 0) == doctest::Approx(4.0));
  }
  SUBCASE("prelu slope at 0 is 1") {
    Tape tape;
    const Var x(tape, tape.leaf(0.0));
    tape.backward(prelu(x).id());
    CHECK(x.grad()(0, 0) == 1.0);
  }
  SUBCASE("seed must be scalar") {
    Tape tape;
    const Var x(tape, tape.leaf(Matrix::Ones(1, 2)));
    CHECK_THROWS_AS(tape.backward(x.id()), ShapeError);
  }
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(11);
  using gfm::testing::uniform_matrix;
  struct Case {
    const char* name;
    TapeFunction f;
    Matrices point;
  };
  const Matrix a = uniform_matrix(rng, 2, 3, -2.0, 2.0);
  const Matrix b = uniform_matrix(rng, 2, 3, -2.0, 2.0);
  const Matrix pos = uniform_matrix(rng, 2, 3, 0.5, 3.0);
  const Matrix w = uniform_matrix(rng, 3, 4, -1.0, 1.0);
  const Matrix weights = uniform_matrix(rng, 2, 3, -1.0, 1.0);
  auto weighted = [weights](Tape& t, const Var& v) { return sum(v * constant(t, weights)); };
  auto weighted4 = [](Tape& t, const Var& v) {
    return sum(v * constant(t, Matrix(Eigen::RowVectorXd::LinSpaced(v.cols(), 0.3, 1.7).replicate(v.rows(), 1))));
  };
  const std::vector<Case> cases{
      {"add", [&](Tape& t, std::span<const Var> v) { return weighted(t, v[0] + v[1]); }, {a, b}},
      {"sub", [&](Tape& t, std::span<const Var> v) { return weighted(t, v[0] - v[1]); }, {a, b}},
      {"mul", [&](Tape& t, std::span<const Var> v) { return weighted(t, v[0] * v[1]); }, {a, b}},
      {"div", [&](Tape& t, std::span<const Var> v) { return weighted(t, v[0] / v[1]); }, {a, pos}},
      {"matmul", [&](Tape& t, std::span<const Var> v) { return weighted4(t, matmul(v[0], v[1])); }, {a, w}},
      {"exp", [&](Tape& t, std::span<const Var> v) { return weighted(t, exp(v[0])); }, {a}},
      {"log", [&](Tape& t, std::span<const Var> v) { return weighted(t, log(v[0])); }, {pos}},
      {"sqrt", [&](Tape& t, std::span<const Var> v) { return weighted(t, sqrt(v[0])); }, {pos}},
      {"square", [&](Tape& t, std::span<const Var> v) { return weighted(t, square(v[0])); }, {a}},
      {"tanh", [&](Tape& t, std::span<const Var> v) { return weighted(t, tanh(v[0])); }, {a}},
      {"sigmoid", [&](Tape& t, std::span<const Var> v) { return weighted(t, sigmoid(v[0])); }, {a}},
      {"prelu", [&](Tape& t, std::span<const Var> v) { return weighted(t, prelu(v[0])); }, {a}},
      {"softplus", [&](Tape& t, std::span<const Var> v) { return weighted(t, softplus(v[0])); }, {a}},
      {"sum", [&](Tape&, std::span<const Var> v) { return sum(square(v[0])); }, {a}},
      {"broadcast",
       [&](Tape& t, std::span<const Var> v) { return weighted(t, broadcast(v[0], 2, 3) * v[1]); },
       {Matrix::Constant(1, 1, 0.7), a}},
      {"scale", [&](Tape& t, std::span<const Var> v) { return weighted(t, -2.5 * v[0]); }, {a}},
      {"shift", [&](Tape& t, std::span<const Var> v) { return weighted(t, square(v[0] + 1.25)); }, {a}},
      {"clamp_min", [&](Tape& t, std::span<const Var> v) { return weighted(t, square(clamp_min(v[0], 0.1))); },
       {a}},
      {"slice_cols", [&](Tape&, std::span<const Var> v) { return sum(square(slice_cols(v[0], 1, 2))); }, {a}},
      {"concat_cols", [&](Tape& t, std::span<const Var> v) {
         return weighted4(t, square(concat_cols(slice_cols(v[0], 0, 1), v[1])));
       }, {a, b}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(max_rel_error(c.f, c.point) < 1e-6);
    CHECK(grad_check(c.f, c.point) < 1e-6);
  }
}

TEST_CASE("gradients of random compositions (property)") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = gfm::testing::uniform_matrix(rng, 1, 4, -1.5, 1.5);
    const Matrix w1 = gfm::testing::uniform_matrix(rng, 4, 5, -1.0, 1.0);
    const Matrix w2 = gfm::testing::uniform_matrix(rng, 5, 2, -1.0, 1.0);
    const TapeFunction f = [](Tape&, std::span<const Var> v) {
      const Var h = prelu(matmul(v[0], v[1]));
      const Var out = softplus(matmul(tanh(h), v[2]));
      return sum(log(out + 1.0)) + sum(sigmoid(h) * exp(-1.0 * square(h)));
    };
    CAPTURE(trial);
    CHECK(max_rel_error(f, {x, w1, w2}) < 1e-6);
  }
}

TEST_CASE("grad_check reference cases") {
  SUBCASE("quadratic form") {
    Matrix q(3, 3);
    q << 2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 3.0;
    const Matrix x = (Matrix(1, 3) << 0.4, -1.1, 0.9).finished();
    const TapeFunction f = [q](Tape& t, std::span<const Var> v) {
      return sum(matmul(v[0], constant(t, q)) * v[0]);
    };
    CHECK(grad_check(f, std::vector<Matrix>{x}) < 1e-6);
    // Exact gradient of x Q x^T is x (Q + Q^T).
    const Evaluated e = evaluate(f, {x});
    CHECK((e.grads[0] - x * (q + q.transpose())).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("constant function") {
    const TapeFunction f = [](Tape& t, std::span<const Var> v) {
      return sum(v[0] * 0.0) + constant(t, 3.0);
    };
    CHECK(grad_check(f, std::vector<Matrix>{Matrix::Ones(2, 2)}) == 0.0);
  }
}

TEST_CASE("truncate keeps earlier nodes") {
  Tape tape;
  const Var a(tape, tape.leaf(2.0));
  const std::size_t mark = tape.size();
  const Var b = exp(a);
  CHECK(tape.size() > mark);
  tape.truncate(mark);
  CHECK(tape.size() == mark);
  CHECK(a.scalar() == 2.0);
  (void)b;
  const Var c = a * a;
  tape.backward(c.id());
  CHECK(a.grad()(0, 0) == 4.0);
}
