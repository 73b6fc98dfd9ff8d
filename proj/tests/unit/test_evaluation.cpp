#include "doctest.h"

#include "gfm/evaluation.hpp"
#include "gfm/fixtures.hpp"
#include "testing.hpp"

#include <cmath>
#include <numeric>

using namespace gfm;
using gfm::testing::normal_log_pdf;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), r.data());
  return r;
}

// Log weight of one path recomputed from the value-level model functions.
double path_log_weight(const FittedModel& m, const Matrix& x, const Matrix& eps) {
  FactorState s = initial_state(m.spec, m.theta);
  double w = 0.0;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const RowVector memory = s.has_memory() ? s.hidden : s.z;
    const Gaussian q = encode(m.spec, m.phi, x.row(t), memory);
    const RowVector z = reparam_sample(q.mu, q.var, eps.row(t));
    w += log_emission_density(m.spec, m.theta, x.row(t), z) + log_prior_transition(m.spec, m.theta, z, s);
    for (int j = 0; j < m.spec.n_z; ++j) w -= normal_log_pdf(z(j), q.mu(j), q.var(j));
    s = advance_state(m.spec, m.theta, s, z);
  }
  return w;
}

FittedModel constant_encoder_apt(double mu_q, double var_q) {
  const ModelSpec spec = ModelSpec::make(Family::APT, 1, 2);
  FittedModel m = init_model(spec, 1);
  set_constrained_params(spec, {row({0.1, -0.2}), (Matrix(1, 2) << 0.5, 0.8).finished(), row({0.9, 1.1}),
                                Matrix(0, 2), RowVector(), RowVector()},
                         m.theta);
  for (auto& [name, v] : m.phi) v.setZero();
  m.phi.set("encoder.mu.bias", Matrix::Constant(1, 1, mu_q));
  m.phi.set("encoder.var.bias", Matrix::Constant(1, 1, inverse_softplus(var_q)));
  return m;
}

// Closed-form lower bound of constant_encoder_apt on x: the expectation of
// the Gaussian log density under z ~ N(mu_q, var_q) is available exactly.
double analytic_vlb(const Matrix& x, double mu_q, double var_q) {
  const double a0[2] = {0.1, -0.2}, a1[2] = {0.5, 0.8}, b0[2] = {0.9, 1.1};
  double total = 0.0;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (int i = 0; i < 2; ++i) {
      const double v = b0[i] * b0[i];
      total += normal_log_pdf(x(t, i), a0[i] + a1[i] * mu_q, v) - a1[i] * a1[i] * var_q / (2.0 * v);
    }
    total -= 0.5 * (var_q + mu_q * mu_q - 1.0 - std::log(var_q));
  }
  return total;
}

}  // namespace

TEST_CASE("one path equals the single-path integrand") {
  for (const auto& spec : gfm::testing::all_specs(3)) {
    CAPTURE(spec.label());
    const FittedModel m = gfm::testing::random_model(spec, 3);
    Rng rng(5);
    const Matrix x = gfm::testing::gaussian_matrix(rng, 6, 3);
    const Matrix eps = draw_eps(rng, 6, 1, spec.n_z);
    const MllEstimate e = mll_importance(m, x, initial_state(spec, m.theta), std::vector<Matrix>{eps});
    CHECK(e.num_samples == 1);
    CHECK(e.value == e.per_sample[0]);
    CHECK(e.log_mean_exp == e.value);
    CHECK(e.value == doctest::Approx(path_log_weight(m, x, eps)).epsilon(1e-10));
    // Same eps stream as training: the bound matches vlb() bit for bit.
    CHECK(e.vlb == vlb(m, x, initial_state(spec, m.theta), 1, eps).breakdown.total);
  }
}

TEST_CASE("Jensen ordering on a toy model") {
  const double mu_q = 0.2, var_q = 0.5;
  const FittedModel m = constant_encoder_apt(mu_q, var_q);
  Rng rng(10);
  const Matrix x = gfm::testing::gaussian_matrix(rng, 3, 2);
  const MllEstimate e = mll_importance(m, x, initial_state(m.spec, m.theta), 256, 17);
  const double exact = analytic_vlb(x, mu_q, var_q);
  CHECK(e.value >= exact - 3.0 * e.std_error);
  CHECK(std::abs(e.value - exact) <= 3.0 * e.std_error);
  CHECK(e.log_mean_exp >= e.value);
  // vlb() with its own draws is an unbiased estimate of the same quantity.
  CHECK(std::abs(e.vlb - exact) <= 3.0 * e.std_error);

  // One timestep, 256 seeds.
  const Matrix x1 = x.topRows(1);
  std::vector<double> w;
  for (std::uint64_t seed = 0; seed < 256; ++seed) {
    w.push_back(mll_importance(m, x1, initial_state(m.spec, m.theta), 1, seed).value);
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / 256.0;
  double ss = 0.0;
  for (double v : w) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / 255.0) / 16.0;
  CHECK(std::abs(mean - analytic_vlb(x1, mu_q, var_q)) <= 3.0 * se);
}

TEST_CASE("importance estimates are deterministic and thread-independent") {
  const FittedModel m = gfm::testing::random_model(ModelSpec::make(Family::NNFM, 1, 3), 8);
  Rng rng(2);
  const Matrix x = gfm::testing::gaussian_matrix(rng, 20, 3);
  const FactorState s0 = initial_state(m.spec, m.theta);
  const MllEstimate a = mll_importance(m, x, s0, 16, 4);
  const MllEstimate b = mll_importance(m, x, s0, 16, 4);
  const MllEstimate c = mll_importance(m, x, s0, 16, 4, 3);
  CHECK(a.per_sample == b.per_sample);
  CHECK(a.per_sample == c.per_sample);
  CHECK(a.per_sample_vlb == c.per_sample_vlb);
  CHECK(mll_importance(m, x, s0, 16, 5).per_sample != a.per_sample);
  CHECK_THROWS_AS(mll_importance(m, x, s0, 0, 4), std::invalid_argument);
}

TEST_CASE("non-finite weights name the path and timestep") {
  FittedModel m = gfm::testing::random_model(ModelSpec::make(Family::APT, 1, 2), 1);
  Matrix x = Matrix::Zero(4, 2);
  x(2, 1) = std::numeric_limits<double>::infinity();
  try {
    mll_importance(m, x, initial_state(m.spec, m.theta), 2, 0);
    FAIL("expected an error");
  } catch (const EvaluationError& e) {
    CHECK(std::string(e.what()).find("path 0") != std::string::npos);
    CHECK(std::string(e.what()).find("timestep 2") != std::string::npos);
  }
}

TEST_CASE("factor paths") {
  FixtureOptions opts;
  opts.steps = 120;
  const Fixture f = make_fixture(ModelSpec::make(Family::SRSVFM, 1, 4), opts);
  const FittedModel m = init_model(f.spec, 2, &f.panel.returns);
  const FactorPath a = factor_path(m, f.panel);
  const FactorPath b = factor_path(m, f.panel);
  CHECK(a.mean.rows() == 120);
  CHECK(a.dates == f.panel.dates);
  CHECK((a.sd.array() > 0.0).all());
  CHECK(a.mean == b.mean);
  CHECK(a.sd == b.sd);
  const std::string csv = factor_path_csv(a);
  CHECK(csv.substr(0, csv.find('\n')) == "date,mean_1,sd_1");
}

TEST_CASE("split evaluation") {
  FixtureOptions opts;
  opts.steps = 400;
  opts.seed = 3;
  const Fixture f = make_fixture(ModelSpec::make(Family::APT, 1, 5), opts);
  TrainingConfig config;
  config.epochs = 30;
  config.learning_rate = 0.01;
  const FitResult fitted = fit(init_model(f.spec, 0, &f.panel.returns), f.panel.returns, config);

  CHECK_THROWS_AS(evaluate_split(fitted.model, f.panel, f.panel.dates.front(), 8), EvaluationError);
  CHECK_THROWS_AS(evaluate_split(fitted.model, f.panel, Date{2030, 1, 1}, 8), EvaluationError);

  // Homogeneous data drawn from the fitted model itself.
  ReturnPanel homogeneous = f.panel;
  homogeneous.returns = simulate(f.spec, fitted.model.theta, 400, initial_state(f.spec, fitted.model.theta), 77).x;
  const Date divide = homogeneous.dates[250];
  const SplitScores s = evaluate_split(fitted.model, homogeneous, divide, 32);
  CHECK(s.train_days + s.test_days == 400);
  CHECK(s.train_days == 250);
  CHECK(std::abs(s.train.vlb_per_day - s.test.vlb_per_day) <= 0.1 * std::abs(s.train.vlb_per_day));
  for (const auto& r : {s.train, s.test}) {
    CHECK(r.mll_per_day >= r.vlb_per_day - 3.0 * r.mll_stderr);
  }
}

TEST_CASE("comparison tables") {
  FixtureOptions opts;
  opts.steps = 200;
  const Fixture f = make_fixture(ModelSpec::make(Family::APT, 1, 3), opts);
  std::vector<FittedModel> models;
  for (const auto& spec : {ModelSpec::make(Family::NNFM, 1, 3), ModelSpec::make(Family::LSVFM, 1, 3),
                           ModelSpec::make(Family::APT, 1, 3)}) {
    FittedModel m = init_model(spec, 1, &f.panel.returns);
    m.symbols = f.panel.symbols;
    models.push_back(m);
  }
  const Date divide = f.panel.dates[150];
  const auto single = compare({models[2]}, f.panel, divide, 16);
  REQUIRE(single.size() == 2);
  CHECK(single[0].split == SplitSide::Train);
  CHECK(single[1].split == SplitSide::Test);

  const auto rows = compare(models, f.panel, divide, 16);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].model == "APT(1)");
  CHECK(rows[2].model == "L-SVFM(1)");
  CHECK(rows[4].model == "NNFM(1)");
  for (const auto& r : rows) CHECK(r.mll_per_day >= r.vlb_per_day - 3.0 * r.mll_stderr);
  CHECK(parse_comparison_csv(comparison_csv(rows)) == rows);

  FittedModel other = models[0];
  other.symbols = {"A", "B", "C"};
  CHECK_THROWS_AS(compare({other}, f.panel, divide, 4), EvaluationError);
}

TEST_CASE("M-NNFM(1) factor tracks volatility") {
  FixtureOptions opts;
  opts.steps = 1500;
  opts.seed = 12;
  const Fixture f = make_fixture(ModelSpec::make(Family::MNNFM1, 1, 6), opts);
  TrainingConfig config;
  config.epochs = 40;
  config.learning_rate = 0.005;
  const FitResult r = fit(init_model(f.spec, 3, &f.panel.returns), f.panel.returns, config);
  const FactorPath path = factor_path(r.model, f.panel);
  const Eigen::VectorXd size = f.panel.returns.cwiseAbs().rowwise().mean();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(size.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return size(a) < size(b); });
  const std::size_t q = order.size() / 4;
  double calm = 0.0, wild = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    calm += path.mean(order[i], 0);
    wild += path.mean(order[order.size() - 1 - i], 0);
  }
  CHECK(wild / q > calm / q);
}
