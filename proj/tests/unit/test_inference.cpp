#include "doctest.h"

#include "gfm/evaluation.hpp"
#include "gfm/fixtures.hpp"
#include "gfm/inference.hpp"
#include "testing.hpp"

#include <cmath>

using namespace gfm;
using gfm::testing::normal_log_pdf;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), r.data());
  return r;
}

// APT(1) on two assets with hand-set theta and an encoder whose output is the
// constant N(mu_q, var_q).
FittedModel constant_encoder_apt(double mu_q, double var_q) {
  const ModelSpec spec = ModelSpec::make(Family::APT, 1, 2);
  FittedModel m = init_model(spec, 1);
  ParametricParams p{row({0.1, -0.2}), (Matrix(1, 2) << 0.5, 0.8).finished(), row({0.9, 1.1}),
                     Matrix(0, 2), RowVector(), RowVector()};
  set_constrained_params(spec, p, m.theta);
  for (auto& [name, v] : m.phi) v.setZero();
  m.phi.set("encoder.mu.bias", Matrix::Constant(1, 1, mu_q));
  m.phi.set("encoder.var.bias", Matrix::Constant(1, 1, inverse_softplus(var_q)));
  return m;
}

}  // namespace

TEST_CASE("encoder basics") {
  for (const auto& spec : gfm::testing::all_specs(3)) {
    CAPTURE(spec.label());
    FittedModel m = init_model(spec, 4);
    const RowVector x = row({0.3, -1.0, 2.0});
    const RowVector memory = RowVector::Constant(spec.memory_width(), 0.25);
    CHECK(encode(spec, m.phi, x, memory).mu.size() == spec.n_z);
    for (auto& [name, v] : m.phi) v.setZero();
    const Gaussian q = encode(spec, m.phi, x, memory);
    CHECK(q.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.var.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("encoder variance is positive (property)") {
  Rng rng(12);
  const ModelSpec spec = ModelSpec::make(Family::NNFM, 2, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    const FittedModel m = gfm::testing::random_model(spec, static_cast<std::uint64_t>(trial), 1.0);
    const RowVector x = gfm::testing::gaussian_matrix(rng, 1, 4, 5.0).row(0);
    const RowVector memory = gfm::testing::uniform_matrix(rng, 1, spec.memory_width(), -1, 1).row(0);
    REQUIRE((encode(spec, m.phi, x, memory).var.array() > 0.0).all());
  }
}

TEST_CASE("reparameterized sample") {
  CHECK(reparam_sample(row({0.7, -1.0}), row({2.0, 3.0}), row({0.0, 0.0})) == row({0.7, -1.0}));
  CHECK(reparam_sample(row({0.0}), row({4.0}), row({1.5}))(0) == 3.0);
  CHECK_THROWS_AS(reparam_sample(row({0.0}), row({0.0}), row({1.0})), std::domain_error);

  ad::Tape tape;
  const Var mu(tape, tape.leaf(Matrix::Constant(1, 1, 0.4)));
  const Var var(tape, tape.leaf(Matrix::Constant(1, 1, 2.5)));
  const Var z = reparam_sample({mu, var}, ad::constant(tape, -0.8));
  tape.backward(ad::sum(z).id());
  CHECK(mu.grad()(0, 0) == 1.0);
}

TEST_CASE("KL divergence") {
  CHECK(kl_diag_normal(row({1.0}), row({1.0}), row({0.0}), row({1.0})) == 0.5);
  CHECK(kl_diag_normal(row({0.3, -2.0}), row({0.5, 4.0}), row({0.3, -2.0}), row({0.5, 4.0})) == 0.0);
  Rng rng(77);
  std::uniform_real_distribution<double> mu(-3.0, 3.0), var(0.05, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double mq = mu(rng), vq = var(rng), mp = mu(rng), vp = var(rng);
    const double kl = kl_diag_normal(row({mq}), row({vq}), row({mp}), row({vp}));
    CAPTURE(trial);
    CHECK(std::abs(kl - gfm::testing::kl_quadrature(mq, vq, mp, vp)) < 1e-6);
    CHECK(kl >= 0.0);
  }
  CHECK_THROWS_AS(kl_diag_normal(row({0.0}), row({-1.0}), row({0.0}), row({1.0})), std::domain_error);
}

TEST_CASE("single-step lower bound by hand") {
  const double mu_q = 0.3, var_q = 0.6, eps = -0.7;
  const FittedModel m = constant_encoder_apt(mu_q, var_q);
  const Matrix x = (Matrix(1, 2) << 0.5, -0.4).finished();
  const VlbResult r = vlb(m, x, initial_state(m.spec, m.theta), 1, Matrix::Constant(1, 1, eps));
  const double z = mu_q + std::sqrt(var_q) * eps;
  const double recon = normal_log_pdf(0.5, 0.1 + 0.5 * z, 0.81) + normal_log_pdf(-0.4, -0.2 + 0.8 * z, 1.21);
  const double kl = 0.5 * (var_q + mu_q * mu_q - 1.0 - std::log(var_q));
  CHECK(r.breakdown.recon == doctest::Approx(recon).epsilon(1e-12));
  CHECK(r.breakdown.kl == doctest::Approx(kl).epsilon(1e-12));
  CHECK(r.breakdown.total == doctest::Approx(recon - kl).epsilon(1e-12));
  CHECK(r.state_out.z(0) == doctest::Approx(z).epsilon(1e-14));
}

TEST_CASE("posterior equal to the prior gives zero KL") {
  const FittedModel m = constant_encoder_apt(0.0, 1.0);
  Rng rng(3);
  const Matrix x = gfm::testing::gaussian_matrix(rng, 5, 2);
  const VlbResult r = vlb(m, x, initial_state(m.spec, m.theta), 1, draw_eps(rng, 5, 1, 1));
  CHECK(std::abs(r.breakdown.kl) < 1e-12);
  CHECK(r.breakdown.total == doctest::Approx(r.breakdown.recon).epsilon(1e-12));
}

TEST_CASE("multiple samples average the reconstruction term") {
  const FittedModel m = gfm::testing::random_model(ModelSpec::make(Family::LSVFM, 1, 3), 5);
  Rng rng(8);
  const Matrix x = gfm::testing::gaussian_matrix(rng, 1, 3);
  const Matrix eps = draw_eps(rng, 1, 2, 1);
  const FactorState s0 = initial_state(m.spec, m.theta);
  const VlbResult both = vlb(m, x, s0, 2, eps);
  const VlbResult first = vlb(m, x, s0, 1, eps.topRows(1));
  const VlbResult second = vlb(m, x, s0, 1, eps.bottomRows(1));
  CHECK(both.breakdown.recon == doctest::Approx(0.5 * (first.breakdown.recon + second.breakdown.recon)).epsilon(1e-12));
  CHECK(both.breakdown.kl == doctest::Approx(first.breakdown.kl).epsilon(1e-12));
  CHECK(both.state_out == second.state_out);
  CHECK_THROWS_AS(vlb(m, x, s0, 2, eps.topRows(1)), ad::ShapeError);
}

TEST_CASE("lower bound gradient matches central differences") {
  // Independent finite differences over every raw parameter of a 3-step,
  // 2-asset APT(1) instance with fixed eps.
  const FittedModel m = gfm::testing::random_model(ModelSpec::make(Family::APT, 1, 2), 21);
  Rng rng(1);
  const Matrix x = gfm::testing::gaussian_matrix(rng, 3, 2);
  const Matrix eps = draw_eps(rng, 3, 1, 1);
  const FactorState s0 = initial_state(m.spec, m.theta);
  const VlbGradient g = vlb_gradient(m, x, s0, 1, eps);
  const ParamSet merged = m.merged();
  double worst = 0.0;
  for (const auto& [name, value] : merged) {
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      auto eval = [&](double delta) {
        FittedModel p = m;
        ParamSet q = merged;
        q.at(name).data()[i] += delta;
        p.assign(q);
        return vlb(p, x, s0, 1, eps).breakdown.total;
      };
      const double numeric = (eval(1e-5) - eval(-1e-5)) / 2e-5;
      const double analytic = g.gradient.at(name).data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("ADAM steps") {
  TrainingConfig config;
  config.learning_rate = 0.01;
  ParamSet params;
  params.set("w", (Matrix(1, 3) << 1.0, -2.0, 0.5).finished());

  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState s = adam_init(params);
    ParamSet p = params;
    adam_step(p, params.zeros_like(), s, config);
    CHECK(p == params);
  }
  SUBCASE("first step moves by the learning rate against the sign") {
    AdamState s = adam_init(params);
    ParamSet p = params;
    ParamSet g;
    g.set("w", (Matrix(1, 3) << 0.3, -4.0, 1e-3).finished());
    adam_step(p, g, s, config);
    const Matrix step = p.at("w") - params.at("w");
    CHECK(std::abs(step(0) + 0.01) < 1e-6);
    CHECK(std::abs(step(1) - 0.01) < 1e-6);
    CHECK(std::abs(step(2) + 0.01) < 1e-6);
  }
  SUBCASE("three steps follow the hand recursion") {
    AdamState s = adam_init(params);
    ParamSet p = params;
    const double grads[3] = {0.5, -0.2, 0.9};
    double m = 0.0, v = 0.0, w = 1.0;
    for (int k = 0; k < 3; ++k) {
      ParamSet g;
      g.set("w", Matrix::Constant(1, 3, grads[k]));
      adam_step(p, g, s, config);
      m = 0.9 * m + 0.1 * grads[k];
      v = 0.999 * v + 0.001 * grads[k] * grads[k];
      const double mh = m / (1.0 - std::pow(0.9, k + 1));
      const double vh = v / (1.0 - std::pow(0.999, k + 1));
      w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(s.m.at("w")(0) == doctest::Approx(m).epsilon(1e-14));
      CHECK(s.v.at("w")(0) == doctest::Approx(v).epsilon(1e-14));
      CHECK(p.at("w")(0) == doctest::Approx(w).epsilon(1e-14));
    }
    CHECK(s.step == 3);
  }
  SUBCASE("gradients are clipped to the configured norm") {
    AdamState s = adam_init(params);
    ParamSet p = params;
    ParamSet g;
    g.set("w", (Matrix(1, 3) << 300.0, 400.0, 0.0).finished());
    adam_step(p, g, s, config);
    // Clipped to norm 10: (6, 8, 0); first moment 0.1 * clipped gradient.
    CHECK(s.m.at("w")(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.m.at("w")(1) == doctest::Approx(0.8).epsilon(1e-12));
  }
}

TEST_CASE("training config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("fit contracts") {
  FixtureOptions opts;
  opts.steps = 300;
  opts.seed = 2;
  const Fixture f = make_fixture(ModelSpec::make(Family::APT, 1, 4), opts);
  TrainingConfig config;
  config.epochs = 6;
  config.seed = 9;
  const FittedModel init = init_model(f.spec, 9, &f.panel.returns);

  SUBCASE("deterministic and finite") {
    const FitResult a = fit(init, f.panel.returns, config);
    const FitResult b = fit(init, f.panel.returns, config);
    CHECK(a.curve == b.curve);
    CHECK(a.model.merged() == b.model.merged());
    CHECK(a.curve.size() == 6);
    for (double v : a.curve) CHECK(std::isfinite(v));
    CHECK(a.best_epoch == std::max_element(a.curve.begin(), a.curve.end()) - a.curve.begin());
  }
  SUBCASE("best epoch parameters are returned") {
    int calls = 0;
    const FitResult r = fit(init, f.panel.returns, config, [&](int, double) { ++calls; });
    CHECK(calls == 6);
    // Re-running with epochs = best_epoch + 1 ends on the same parameters.
    TrainingConfig shorter = config;
    shorter.epochs = r.best_epoch + 1;
    const FitResult s = fit(init, f.panel.returns, shorter);
    CHECK(s.model.merged() == r.model.merged());
  }
  SUBCASE("too-short data and too many factors") {
    config.window = 50;
    CHECK_THROWS_AS(fit(init, f.panel.returns.topRows(49), config), std::invalid_argument);
    const ModelSpec square = ModelSpec::make(Family::APT, 2, 2);
    CHECK_THROWS_AS(fit(init_model(square, 0), f.panel.returns.leftCols(2), config), ModelError);
  }
  SUBCASE("non-finite bound aborts with its position") {
    FittedModel broken = init;
    broken.theta.at("emission.alpha0")(0, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
      fit(broken, f.panel.returns, config);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.epoch() == 0);
      CHECK(e.window() == 0);
      CHECK(e.timestep() == 0);
    }
  }
}

TEST_CASE("fitted L-SVFM factor path is persistent") {
  FixtureOptions opts;
  opts.steps = 2000;
  opts.seed = 4;
  opts.persistence = 0.9;
  const Fixture f = make_fixture(ModelSpec::make(Family::LSVFM, 1, 10), opts);
  TrainingConfig config;
  config.epochs = 60;
  config.learning_rate = 0.01;
  config.seed = 1;
  const FitResult r = fit(init_model(f.spec, 1, &f.panel.returns), f.panel.returns, config);
  const FactorPath path = factor_path(r.model, f.panel);
  const Eigen::VectorXd z = path.mean.col(0);
  const double rho = gfm::testing::pearson(z.head(z.size() - 1), z.tail(z.size() - 1));
  CAPTURE(rho);
  CHECK(rho >= 0.7);
  CHECK(rho <= 0.99);
}
