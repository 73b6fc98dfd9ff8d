#include "gfm/fixtures.hpp"

#include <cmath>
#include <cstdio>

namespace gfm {

namespace {

struct Moment {
  double mean;
  double sd;
};

// Cross-sectional mean and deviation of daily-percent estimates on large caps.
struct Calibration {
  Moment alpha0;
  std::vector<Moment> alpha;
  Moment beta0;
  std::vector<Moment> beta;
  std::vector<double> a;
  std::vector<double> c;
};

Calibration calibration(const ModelSpec& spec) {
  const bool two = spec.n_z == 2;
  switch (spec.family) {
    case Family::APT:
      if (two) return {{9.190e-4, 1.503e-3}, {{0.5495, 0.1048}, {0.1377, 0.1280}}, {0.7994, 0.0988}, {}, {}, {}};
      return {{4.414e-4, 1.689e-3}, {{0.5509, 0.1050}}, {0.8237, 0.07347}, {}, {}, {}};
    case Family::LSVFM:
      if (two) return {{1.250e-2, 1.146e-2}, {}, {-1.301, 0.2679}, {{0.527, 0.09002}, {0.2, 0.05}}, {0.9556, 0.5}, {}};
      return {{1.250e-2, 1.146e-2}, {}, {-1.301, 0.2679}, {{0.527, 0.09002}}, {0.9556}, {}};
    case Family::SRSVFM:
      if (two) return {{1.664e-2, 1.016e-2}, {}, {5.593e-2, 6.604e-2}, {{0.363, 0.03492}, {0.1, 0.02}}, {0.4984, 0.5}, {3.204, 1.0}};
      return {{1.664e-2, 1.016e-2}, {}, {5.593e-2, 6.604e-2}, {{0.363, 0.03492}}, {0.4984}, {3.204}};
    case Family::APTL:
      return {{-2.125e-3, 1.044e-2}, {{0.54521, 0.08888}}, {-0.7782, 0.1811}, {{0.308, 0.05668}}, {0.91}, {}};
    case Family::APTSR:
      return {{0.7987, 0.132}, {{1.009, 0.1687}}, {3.533e-2, 5.808e-2}, {{0.9585, 0.191}}, {0.7012}, {0.9424}};
    default:
      break;
  }
  throw ModelError(spec.label() + " has no parametric calibration");
}

constexpr double kMinLoading = 0.01;

}  // namespace

ParamSet fixture_theta(const ModelSpec& spec, Rng& rng, const FixtureOptions& options) {
  if (spec.is_network()) return init_theta(spec, rng);

  const Calibration cal = calibration(spec);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Moment m) { return m.mean + options.dispersion * m.sd * normal(rng); };
  const int n = spec.n_x;

  ParametricParams p;
  p.alpha0.resize(n);
  p.beta0.resize(n);
  p.alpha.resize(spec.mean_factors(), n);
  p.beta.resize(spec.variance_factors(), n);
  for (int i = 0; i < n; ++i) {
    p.alpha0(i) = draw(cal.alpha0);
    p.beta0(i) = draw(cal.beta0);
    if (spec.family == Family::APT) p.beta0(i) = std::max(p.beta0(i), 0.05);
    for (int j = 0; j < p.alpha.rows(); ++j) p.alpha(j, i) = std::max(draw(cal.alpha[j]), kMinLoading);
    for (int j = 0; j < p.beta.rows(); ++j) p.beta(j, i) = std::max(draw(cal.beta[j]), kMinLoading);
  }
  p.a = Eigen::Map<const RowVector>(cal.a.data(), static_cast<Eigen::Index>(cal.a.size()));
  if (options.persistence) p.a.setConstant(*options.persistence);
  p.c = Eigen::Map<const RowVector>(cal.c.data(), static_cast<Eigen::Index>(cal.c.size()));

  ParamSet theta;
  set_constrained_params(spec, p, theta);
  return theta;
}

Fixture make_fixture(const ModelSpec& spec, const FixtureOptions& options) {
  if (options.steps < 1) throw std::invalid_argument("fixture needs at least one step");
  Rng rng(options.seed);
  Fixture f;
  f.spec = spec;
  f.theta = fixture_theta(spec, rng, options);
  const std::uint64_t path_seed = rng();
  SimulatedPath path = simulate(spec, f.theta, static_cast<int>(options.steps),
                                initial_state(spec, f.theta), path_seed);

  if (options.regime_shift) {
    const Eigen::Index k = std::clamp<Eigen::Index>(*options.regime_shift, 0, options.steps);
    const Eigen::RowVectorXd mean = path.x.colwise().mean();
    for (Eigen::Index t = 0; t < k; ++t) {
      path.x.row(t) = mean + std::sqrt(2.0) * (path.x.row(t) - mean);
    }
  }

  f.panel.dates = business_days(options.start, static_cast<std::size_t>(options.steps));
  for (int i = 0; i < spec.n_x; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%03d", i + 1);
    f.panel.symbols.emplace_back(buf);
  }
  f.panel.returns = std::move(path.x);
  f.z_path = std::move(path.z);
  return f;
}

Fixture make_fixture(const FixtureOptions& options) {
  return make_fixture(ModelSpec::make(Family::APT, 1, 10), options);
}

}  // namespace gfm
