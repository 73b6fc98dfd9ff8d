#include "gfm/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace gfm {

namespace {

constexpr std::string_view kLabels[] = {
    "APT(1)",     "APT(2)",     "L-SVFM(1)", "L-SVFM(2)", "SR-SVFM(1)", "SR-SVFM(2)",
    "APT-L(2)",   "APT-SR(2)",  "NNFM(1)",   "NNFM(2)",   "M-NNFM(1)",  "M-NNFM(2)"};

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

RowVector row(const Matrix& m) { return m.row(0); }

void require_row(const RowVector& v, Eigen::Index n, std::string_view what) {
  if (v.size() != n) {
    throw ad::ShapeError(std::string(what) + ": expected " + std::to_string(n) +
                         " entries, got " + std::to_string(v.size()));
  }
}

void require_finite(const RowVector& v, std::string_view what) {
  if (!v.allFinite()) throw std::domain_error(std::string(what) + " contains non-finite values");
}

Matrix column_means(const Matrix& x) { return x.colwise().mean(); }

Matrix column_variances(const Matrix& x) {
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Matrix v = centered.array().square().colwise().sum() / denom;
  return v.cwiseMax(1e-8);
}

Matrix map(const Matrix& m, double (*f)(double)) { return m.unaryExpr(f); }

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::APT: return "APT";
    case Family::LSVFM: return "L-SVFM";
    case Family::SRSVFM: return "SR-SVFM";
    case Family::APTL: return "APT-L";
    case Family::APTSR: return "APT-SR";
    case Family::NNFM: return "NNFM";
    case Family::MNNFM1:
    case Family::MNNFM2: return "M-NNFM";
  }
  return "?";
}

ModelSpec ModelSpec::make(Family family, int n_z, int n_x) {
  if (n_z != 1 && n_z != 2) {
    throw ModelError("factor count must be 1 or 2, got " + std::to_string(n_z));
  }
  if (n_x < 1) throw ModelError("asset count must be positive");
  // Strict n_z < n_x is checked by fit(); evaluation and gradient checks
  // accept n_z == n_x.
  if (n_z > n_x) {
    throw ModelError("factor count " + std::to_string(n_z) + " exceeds asset count " +
                     std::to_string(n_x));
  }
  const bool two_only = family == Family::APTL || family == Family::APTSR || family == Family::MNNFM2;
  if (two_only && n_z != 2) {
    throw ModelError(std::string(family_name(family)) + " requires two factors");
  }
  if (family == Family::MNNFM1 && n_z != 1) {
    throw ModelError("M-NNFM(1) is a one-factor model");
  }
  ModelSpec s;
  s.family = family;
  s.n_z = n_z;
  s.n_x = n_x;
  s.n_h = s.is_network() ? 3 * n_z : 0;
  return s;
}

ModelSpec ModelSpec::parse(std::string_view label, int n_x) {
  const auto open = label.find('(');
  const bool shaped = open != std::string_view::npos && label.size() == open + 3 &&
                      label.back() == ')' && (label[open + 1] == '1' || label[open + 1] == '2');
  if (!shaped) {
    throw ModelError("unknown model '" + std::string(label) + "'; valid models: " + valid_labels());
  }
  const std::string_view name = label.substr(0, open);
  const int n_z = label[open + 1] - '0';
  Family family;
  if (name == "APT") family = Family::APT;
  else if (name == "L-SVFM") family = Family::LSVFM;
  else if (name == "SR-SVFM") family = Family::SRSVFM;
  else if (name == "APT-L") family = Family::APTL;
  else if (name == "APT-SR") family = Family::APTSR;
  else if (name == "NNFM") family = Family::NNFM;
  else if (name == "M-NNFM") family = n_z == 1 ? Family::MNNFM1 : Family::MNNFM2;
  else {
    throw ModelError("unknown model '" + std::string(label) + "'; valid models: " + valid_labels());
  }
  try {
    return make(family, n_z, n_x);
  } catch (const ModelError& e) {
    throw ModelError("invalid model '" + std::string(label) + "': " + e.what() +
                     "; valid models: " + valid_labels());
  }
}

std::string ModelSpec::valid_labels() {
  std::string out;
  for (auto l : kLabels) {
    if (!out.empty()) out += ", ";
    out += l;
  }
  return out;
}

std::string ModelSpec::label() const {
  return std::string(family_name(family)) + "(" + std::to_string(n_z) + ")";
}

bool ModelSpec::is_network() const {
  return family == Family::NNFM || family == Family::MNNFM1 || family == Family::MNNFM2;
}

int ModelSpec::mean_factors() const {
  switch (family) {
    case Family::APT: return n_z;
    case Family::APTL:
    case Family::APTSR: return 1;
    default: return 0;
  }
}

int ModelSpec::variance_factors() const {
  switch (family) {
    case Family::LSVFM:
    case Family::SRSVFM: return n_z;
    case Family::APTL:
    case Family::APTSR: return 1;
    default: return 0;
  }
}

bool spec_less(const ModelSpec& a, const ModelSpec& b) {
  if (a.family != b.family) return a.family < b.family;
  return a.n_z < b.n_z;
}

// --- parametric constraints -------------------------------------------------

ParametricParams constrained_params(const ModelSpec& spec, const ParamSet& theta) {
  if (spec.is_network()) throw ModelError(spec.label() + " has no parametric form");
  ParametricParams p;
  p.alpha0 = row(theta.at("emission.alpha0"));
  p.beta0 = row(theta.at("emission.beta0"));
  if (spec.family == Family::APT) p.beta0 = row(map(theta.at("emission.beta0"), ad::softplus));
  if (spec.mean_factors() > 0) p.alpha = map(theta.at("emission.alpha"), ad::softplus);
  if (spec.variance_factors() > 0) {
    p.beta = map(theta.at("emission.beta"), ad::softplus);
    p.a = row(map(theta.at("transition.a"), ad::sigmoid));
  }
  if (spec.square_root()) p.c = row(map(theta.at("transition.c"), ad::softplus)).array() + 0.5;
  return p;
}

void set_constrained_params(const ModelSpec& spec, const ParametricParams& p, ParamSet& theta) {
  if (spec.is_network()) throw ModelError(spec.label() + " has no parametric form");
  const int nm = spec.mean_factors();
  const int nv = spec.variance_factors();
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) throw ModelError(spec.label() + ": " + what);
  };
  check(p.alpha0.size() == spec.n_x, "alpha0 must have n_x entries");
  check(p.beta0.size() == spec.n_x, "beta0 must have n_x entries");
  check(p.alpha.rows() == nm && (nm == 0 || p.alpha.cols() == spec.n_x), "alpha shape");
  check(p.beta.rows() == nv && (nv == 0 || p.beta.cols() == spec.n_x), "beta shape");
  check(p.a.size() == nv, "a shape");
  check(p.c.size() == (spec.square_root() ? nv : 0), "c shape");
  check(nm == 0 || (p.alpha.array() > 0.0).all(), "loadings alpha must be positive");
  check(nv == 0 || (p.beta.array() > 0.0).all(), "loadings beta must be positive");
  check((p.a.array() > 0.0).all() && (p.a.array() < 1.0).all(), "persistence a must lie in (0, 1)");
  check((p.c.array() > 0.5).all(), "drift c must exceed 0.5");
  if (spec.family == Family::APT) check((p.beta0.array() > 0.0).all(), "scale beta0 must be positive");

  theta.set("emission.alpha0", p.alpha0);
  theta.set("emission.beta0",
            spec.family == Family::APT ? Matrix(p.beta0.unaryExpr(&inverse_softplus)) : Matrix(p.beta0));
  if (nm > 0) theta.set("emission.alpha", p.alpha.unaryExpr(&inverse_softplus));
  if (nv > 0) {
    theta.set("emission.beta", p.beta.unaryExpr(&inverse_softplus));
    theta.set("transition.a", Matrix(p.a.unaryExpr(&logit)));
  }
  if (spec.square_root()) {
    theta.set("transition.c", Matrix((p.c.array() - 0.5).matrix().unaryExpr(&inverse_softplus)));
  }
}

ParamSet init_theta(const ModelSpec& spec, Rng& rng, const Matrix* returns) {
  if (returns != nullptr && returns->cols() != spec.n_x) {
    throw ad::ShapeError("init_theta: data has " + std::to_string(returns->cols()) +
                         " columns, model expects " + std::to_string(spec.n_x));
  }
  const Matrix mean = returns != nullptr ? column_means(*returns) : Matrix::Zero(1, spec.n_x);
  const Matrix var = returns != nullptr ? column_variances(*returns) : Matrix::Ones(1, spec.n_x);
  const Matrix sd = var.cwiseSqrt();
  ParamSet theta;

  if (spec.is_network()) {
    if (spec.family == Family::NNFM) {
      GaussianHeadFnn::init(theta, "emission",
                            {spec.n_z, default_emission_width(spec.n_x), spec.n_x}, rng);
      theta.set("emission.mu.bias", mean);
      theta.set("emission.var.bias", var.unaryExpr(&inverse_softplus));
    } else {
      MiFnnParams::init(theta, "emission", 1, kMiFnnWidth, spec.n_x, rng);
      theta.set("emission.b2_sigma", var.unaryExpr(&inverse_softplus));
    }
    GaussianHeadFnn::init(theta, "prior", {spec.n_h, kPriorWidth, spec.n_z}, rng);
    LstmParams::init(theta, "memory", spec.n_z, spec.n_h, rng);
    return theta;
  }

  const int nm = spec.mean_factors();
  const int nv = spec.variance_factors();
  std::normal_distribution<double> jitter(0.0, 0.1);
  // Multiplicative jitter breaks the symmetry between factors.
  auto jittered = [&](Matrix m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) *= std::exp(jitter(rng));
    return m;
  };

  ParametricParams p;
  p.alpha0 = row(mean);
  if (nm > 0) {
    p.alpha = jittered(Matrix::Ones(nm, 1) * (0.5 * sd / std::sqrt(double(nm))));
  }
  p.beta0 = row(0.8 * sd);
  if (nv > 0) {
    p.a = RowVector::Constant(nv, 0.8);
    if (spec.square_root()) {
      p.c = RowVector::Constant(nv, 1.0);
      const double z_bar = 1.0 / (1.0 - 0.8);
      // Split each asset's variance between the constant and factor terms.
      p.beta0 = row(0.7 * var);
      p.beta = jittered(Matrix::Ones(nv, 1) * (0.3 * var / (z_bar * nv)));
    } else {
      p.beta0 = row(sd.array().log().matrix());
      p.beta = jittered(Matrix::Constant(nv, spec.n_x, 0.2));
    }
  }
  set_constrained_params(spec, p, theta);
  return theta;
}

FactorState initial_state(const ModelSpec& spec, const ParamSet& theta) {
  FactorState s;
  s.z = RowVector::Zero(spec.n_z);
  if (spec.is_network()) {
    s.hidden = RowVector::Zero(spec.n_h);
    s.cell = RowVector::Zero(spec.n_h);
  } else if (spec.square_root()) {
    const ParametricParams p = constrained_params(spec, theta);
    const int nm = spec.mean_factors();
    for (int j = 0; j < spec.variance_factors(); ++j) {
      s.z(nm + j) = p.c(j) / (1.0 - p.a(j));
    }
  }
  return s;
}

// --- tape-level model ---------------------------------------------------------

BoundModel::BoundModel(const ModelSpec& spec, const BoundParams& theta)
    : spec_(spec), tape_(&theta.tape()) {
  if (spec.is_network()) {
    Network net{GaussianHeadFnn{}, GaussianHeadFnn::bind(theta, "prior"),
                LstmParams::bind(theta, "memory")};
    if (spec.family == Family::NNFM) {
      net.emission = GaussianHeadFnn::bind(theta, "emission");
    } else {
      net.emission = MiFnnParams::bind(theta, "emission");
    }
    params_ = std::move(net);
  } else {
    Parametric p;
    p.alpha0 = theta["emission.alpha0"];
    p.beta0 = theta["emission.beta0"];
    if (spec.mean_factors() > 0) p.alpha = theta["emission.alpha"];
    if (spec.variance_factors() > 0) {
      p.beta = theta["emission.beta"];
      p.a = theta["transition.a"];
    }
    if (spec.square_root()) p.c = theta["transition.c"];
    if (p.alpha0.cols() != spec.n_x) throw ad::ShapeError("alpha0 width does not match n_x");
    params_ = p;
  }
}

GaussianVars BoundModel::prior(const TapeFactorState& prev) const {
  if (auto* net = std::get_if<Network>(&params_)) {
    if (!prev.memory) throw ModelError(spec_.label() + ": factor state has no LSTM memory");
    return net->prior.forward(prev.memory->hidden);
  }
  const auto& p = std::get<Parametric>(params_);
  if (prev.z.cols() != spec_.n_z) throw ad::ShapeError("prior: previous factor has wrong width");
  const int nm = spec_.mean_factors();
  const int nv = spec_.variance_factors();

  std::optional<GaussianVars> mean_part;
  std::optional<GaussianVars> var_part;
  if (nm > 0) {
    mean_part = GaussianVars{ad::constant(*tape_, Matrix::Zero(1, nm)),
                             ad::constant(*tape_, Matrix::Ones(1, nm))};
  }
  if (nv > 0) {
    const Var z_prev = ad::slice_cols(prev.z, nm, nv);
    const Var a = ad::sigmoid(p.a);
    if (spec_.square_root()) {
      const Var c = ad::softplus(p.c) + 0.5;
      var_part = GaussianVars{c + a * z_prev, ad::clamp_min(z_prev, kSqrtClamp)};
    } else {
      var_part = GaussianVars{a * z_prev, ad::constant(*tape_, Matrix::Ones(1, nv))};
    }
  }
  if (mean_part && var_part) {
    return {ad::concat_cols(mean_part->mu, var_part->mu),
            ad::concat_cols(mean_part->var, var_part->var)};
  }
  return mean_part ? *mean_part : *var_part;
}

GaussianVars BoundModel::emission(const Var& z) const {
  if (z.rows() != 1 || z.cols() != spec_.n_z) {
    throw ad::ShapeError("emission: expected a 1x" + std::to_string(spec_.n_z) + " factor, got " +
                         std::to_string(z.rows()) + "x" + std::to_string(z.cols()));
  }
  if (const auto* net = std::get_if<Network>(&params_)) {
    if (const auto* head = std::get_if<GaussianHeadFnn>(&net->emission)) {
      return head->forward(z);
    }
    const auto& mi = std::get<MiFnnParams>(net->emission);
    if (spec_.family == Family::MNNFM1) {
      return {-mi_fnn_mu(mi, z), ad::clamp_min(mi_fnn_sigma(mi, z), kVarianceFloor)};
    }
    return {mi_fnn_mu(mi, ad::slice_cols(z, 0, 1)),
            ad::clamp_min(mi_fnn_sigma(mi, ad::slice_cols(z, 1, 1)), kVarianceFloor)};
  }

  const auto& p = std::get<Parametric>(params_);
  const int nm = spec_.mean_factors();
  const int nv = spec_.variance_factors();
  Var mu = p.alpha0;
  if (nm > 0) mu = mu + ad::matmul(ad::slice_cols(z, 0, nm), ad::softplus(p.alpha));
  Var var;
  if (nv == 0) {
    var = ad::square(ad::softplus(p.beta0));
  } else {
    const Var u = p.beta0 + ad::matmul(ad::slice_cols(z, nm, nv), ad::softplus(p.beta));
    var = spec_.square_root() ? ad::clamp_min(u, kSqrtClamp) : ad::exp(2.0 * u);
  }
  return {mu, ad::clamp_min(var, kVarianceFloor)};
}

TapeFactorState BoundModel::advance(const TapeFactorState& prev, const Var& z) const {
  if (const auto* net = std::get_if<Network>(&params_)) {
    return {z, lstm_step(net->memory, z, *prev.memory)};
  }
  return {z, std::nullopt};
}

Var BoundModel::memory(const TapeFactorState& s) const {
  if (spec_.is_network()) return s.memory->hidden;
  return s.z;
}

TapeFactorState BoundModel::lift(const FactorState& s) const {
  require_row(s.z, spec_.n_z, "factor state");
  TapeFactorState out{ad::constant(*tape_, Matrix(s.z)), std::nullopt};
  if (spec_.is_network()) {
    require_row(s.hidden, spec_.n_h, "LSTM hidden state");
    require_row(s.cell, spec_.n_h, "LSTM cell state");
    out.memory = LstmState{ad::constant(*tape_, Matrix(s.hidden)), ad::constant(*tape_, Matrix(s.cell))};
  }
  return out;
}

FactorState BoundModel::lower(const TapeFactorState& s) {
  FactorState out;
  out.z = row(s.z.value());
  if (s.memory) {
    out.hidden = row(s.memory->hidden.value());
    out.cell = row(s.memory->cell.value());
  }
  return out;
}

Var gaussian_log_density(const Var& x, const GaussianVars& g) {
  const double n = static_cast<double>(x.cols());
  const Var quad = ad::square(x - g.mu) / g.var;
  return ad::sum(ad::log(g.var) + quad) * -0.5 - 0.5 * n * kLog2Pi;
}

double gaussian_log_density(const RowVector& x, const RowVector& mu, const RowVector& var) {
  const auto quad = (x - mu).array().square() / var.array();
  return -0.5 * ((var.array().log() + quad).sum() + static_cast<double>(x.size()) * kLog2Pi);
}

// --- value-level wrappers --------------------------------------------------------

namespace {

struct Scratch {
  ad::Tape tape;
  BoundParams theta;
  BoundModel model;

  Scratch(const ModelSpec& spec, const ParamSet& params)
      : tape(), theta(params, tape), model(spec, theta) {}
  // BoundParams and BoundModel hold a pointer to `tape`; pin the object.
  Scratch(const Scratch&) = delete;
  Scratch& operator=(const Scratch&) = delete;
};

Gaussian lower(const GaussianVars& g) { return {row(g.mu.value()), row(g.var.value())}; }

}  // namespace

Gaussian prior_step(const ModelSpec& spec, const ParamSet& theta, const FactorState& state) {
  Scratch s(spec, theta);
  return lower(s.model.prior(s.model.lift(state)));
}

Gaussian emission(const ModelSpec& spec, const ParamSet& theta, const RowVector& z) {
  require_row(z, spec.n_z, "emission factor");
  Scratch s(spec, theta);
  return lower(s.model.emission(ad::constant(s.tape, Matrix(z))));
}

double log_emission_density(const ModelSpec& spec, const ParamSet& theta, const RowVector& x,
                            const RowVector& z) {
  require_row(x, spec.n_x, "observation");
  require_finite(x, "observation");
  require_finite(z, "factor");
  const Gaussian g = emission(spec, theta, z);
  return gaussian_log_density(x, g.mu, g.var);
}

double log_prior_transition(const ModelSpec& spec, const ParamSet& theta, const RowVector& z,
                            const FactorState& prev) {
  require_row(z, spec.n_z, "factor");
  require_finite(z, "factor");
  require_finite(prev.z, "previous factor");
  const Gaussian g = prior_step(spec, theta, prev);
  return gaussian_log_density(z, g.mu, g.var);
}

FactorState advance_state(const ModelSpec& spec, const ParamSet& theta, const FactorState& prev,
                          const RowVector& z) {
  require_row(z, spec.n_z, "factor");
  Scratch s(spec, theta);
  return BoundModel::lower(s.model.advance(s.model.lift(prev), ad::constant(s.tape, Matrix(z))));
}

Sensitivity sensitivity(const ModelSpec& spec, const ParamSet& theta, const RowVector& z) {
  if (!spec.is_network()) {
    throw ModelError("sensitivity is defined for NNFM and M-NNFM families, not " + spec.label());
  }
  require_row(z, spec.n_z, "factor");
  Scratch s(spec, theta);
  const Var zv = ad::constant(s.tape, Matrix(z));
  const GaussianVars g = s.model.emission(zv);
  const Var sigma = ad::sqrt(g.var);

  Sensitivity out{Matrix(spec.n_x, spec.n_z), Matrix(spec.n_x, spec.n_z)};
  for (int i = 0; i < spec.n_x; ++i) {
    const Var mu_i = ad::slice_cols(g.mu, i, 1);
    s.tape.backward(mu_i.id());
    out.dmu_dz.row(i) = zv.grad().row(0);
    const Var sigma_i = ad::slice_cols(sigma, i, 1);
    s.tape.backward(sigma_i.id());
    out.dsigma_dz.row(i) = zv.grad().row(0);
  }
  return out;
}

SimulatedPath simulate(const ModelSpec& spec, const ParamSet& theta, int steps,
                       const FactorState& start, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("simulate: step count must be at least 1");
  Scratch s(spec, theta);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SimulatedPath path{Matrix(steps, spec.n_x), Matrix(steps, spec.n_z)};
  FactorState state = start;
  const std::size_t mark = s.tape.size();
  for (int t = 0; t < steps; ++t) {
    const TapeFactorState prev = s.model.lift(state);
    const GaussianVars p = s.model.prior(prev);
    RowVector z(spec.n_z);
    for (int j = 0; j < spec.n_z; ++j) {
      z(j) = p.mu.value()(0, j) + std::sqrt(p.var.value()(0, j)) * normal(rng);
    }
    const Var zv = ad::constant(s.tape, Matrix(z));
    const GaussianVars e = s.model.emission(zv);
    for (int i = 0; i < spec.n_x; ++i) {
      path.x(t, i) = e.mu.value()(0, i) + std::sqrt(e.var.value()(0, i)) * normal(rng);
    }
    path.z.row(t) = z;
    state = BoundModel::lower(s.model.advance(prev, zv));
    s.tape.truncate(mark);
  }
  return path;
}

}  // namespace gfm
