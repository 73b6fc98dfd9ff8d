#include "gfm/inference.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace gfm {

namespace {

constexpr std::string_view kEncoderPrefix = "encoder.";

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

struct WindowPass {
  VlbResult value;
  ParamSet gradient;
};

// Records one window on a fresh tape; differentiates when `with_gradient`.
WindowPass window_pass(const ModelSpec& spec, const ParamSet& params, const Matrix& x_window,
                       const FactorState& state_in, int samples, const Matrix& eps,
                       bool with_gradient) {
  ad::Tape tape;
  tape.reserve(static_cast<std::size_t>(x_window.rows()) * (40 + 20 * samples) + params.size());
  const BoundParams bound(params, tape);
  const BoundModel model(spec, bound);
  const GaussianHeadFnn encoder = bind_encoder(bound);
  const TapeVlb out = vlb_on_tape(model, encoder, x_window, model.lift(state_in), samples, eps);

  WindowPass pass;
  pass.value.breakdown = {out.recon.scalar(), out.kl.scalar(), out.total.scalar()};
  pass.value.state_out = BoundModel::lower(out.state_out);
  if (with_gradient) {
    tape.backward(out.total.id());
    pass.gradient = bound.gradients();
  }
  return pass;
}

bool all_finite(const ParamSet& p) {
  for (const auto& [name, m] : p) {
    if (!m.allFinite()) return false;
  }
  return true;
}

}  // namespace

void TrainingConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(window >= 1, "window must be at least 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(mc_samples >= 1, "mc_samples must be at least 1");
  require(grad_clip > 0.0, "grad_clip must be positive");
}

ParamSet FittedModel::merged() const {
  ParamSet all = theta;
  all.merge(phi);
  return all;
}

void FittedModel::assign(const ParamSet& merged) {
  for (const auto& [name, m] : merged) {
    if (std::string_view(name).starts_with(kEncoderPrefix)) {
      phi.at(name) = m;
    } else {
      theta.at(name) = m;
    }
  }
}

ParamSet init_phi(const ModelSpec& spec, const ParamSet& theta, Rng& rng, const Matrix* returns) {
  ParamSet phi;
  GaussianHeadFnn::init(phi, "encoder",
                        {spec.n_x + spec.memory_width(), default_encoder_width(spec.n_x), spec.n_z},
                        rng);
  if (returns != nullptr && returns->rows() > 1) {
    // The first layer starts out seeing standardized returns; raw heavy-tailed
    // returns otherwise push early posterior means far into the tails.
    const Eigen::RowVectorXd mean = returns->colwise().mean();
    const Eigen::RowVectorXd sd =
        ((returns->rowwise() - mean).colwise().squaredNorm() / double(returns->rows() - 1))
            .cwiseSqrt()
            .cwiseMax(1e-8);
    Matrix w = phi.at("encoder.hidden.weights");
    for (Eigen::Index i = 0; i < spec.n_x; ++i) w.row(i) /= sd(i);
    const Matrix bias = phi.at("encoder.hidden.bias") - mean * w.topRows(spec.n_x);
    phi.set("encoder.hidden.weights", w);
    phi.set("encoder.hidden.bias", bias);
  }
  if (spec.square_root()) {
    // Start the posterior at the stationary level of the square-root factors
    // with a narrow spread, so early draws stay in the positive half-line.
    const FactorState z0 = initial_state(spec, theta);
    Matrix mu_bias = phi.at("encoder.mu.bias");
    Matrix var_bias = phi.at("encoder.var.bias");
    for (int j = spec.mean_factors(); j < spec.n_z; ++j) {
      mu_bias(0, j) = z0.z(j);
      var_bias(0, j) = inverse_softplus(0.1);
    }
    phi.set("encoder.mu.bias", mu_bias);
    phi.set("encoder.var.bias", var_bias);
  }
  return phi;
}

FittedModel init_model(const ModelSpec& spec, std::uint64_t seed, const Matrix* returns) {
  Rng rng(seed);
  FittedModel m;
  m.spec = spec;
  m.theta = init_theta(spec, rng, returns);
  m.phi = init_phi(spec, m.theta, rng, returns);
  return m;
}

GaussianHeadFnn bind_encoder(const BoundParams& phi) { return GaussianHeadFnn::bind(phi, "encoder"); }

GaussianVars encode(const GaussianHeadFnn& encoder, const Var& x, const Var& memory) {
  return encoder.forward(ad::concat_cols(x, memory));
}

Gaussian encode(const ModelSpec& spec, const ParamSet& phi, const RowVector& x,
                const RowVector& memory) {
  if (x.size() != spec.n_x || memory.size() != spec.memory_width()) {
    throw ad::ShapeError("encode: expected observation width " + std::to_string(spec.n_x) +
                         " and memory width " + std::to_string(spec.memory_width()));
  }
  ad::Tape tape;
  const BoundParams bound(phi, tape);
  const GaussianVars q = encode(bind_encoder(bound), ad::constant(tape, Matrix(x)),
                                ad::constant(tape, Matrix(memory)));
  return {q.mu.value().row(0), q.var.value().row(0)};
}

Var reparam_sample(const GaussianVars& q, const Var& eps) {
  if (!(q.var.value().array() > 0.0).all()) {
    throw std::domain_error("reparam_sample: variance must be positive");
  }
  return q.mu + ad::sqrt(q.var) * eps;
}

RowVector reparam_sample(const RowVector& mu, const RowVector& var, const RowVector& eps) {
  if (!(var.array() > 0.0).all()) throw std::domain_error("reparam_sample: variance must be positive");
  return mu.array() + var.array().sqrt() * eps.array();
}

Var kl_diag_normal(const GaussianVars& q, const GaussianVars& p) {
  if (!(q.var.value().array() > 0.0).all() || !(p.var.value().array() > 0.0).all()) {
    throw std::domain_error("kl_diag_normal: variances must be positive");
  }
  const double n = static_cast<double>(q.mu.cols());
  const Var ratio = q.var / p.var;
  const Var terms = ratio + ad::square(q.mu - p.mu) / p.var - ad::log(ratio);
  return ad::sum(terms) * 0.5 - 0.5 * n;
}

double kl_diag_normal(const RowVector& mu_q, const RowVector& var_q, const RowVector& mu_p,
                      const RowVector& var_p) {
  if (!(var_q.array() > 0.0).all() || !(var_p.array() > 0.0).all()) {
    throw std::domain_error("kl_diag_normal: variances must be positive");
  }
  const auto ratio = var_q.array() / var_p.array();
  const auto terms = ratio + (mu_q - mu_p).array().square() / var_p.array() - 1.0 - ratio.log();
  return 0.5 * terms.sum();
}

TapeVlb vlb_on_tape(const BoundModel& model, const GaussianHeadFnn& encoder, const Matrix& x_window,
                    const TapeFactorState& state_in, int samples, const Matrix& eps) {
  const ModelSpec& spec = model.spec();
  if (x_window.rows() < 1) throw std::invalid_argument("vlb: empty window");
  if (x_window.cols() != spec.n_x) {
    throw ad::ShapeError("vlb: window has " + std::to_string(x_window.cols()) +
                         " columns, model expects " + std::to_string(spec.n_x));
  }
  if (samples < 1) throw std::invalid_argument("vlb: sample count must be at least 1");
  if (eps.rows() != x_window.rows() * samples || eps.cols() != spec.n_z) {
    throw ad::ShapeError("vlb: eps must be " + std::to_string(x_window.rows() * samples) + "x" +
                         std::to_string(spec.n_z));
  }

  ad::Tape& tape = model.tape();
  TapeFactorState state = state_in;
  Var recon = ad::constant(tape, 0.0);
  Var kl = ad::constant(tape, 0.0);
  const double inv_l = 1.0 / samples;

  for (Eigen::Index t = 0; t < x_window.rows(); ++t) {
    const Var x = ad::constant(tape, Matrix(x_window.row(t)));
    Var recon_t;
    Var kl_t;
    Var z;
    try {
      const GaussianVars q = encode(encoder, x, model.memory(state));
      const GaussianVars p = model.prior(state);
      for (int l = 0; l < samples; ++l) {
        z = reparam_sample(q, ad::constant(tape, Matrix(eps.row(t * samples + l))));
        const Var term = gaussian_log_density(x, model.emission(z));
        recon_t = l == 0 ? term : recon_t + term;
      }
      if (samples > 1) recon_t = recon_t * inv_l;
      kl_t = kl_diag_normal(q, p);
    } catch (const std::domain_error& e) {
      throw DivergenceError(std::string("invalid distribution at timestep ") + std::to_string(t) +
                                ": " + e.what(),
                            -1, -1, static_cast<int>(t));
    }
    if (!std::isfinite(recon_t.scalar()) || !std::isfinite(kl_t.scalar())) {
      std::ostringstream os;
      os << "non-finite lower bound term at timestep " << t << " (recon " << recon_t.scalar()
         << ", kl " << kl_t.scalar() << ")";
      throw DivergenceError(os.str(), -1, -1, static_cast<int>(t));
    }
    recon = recon + recon_t;
    kl = kl + kl_t;
    state = model.advance(state, z);
  }
  return {recon, kl, recon - kl, state};
}

VlbResult vlb(const FittedModel& model, const Matrix& x_window, const FactorState& state_in,
              int samples, const Matrix& eps) {
  return window_pass(model.spec, model.merged(), x_window, state_in, samples, eps, false).value;
}

VlbGradient vlb_gradient(const FittedModel& model, const Matrix& x_window,
                         const FactorState& state_in, int samples, const Matrix& eps) {
  auto pass = window_pass(model.spec, model.merged(), x_window, state_in, samples, eps, true);
  return {pass.value, std::move(pass.gradient)};
}

Matrix draw_eps(Rng& rng, Eigen::Index rows, int samples, Eigen::Index n_z) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(rows * samples, n_z);
  for (Eigen::Index r = 0; r < eps.rows(); ++r) {
    for (Eigen::Index c = 0; c < n_z; ++c) eps(r, c) = normal(rng);
  }
  return eps;
}

AdamState adam_init(const ParamSet& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamSet& params, ParamSet grads, AdamState& state, const TrainingConfig& config) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw ad::ShapeError("adam_step: parameter, gradient and moment layouts differ");
  }
  double norm2 = 0.0;
  for (const auto& [name, g] : grads) norm2 += g.squaredNorm();
  const double norm = std::sqrt(norm2);
  if (norm > config.grad_clip) {
    const double scale = config.grad_clip / norm;
    for (auto& [name, g] : grads) g *= scale;
  }

  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto m_it = state.m.begin();
  auto v_it = state.v.begin();
  auto g_it = grads.begin();
  for (auto& [name, p] : params) {
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    const Matrix& g = g_it->second;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= config.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + config.adam_eps);
    ++m_it;
    ++v_it;
    ++g_it;
  }
}

FitResult fit(FittedModel init, const Matrix& returns, const TrainingConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  const ModelSpec& spec = init.spec;
  if (spec.n_z >= spec.n_x) {
    throw ModelError("fit: factor count must be smaller than the asset count (n_z = " +
                     std::to_string(spec.n_z) + ", n_x = " + std::to_string(spec.n_x) + ")");
  }
  if (returns.cols() != spec.n_x) {
    throw ad::ShapeError("fit: data has " + std::to_string(returns.cols()) +
                         " columns, model expects " + std::to_string(spec.n_x));
  }
  if (returns.rows() < config.window) {
    throw std::invalid_argument("fit: need at least " + std::to_string(config.window) +
                                " timesteps, got " + std::to_string(returns.rows()));
  }
  if (!returns.allFinite()) throw std::invalid_argument("fit: data contains non-finite values");

  const Eigen::Index steps = returns.rows();
  const int windows = static_cast<int>((steps + config.window - 1) / config.window);

  FitResult result;
  result.model = init;
  ParamSet params = init.merged();
  AdamState adam = adam_init(params);
  Rng rng(config.seed);
  double best = -std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    init.assign(params);
    FactorState state = initial_state(spec, init.theta);
    double epoch_total = 0.0;
    for (int w = 0; w < windows; ++w) {
      const Eigen::Index begin = static_cast<Eigen::Index>(w) * config.window;
      const Eigen::Index len = std::min<Eigen::Index>(config.window, steps - begin);
      const Matrix eps = draw_eps(rng, len, config.mc_samples, spec.n_z);
      WindowPass pass;
      try {
        pass = window_pass(spec, params, returns.middleRows(begin, len), state, config.mc_samples,
                           eps, true);
      } catch (const DivergenceError& e) {
        throw DivergenceError("fit diverged in epoch " + std::to_string(epoch) + ", window " +
                                  std::to_string(w) + ": " + e.what(),
                              epoch, w, static_cast<int>(begin) + e.timestep());
      }
      if (!std::isfinite(pass.value.breakdown.total) || !all_finite(pass.gradient)) {
        throw DivergenceError("fit diverged in epoch " + std::to_string(epoch) + ", window " +
                                  std::to_string(w) + ": non-finite lower bound or gradient",
                              epoch, w, static_cast<int>(begin));
      }
      // Descend on the per-timestep negative bound.
      for (auto& [name, g] : pass.gradient) g *= -1.0 / static_cast<double>(len);
      adam_step(params, std::move(pass.gradient), adam, config);
      state = pass.value.state_out;
      epoch_total += pass.value.breakdown.total;
    }
    result.curve.push_back(epoch_total);
    if (epoch_total > best) {
      best = epoch_total;
      result.best_epoch = epoch;
      result.model.assign(params);
    }
    if (on_epoch) on_epoch(epoch, epoch_total);
  }
  return result;
}

}  // namespace gfm
