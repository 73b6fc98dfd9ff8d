#pragma once

// Variational inference for the factor model zoo.
//
// The approximate posterior q(z_t | x_t, memory) is a diagonal Gaussian whose
// mean and variance come from a one-hidden-layer encoder (the "encoder.*"
// parameters, phi). Memory is h_{t-1} for network families and z_{t-1} for
// the Markov parametric families. Training maximizes the variational lower
// bound window by window with Adam, carrying the factor state across windows
// and truncating gradients at window boundaries.

#include "gfm/models.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfm {

struct TrainingConfig {
  int epochs = 2000;
  int window = 50;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int mc_samples = 1;
  std::uint64_t seed = 0;
  double grad_clip = 10.0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct VlbBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;  // recon - kl
};

/// Generative parameters theta plus encoder parameters phi for one spec.
struct FittedModel {
  ModelSpec spec;
  ParamSet theta;
  ParamSet phi;
  /// Column names of the panel the model was fitted on; empty if unknown.
  std::vector<std::string> symbols;

  /// theta and phi in a single map (phi entries are prefixed "encoder.").
  ParamSet merged() const;
  void assign(const ParamSet& merged);
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch, int window, int timestep)
      : std::runtime_error(what), epoch_(epoch), window_(window), timestep_(timestep) {}
  int epoch() const { return epoch_; }
  int window() const { return window_; }
  int timestep() const { return timestep_; }

 private:
  int epoch_, window_, timestep_;
};

/// With `returns`, the encoder's input layer is scaled to standardized returns.
ParamSet init_phi(const ModelSpec& spec, const ParamSet& theta, Rng& rng,
                  const Matrix* returns = nullptr);
/// theta via init_theta, phi via init_phi, from one seed.
FittedModel init_model(const ModelSpec& spec, std::uint64_t seed, const Matrix* returns = nullptr);

GaussianHeadFnn bind_encoder(const BoundParams& phi);
/// (mu_q, var_q) = encoder(x_t, memory).
GaussianVars encode(const GaussianHeadFnn& encoder, const Var& x, const Var& memory);
Gaussian encode(const ModelSpec& spec, const ParamSet& phi, const RowVector& x,
                const RowVector& memory);

/// mu + sqrt(var) * eps. Throws std::domain_error for nonpositive variance.
Var reparam_sample(const GaussianVars& q, const Var& eps);
RowVector reparam_sample(const RowVector& mu, const RowVector& var, const RowVector& eps);

/// Sum over components of KL(N(mu_q, var_q) || N(mu_p, var_p)).
Var kl_diag_normal(const GaussianVars& q, const GaussianVars& p);
double kl_diag_normal(const RowVector& mu_q, const RowVector& var_q, const RowVector& mu_p,
                      const RowVector& var_p);

struct TapeVlb {
  Var recon;
  Var kl;
  Var total;
  TapeFactorState state_out;
};

/// Records the lower bound of one window on the model's tape. `eps` holds one
/// standard-normal row per (timestep, sample): row t * samples + l. The state
/// advances with the last sample of each timestep.
TapeVlb vlb_on_tape(const BoundModel& model, const GaussianHeadFnn& encoder, const Matrix& x_window,
                    const TapeFactorState& state_in, int samples, const Matrix& eps);

struct VlbResult {
  VlbBreakdown breakdown;
  FactorState state_out;
};

VlbResult vlb(const FittedModel& model, const Matrix& x_window, const FactorState& state_in,
              int samples, const Matrix& eps);

struct VlbGradient {
  VlbResult value;
  ParamSet gradient;  // d(total)/d(raw parameter), merged theta + phi layout
};

VlbGradient vlb_gradient(const FittedModel& model, const Matrix& x_window,
                         const FactorState& state_in, int samples, const Matrix& eps);

/// Standard-normal draws shaped for vlb(): (rows * samples) x n_z.
Matrix draw_eps(Rng& rng, Eigen::Index rows, int samples, Eigen::Index n_z);

struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;
};

AdamState adam_init(const ParamSet& params);

/// One descent step on `params` along `grads` (a loss gradient). The whole
/// gradient is first rescaled to norm <= config.grad_clip.
void adam_step(ParamSet& params, ParamSet grads, AdamState& state, const TrainingConfig& config);

struct FitResult {
  FittedModel model;          // parameters of the best epoch
  std::vector<double> curve;  // total VLB per epoch
  int best_epoch = 0;
};

/// Called after every epoch with (epoch, vlb).
using EpochCallback = std::function<void(int, double)>;

/// Maximizes the lower bound on `returns` (T x n_x) starting from `init`.
FitResult fit(FittedModel init, const Matrix& returns, const TrainingConfig& config,
              const EpochCallback& on_epoch = {});

}  // namespace gfm
