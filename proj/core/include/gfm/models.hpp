#pragma once

// The general factor model zoo.
//
//   x_t | z_t  ~ N(mu_x(z_t), diag(var_x(z_t)))          (emission)
//   z_t | past ~ N(mu_z(past), diag(var_z(past)))         (transition)
//
// Parametric families (APT, L-SVFM, SR-SVFM, APT-L, APT-SR) are Markov in
// z_t. Network families (NNFM, M-NNFM(1), M-NNFM(2)) summarize the past in
// an LSTM state h_t and draw z_t from FNN_z(h_{t-1}).
//
// Parameters are stored raw and mapped through softplus / logistic so that
// every positivity and range constraint holds for any raw value.

#include "gfm/networks.hpp"
#include "gfm/params.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace gfm {

using RowVector = Eigen::RowVectorXd;

enum class Family { APT, LSVFM, SRSVFM, APTL, APTSR, NNFM, MNNFM1, MNNFM2 };

std::string_view family_name(Family family);

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSpec {
  Family family = Family::APT;
  int n_z = 1;
  int n_x = 1;
  int n_h = 0;  // LSTM width; 3 * n_z for network families, 0 otherwise

  /// Validates the family/factor-count combination and derives n_h.
  static ModelSpec make(Family family, int n_z, int n_x);
  /// Parses labels such as "APT(1)", "L-SVFM(2)", "M-NNFM(1)".
  static ModelSpec parse(std::string_view label, int n_x);
  /// Comma-separated list of accepted labels, for diagnostics.
  static std::string valid_labels();

  std::string label() const;

  bool is_network() const;
  /// Factors entering the emission mean linearly (APT-type).
  int mean_factors() const;
  /// Factors driving emission volatility through an AR(1) / square-root process.
  int variance_factors() const;
  bool square_root() const { return family == Family::SRSVFM || family == Family::APTSR; }
  /// Width of the encoder's conditioning input: n_h or n_z.
  int memory_width() const { return is_network() ? n_h : n_z; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Factor-count order used by comparison tables: family, then n_z.
bool spec_less(const ModelSpec& a, const ModelSpec& b);

/// Clamp applied inside square roots and square-root transition variances.
inline constexpr double kSqrtClamp = 1e-6;

/// Constrained (user-facing) view of the parametric families' parameters.
/// Loadings are stored factor-major: alpha(j, i) is the loading of asset i on
/// mean factor j; beta(j, i) likewise for variance factors.
struct ParametricParams {
  RowVector alpha0;  // 1 x n_x
  Matrix alpha;      // mean_factors x n_x, > 0
  RowVector beta0;   // 1 x n_x (> 0 for APT)
  Matrix beta;       // variance_factors x n_x, > 0
  RowVector a;       // 1 x variance_factors, in (0, 1)
  RowVector c;       // 1 x variance_factors, > 0.5 (square-root families only)
};

ParametricParams constrained_params(const ModelSpec& spec, const ParamSet& theta);
/// Writes raw values for `p` into `theta`; throws ModelError if `p` breaks a
/// constraint.
void set_constrained_params(const ModelSpec& spec, const ParametricParams& p, ParamSet& theta);

/// Random initialization of the generative parameters. When `returns`
/// (T x n_x) is given, location and scale parameters start at the sample
/// moments of each column.
ParamSet init_theta(const ModelSpec& spec, Rng& rng, const Matrix* returns = nullptr);

/// Value-level factor state carried between windows and time steps.
struct FactorState {
  RowVector z;       // last factor draw (z_0 at the start)
  RowVector hidden;  // LSTM h; empty for parametric families
  RowVector cell;    // LSTM c; empty for parametric families

  bool has_memory() const { return hidden.size() > 0; }
  friend bool operator==(const FactorState&, const FactorState&) = default;
};

/// z_0 = 0 (APT / L factors), c / (1 - a) (square-root factors); h_0 = 0.
FactorState initial_state(const ModelSpec& spec, const ParamSet& theta);

/// Factor state living on a tape.
struct TapeFactorState {
  Var z;
  std::optional<LstmState> memory;
};

/// Model parameters bound to a tape; every method records nodes.
class BoundModel {
 public:
  BoundModel(const ModelSpec& spec, const BoundParams& theta);

  const ModelSpec& spec() const { return spec_; }
  ad::Tape& tape() const { return *tape_; }

  GaussianVars prior(const TapeFactorState& prev) const;
  GaussianVars emission(const Var& z) const;
  TapeFactorState advance(const TapeFactorState& prev, const Var& z) const;
  /// The encoder's conditioning input: h_{t-1} or z_{t-1}.
  Var memory(const TapeFactorState& s) const;

  TapeFactorState lift(const FactorState& s) const;
  static FactorState lower(const TapeFactorState& s);

 private:
  struct Parametric {
    Var alpha0, alpha, beta0, beta, a, c;
  };
  struct Network {
    std::variant<GaussianHeadFnn, MiFnnParams> emission;
    GaussianHeadFnn prior;
    LstmParams memory;
  };

  ModelSpec spec_;
  ad::Tape* tape_;
  std::variant<Parametric, Network> params_;
};

/// Sum over components of log N(x; mu, var).
Var gaussian_log_density(const Var& x, const GaussianVars& g);
double gaussian_log_density(const RowVector& x, const RowVector& mu, const RowVector& var);

struct Gaussian {
  RowVector mu;
  RowVector var;
};

Gaussian prior_step(const ModelSpec& spec, const ParamSet& theta, const FactorState& state);
Gaussian emission(const ModelSpec& spec, const ParamSet& theta, const RowVector& z);
double log_emission_density(const ModelSpec& spec, const ParamSet& theta, const RowVector& x,
                            const RowVector& z);
double log_prior_transition(const ModelSpec& spec, const ParamSet& theta, const RowVector& z,
                            const FactorState& prev);
/// State after observing factor draw z from `prev`.
FactorState advance_state(const ModelSpec& spec, const ParamSet& theta, const FactorState& prev,
                          const RowVector& z);

struct Sensitivity {
  Matrix dmu_dz;     // n_x x n_z
  Matrix dsigma_dz;  // n_x x n_z, sigma = sqrt(var)
};

/// Jacobians of the emission mean and deviation with respect to z.
/// Network families only.
Sensitivity sensitivity(const ModelSpec& spec, const ParamSet& theta, const RowVector& z);

struct SimulatedPath {
  Matrix x;  // T x n_x
  Matrix z;  // T x n_z
};

/// Ancestral sampling from the generative model, starting at `start`.
SimulatedPath simulate(const ModelSpec& spec, const ParamSet& theta, int steps,
                       const FactorState& start, std::uint64_t seed);

}  // namespace gfm
