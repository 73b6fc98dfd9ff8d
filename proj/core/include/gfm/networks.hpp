#pragma once

// Network building blocks: one-hidden-layer Gaussian heads (mean, variance),
// the monotone-increasing MI-FNN with exponentiated weights, and the LSTM
// memory cell. Each block has an `init` that registers raw parameters in a
// ParamSet under a prefix, and a `bind` that pulls the matching tape leaves
// out of a BoundParams.

#include "gfm/autodiff.hpp"
#include "gfm/params.hpp"

#include <string>
#include <string_view>

namespace gfm {

using ad::Var;

/// Floor applied to every variance produced by a network or model head.
inline constexpr double kVarianceFloor = 1e-10;

enum class Activation { PRelu, Softplus, Identity };

struct GaussianVars {
  Var mu;
  Var var;
};

struct DenseLayer {
  Var weights;  // in_dim x out_dim
  Var bias;     // 1 x out_dim
  Activation activation = Activation::Identity;

  Var forward(const Var& x) const;

  static void init(ParamSet& params, const std::string& prefix, Eigen::Index in_dim,
                   Eigen::Index out_dim, Rng& rng);
  static DenseLayer bind(const BoundParams& params, const std::string& prefix,
                         Activation activation);
};

struct GaussianHeadFnn {
  struct Dims {
    Eigen::Index input = 0;
    Eigen::Index hidden = 0;
    Eigen::Index output = 0;
  };

  DenseLayer hidden;   // PReLU
  DenseLayer mu_head;  // identity
  DenseLayer var_head; // softplus

  /// (mu, var) with var >= kVarianceFloor elementwise.
  GaussianVars forward(const Var& input) const;

  static void init(ParamSet& params, const std::string& prefix, Dims dims, Rng& rng);
  static GaussianHeadFnn bind(const BoundParams& params, const std::string& prefix);
};

/// One branch of the MI-FNN: PReLU(z exp(W1) + b1) exp(W2) + b2, before the
/// branch's output activation.
struct MiFnnBranch {
  Var w1;  // in_dim x m (raw; effective weight is exp(w1))
  Var b1;  // 1 x m
  Var w2;  // m x n_x (raw)
  Var b2;  // 1 x n_x

  Var pre_activation(const Var& z) const;
};

struct MiFnnParams {
  MiFnnBranch mu;
  MiFnnBranch sigma;

  static void init(ParamSet& params, const std::string& prefix, Eigen::Index in_dim,
                   Eigen::Index hidden, Eigen::Index n_x, Rng& rng);
  static MiFnnParams bind(const BoundParams& params, const std::string& prefix);
};

/// PReLU(PReLU(z exp(W1_mu) + b1_mu) exp(W2_mu) + b2_mu); nondecreasing in z.
Var mi_fnn_mu(const MiFnnParams& p, const Var& z);
/// SoftPlus(PReLU(z exp(W1_sigma) + b1_sigma) exp(W2_sigma) + b2_sigma).
Var mi_fnn_sigma(const MiFnnParams& p, const Var& z);

struct LstmState {
  Var hidden;  // 1 x n_h
  Var cell;    // 1 x n_h
};

/// Gates act on the concatenated row (z_t, h_{t-1}) of width n_z + n_h.
struct LstmParams {
  Var w_input, w_forget, w_output, w_candidate;  // (n_z + n_h) x n_h
  Var b_input, b_forget, b_output, b_candidate;  // 1 x n_h

  Eigen::Index state_width() const { return b_input.cols(); }

  static void init(ParamSet& params, const std::string& prefix, Eigen::Index input_width,
                   Eigen::Index state_width, Rng& rng);
  static LstmParams bind(const BoundParams& params, const std::string& prefix);
};

LstmState lstm_step(const LstmParams& p, const Var& z, const LstmState& state);

// Width defaults for the one-hidden-layer networks.
Eigen::Index default_emission_width(Eigen::Index n_x);
Eigen::Index default_encoder_width(Eigen::Index n_x);
inline constexpr Eigen::Index kPriorWidth = 16;
inline constexpr Eigen::Index kMiFnnWidth = 8;
inline constexpr double kForgetBiasInit = 1.0;

}  // namespace gfm
