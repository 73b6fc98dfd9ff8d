#include "gfm/networks.hpp"

#include <algorithm>
#include <stdexcept>

namespace gfm {

namespace {

void require_width(const Var& x, Eigen::Index expected, std::string_view what) {
  if (x.rows() != 1 || x.cols() != expected) {
    throw ad::ShapeError(std::string(what) + ": expected a 1x" + std::to_string(expected) +
                         " input, got " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()));
  }
}

}  // namespace

Var DenseLayer::forward(const Var& x) const {
  require_width(x, weights.rows(), "dense layer");
  const Var pre = ad::matmul(x, weights) + bias;
  switch (activation) {
    case Activation::PRelu:
      return ad::prelu(pre);
    case Activation::Softplus:
      return ad::softplus(pre);
    case Activation::Identity:
      break;
  }
  return pre;
}

void DenseLayer::init(ParamSet& params, const std::string& prefix, Eigen::Index in_dim,
                      Eigen::Index out_dim, Rng& rng) {
  params.set(prefix + ".weights", glorot_uniform(in_dim, out_dim, rng));
  params.set(prefix + ".bias", Matrix::Zero(1, out_dim));
}

DenseLayer DenseLayer::bind(const BoundParams& params, const std::string& prefix,
                            Activation activation) {
  DenseLayer layer{params[prefix + ".weights"], params[prefix + ".bias"], activation};
  if (layer.weights.cols() != layer.bias.cols() || layer.bias.rows() != 1) {
    throw ad::ShapeError("dense layer '" + prefix + "': weights and bias disagree");
  }
  return layer;
}

GaussianVars GaussianHeadFnn::forward(const Var& input) const {
  const Var h = hidden.forward(input);
  return {mu_head.forward(h), ad::clamp_min(var_head.forward(h), kVarianceFloor)};
}

void GaussianHeadFnn::init(ParamSet& params, const std::string& prefix, Dims dims, Rng& rng) {
  DenseLayer::init(params, prefix + ".hidden", dims.input, dims.hidden, rng);
  DenseLayer::init(params, prefix + ".mu", dims.hidden, dims.output, rng);
  DenseLayer::init(params, prefix + ".var", dims.hidden, dims.output, rng);
}

GaussianHeadFnn GaussianHeadFnn::bind(const BoundParams& params, const std::string& prefix) {
  return {DenseLayer::bind(params, prefix + ".hidden", Activation::PRelu),
          DenseLayer::bind(params, prefix + ".mu", Activation::Identity),
          DenseLayer::bind(params, prefix + ".var", Activation::Softplus)};
}

Var MiFnnBranch::pre_activation(const Var& z) const {
  require_width(z, w1.rows(), "MI-FNN");
  const Var hidden = ad::prelu(ad::matmul(z, ad::exp(w1)) + b1);
  return ad::matmul(hidden, ad::exp(w2)) + b2;
}

void MiFnnParams::init(ParamSet& params, const std::string& prefix, Eigen::Index in_dim,
                       Eigen::Index hidden, Eigen::Index n_x, Rng& rng) {
  // exp(W) starts near e^-1 so the variance branch does not explode early.
  for (const char* branch : {"mu", "sigma"}) {
    const std::string b(branch);
    params.set(prefix + ".W1_" + b, normal_matrix(in_dim, hidden, -1.0, 0.5, rng));
    params.set(prefix + ".b1_" + b, Matrix::Zero(1, hidden));
    params.set(prefix + ".W2_" + b, normal_matrix(hidden, n_x, -1.0, 0.5, rng));
    params.set(prefix + ".b2_" + b, Matrix::Zero(1, n_x));
  }
}

MiFnnParams MiFnnParams::bind(const BoundParams& params, const std::string& prefix) {
  auto branch = [&](const std::string& b) {
    return MiFnnBranch{params[prefix + ".W1_" + b], params[prefix + ".b1_" + b],
                       params[prefix + ".W2_" + b], params[prefix + ".b2_" + b]};
  };
  return {branch("mu"), branch("sigma")};
}

Var mi_fnn_mu(const MiFnnParams& p, const Var& z) {
  return ad::prelu(p.mu.pre_activation(z));
}

Var mi_fnn_sigma(const MiFnnParams& p, const Var& z) {
  return ad::softplus(p.sigma.pre_activation(z));
}

void LstmParams::init(ParamSet& params, const std::string& prefix, Eigen::Index input_width,
                      Eigen::Index state_width, Rng& rng) {
  const Eigen::Index fan_in = input_width + state_width;
  for (const char* gate : {"input", "forget", "output", "candidate"}) {
    const std::string g(gate);
    params.set(prefix + ".W_" + g, glorot_uniform(fan_in, state_width, rng));
    const double bias = g == "forget" ? kForgetBiasInit : 0.0;
    params.set(prefix + ".b_" + g, Matrix::Constant(1, state_width, bias));
  }
}

LstmParams LstmParams::bind(const BoundParams& params, const std::string& prefix) {
  return {params[prefix + ".W_input"],  params[prefix + ".W_forget"],
          params[prefix + ".W_output"], params[prefix + ".W_candidate"],
          params[prefix + ".b_input"],  params[prefix + ".b_forget"],
          params[prefix + ".b_output"], params[prefix + ".b_candidate"]};
}

LstmState lstm_step(const LstmParams& p, const Var& z, const LstmState& state) {
  const Eigen::Index n_h = p.state_width();
  require_width(state.hidden, n_h, "LSTM hidden state");
  require_width(state.cell, n_h, "LSTM cell state");
  require_width(z, p.w_input.rows() - n_h, "LSTM input");

  const Var joined = ad::concat_cols(z, state.hidden);
  const Var i = ad::sigmoid(ad::matmul(joined, p.w_input) + p.b_input);
  const Var f = ad::sigmoid(ad::matmul(joined, p.w_forget) + p.b_forget);
  const Var o = ad::sigmoid(ad::matmul(joined, p.w_output) + p.b_output);
  const Var g = ad::tanh(ad::matmul(joined, p.w_candidate) + p.b_candidate);
  const Var cell = f * state.cell + i * g;
  return {o * ad::tanh(cell), cell};
}

Eigen::Index default_emission_width(Eigen::Index n_x) { return std::max<Eigen::Index>(16, 2 * n_x); }
Eigen::Index default_encoder_width(Eigen::Index n_x) { return std::max<Eigen::Index>(16, 2 * n_x); }

}  // namespace gfm
