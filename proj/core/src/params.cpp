#include "gfm/params.hpp"

#include <cmath>
#include <stdexcept>

namespace gfm {

void ParamSet::set(std::string name, Matrix value) {
  values_.insert_or_assign(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const {
  return values_.find(name) != values_.end();
}

const Matrix& ParamSet::at(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) {
    throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  }
  return it->second;
}

Matrix& ParamSet::at(std::string_view name) {
  auto it = values_.find(name);
  if (it == values_.end()) {
    throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  }
  return it->second;
}

Eigen::Index ParamSet::count() const {
  Eigen::Index n = 0;
  for (const auto& [name, m] : values_) n += m.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, m] : values_) {
    out.set(name, Matrix::Zero(m.rows(), m.cols()));
  }
  return out;
}

ParamSet ParamSet::subset(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [name, m] : values_) {
    if (std::string_view(name).starts_with(prefix)) out.set(name, m);
  }
  return out;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [name, m] : other) set(name, m);
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (values_.size() != other.values_.size()) return false;
  auto it = other.values_.begin();
  for (const auto& [name, m] : values_) {
    if (name != it->first || m.rows() != it->second.rows() ||
        m.cols() != it->second.cols()) {
      return false;
    }
    ++it;
  }
  return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  auto it = b.values_.begin();
  for (const auto& [name, m] : a.values_) {
    if (m != it->second) return false;
    ++it;
  }
  return true;
}

BoundParams::BoundParams(const ParamSet& params, ad::Tape& tape) : tape_(&tape) {
  for (const auto& [name, m] : params) {
    vars_.emplace(name, ad::constant(tape, m));
  }
}

BoundParams::BoundParams(ad::Tape& tape, std::span<const std::string> names,
                         std::span<const ad::Var> vars)
    : tape_(&tape) {
  if (names.size() != vars.size()) {
    throw std::invalid_argument("BoundParams: names and vars differ in length");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (&vars[i].tape() != &tape) throw std::invalid_argument("BoundParams: variable on another tape");
    vars_.emplace(names[i], vars[i]);
  }
}

ad::Var BoundParams::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) {
    throw std::out_of_range("parameter '" + std::string(name) + "' is not bound");
  }
  return it->second;
}

ParamSet BoundParams::gradients() const {
  ParamSet out;
  for (const auto& [name, v] : vars_) out.set(name, v.grad());
  return out;
}

Matrix glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-s, s);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = u(rng);
  return w;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double mean,
                     double sd, Rng& rng) {
  std::normal_distribution<double> n(mean, sd);
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n(rng);
  return w;
}

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw std::domain_error("inverse_softplus: argument must be > 0");
  // log(expm1(y)) loses precision for large y; y + log1p(-exp(-y)) does not.
  return y > 20.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit: argument must lie in (0, 1)");
  return std::log(p) - std::log1p(-p);
}

}  // namespace gfm
