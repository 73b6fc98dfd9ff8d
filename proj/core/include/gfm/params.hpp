#pragma once

#include "gfm/autodiff.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <random>
#include <string>
#include <string_view>

namespace gfm {

using ad::Matrix;
using Rng = std::mt19937_64;

/// Ordered name -> raw (pre-reparameterization) array map. Iteration order is
/// lexicographic by name, which fixes the flattening order used by the
/// optimizer and by serialization.
class ParamSet {
 public:
  using Map = std::map<std::string, Matrix, std::less<>>;

  void set(std::string name, Matrix value);
  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);

  Map::const_iterator begin() const { return values_.begin(); }
  Map::const_iterator end() const { return values_.end(); }
  Map::iterator begin() { return values_.begin(); }
  Map::iterator end() { return values_.end(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  /// Total number of scalar entries.
  Eigen::Index count() const;

  /// Same names and shapes, all entries zero.
  ParamSet zeros_like() const;

  /// Entries whose name starts with `prefix`.
  ParamSet subset(std::string_view prefix) const;
  void merge(const ParamSet& other);

  bool same_layout(const ParamSet& other) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  Map values_;
};

/// Name -> tape leaf for every entry of a ParamSet.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(const ParamSet& params, ad::Tape& tape);
  /// Adopts existing nodes, e.g. leaves created by ad::grad_check. `names`
  /// and `vars` are parallel.
  BoundParams(ad::Tape& tape, std::span<const std::string> names, std::span<const ad::Var> vars);

  ad::Var operator[](std::string_view name) const;
  ad::Tape& tape() const { return *tape_; }

  /// Gradients of every bound leaf after Tape::backward.
  ParamSet gradients() const;

 private:
  ad::Tape* tape_ = nullptr;
  std::map<std::string, ad::Var, std::less<>> vars_;
};

// Initializers.
Matrix glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);
Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double mean,
                     double sd, Rng& rng);

// Inverses of the positivity/range maps used for constrained parameters.
double inverse_softplus(double y);
double logit(double p);

}  // namespace gfm
