#pragma once

// Synthetic return panels with known ground truth.

#include "gfm/models.hpp"
#include "gfm/panel.hpp"

#include <cstdint>
#include <optional>

namespace gfm {

struct FixtureOptions {
  Eigen::Index steps = 1000;
  std::uint64_t seed = 0;
  /// Multiplies the cross-asset spread of the drawn parameters.
  double dispersion = 1.0;
  /// Overrides the persistence a of every variance factor.
  std::optional<double> persistence;
  /// Rows before this index get their deviations from the column mean
  /// scaled by sqrt(2), doubling the early variance.
  std::optional<Eigen::Index> regime_shift;
  Date start{2000, 1, 3};
};

struct Fixture {
  ModelSpec spec;
  ParamSet theta;
  ReturnPanel panel;
  Matrix z_path;  // steps x n_z ground-truth factors
};

/// Ground-truth parameters. Parametric families draw per-asset values around
/// published point estimates for US large caps; network families use a
/// seeded random initialization.
ParamSet fixture_theta(const ModelSpec& spec, Rng& rng, const FixtureOptions& options = {});

/// Deterministic in (spec, options).
Fixture make_fixture(const ModelSpec& spec, const FixtureOptions& options = {});

/// The default fixture: APT(1) on 10 assets.
Fixture make_fixture(const FixtureOptions& options = {});

}  // namespace gfm
