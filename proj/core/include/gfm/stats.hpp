#pragma once

// Per-series summary statistics of a return panel.

#include "gfm/panel.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gfm {

struct MomentReport {
  std::string symbol;
  double min = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double m1 = 0.0;                // mean
  double m2 = 0.0;                // standard deviation, denominator T - 1
  std::optional<double> m3;       // adjusted Fisher-Pearson skewness; empty for constant series
  std::optional<double> m4;       // bias-adjusted excess kurtosis; empty for constant series
};

/// Linear interpolation between order statistics (position p * (n - 1)).
double quantile(std::span<const double> sorted, double p);

/// Throws std::invalid_argument for fewer than 4 observations.
MomentReport moments(std::span<const double> series, std::string symbol = {});
std::vector<MomentReport> moments(const ReturnPanel& panel);

/// CSV with header symbol,min,q1,q2,q3,max,m1,m2,m3,m4; undefined values are
/// written as "nan".
std::string moments_csv(const std::vector<MomentReport>& reports);

/// Pearson correlation of two equally long series.
double correlation(std::span<const double> a, std::span<const double> b);

}  // namespace gfm
