#pragma once

// Scoring fitted models: importance-sampled marginal log-likelihood, lower
// bounds on train/test splits, posterior factor paths and comparison tables.

#include "gfm/inference.hpp"
#include "gfm/panel.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace gfm {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MllEstimate {
  /// Mean of the per-path log weights log p(x|z) + log p(z) - log q(z|x).
  double value = 0.0;
  /// log((1/L) sum exp(w_l)), the consistent importance estimate.
  double log_mean_exp = 0.0;
  int num_samples = 0;
  std::vector<double> per_sample;
  /// Deviation of per_sample / sqrt(L); 0 when L = 1.
  double std_error = 0.0;
  /// Mean over the same paths of sum_t [log p(x_t|z_t) - KL(q_t || p_t)].
  double vlb = 0.0;
  std::vector<double> per_sample_vlb;
};

/// Draws `samples` factor paths from q. Path l uses its own generator seeded
/// from (seed, l), so results do not depend on `threads`.
MllEstimate mll_importance(const FittedModel& model, const Matrix& x, const FactorState& state_in,
                           int samples, std::uint64_t seed, int threads = 1);

/// As above with caller-supplied standard-normal draws: one T x n_z matrix
/// per path.
MllEstimate mll_importance(const FittedModel& model, const Matrix& x, const FactorState& state_in,
                           const std::vector<Matrix>& eps, int threads = 1);

struct PosteriorPass {
  Matrix mean;  // T x n_z
  Matrix sd;    // T x n_z
  FactorState state_out;
};

/// Deterministic pass that feeds the posterior mean forward as the factor.
PosteriorPass posterior_mean_pass(const FittedModel& model, const Matrix& x,
                                  const FactorState& state_in);

struct FactorPath {
  std::vector<Date> dates;
  Matrix mean;
  Matrix sd;
};

FactorPath factor_path(const FittedModel& model, const ReturnPanel& panel);

enum class SplitSide { Train, Test };
std::string_view split_name(SplitSide side);

struct ComparisonRow {
  std::string model;  // e.g. "APT(1)"
  SplitSide split = SplitSide::Train;
  double mll_per_day = 0.0;  // log-mean-exp estimate / days
  double vlb_per_day = 0.0;
  double mll_stderr = 0.0;   // per day

  friend bool operator==(const ComparisonRow&, const ComparisonRow&) = default;
};

struct SplitScores {
  ComparisonRow train;
  ComparisonRow test;
  MllEstimate train_mll;
  MllEstimate test_mll;
  Eigen::Index train_days = 0;
  Eigen::Index test_days = 0;
};

/// Scores both sides of the split. The test side starts from the state a
/// posterior-mean pass over the training side ends in.
SplitScores evaluate_split(const FittedModel& model, const ReturnPanel& panel, Date divide,
                           int samples = 256, std::uint64_t seed = 0, int threads = 1);

/// Two rows per model, sorted by family then factor count, train before test.
std::vector<ComparisonRow> compare(const std::vector<FittedModel>& models, const ReturnPanel& panel,
                                   Date divide, int samples = 256, std::uint64_t seed = 0,
                                   int threads = 1);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> parse_comparison_csv(const std::string& text);
std::string factor_path_csv(const FactorPath& path);

}  // namespace gfm
