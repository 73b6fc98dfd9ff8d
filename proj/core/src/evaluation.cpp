#include "gfm/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

namespace gfm {

namespace {

// Binds the parameters once; each timestep records above `mark` and is then
// discarded, so the tape stays small over long paths.
class PathScorer {
 public:
  PathScorer(const ModelSpec& spec, const ParamSet& merged)
      : bound_(merged, tape_), model_(spec, bound_), encoder_(bind_encoder(bound_)), mark_(tape_.size()) {}

  struct Step {
    double log_weight;
    double recon;
    double kl;
    RowVector mu_q;
    RowVector var_q;
    FactorState next;
  };

  // eps == nullptr advances with the posterior mean instead of a draw.
  Step step(const RowVector& x_row, const FactorState& state, const RowVector* eps) {
    const TapeFactorState s = model_.lift(state);
    const Var x = ad::constant(tape_, Matrix(x_row));
    const GaussianVars q = encode(encoder_, x, model_.memory(s));
    const GaussianVars p = model_.prior(s);
    const Var z = eps != nullptr ? reparam_sample(q, ad::constant(tape_, Matrix(*eps))) : q.mu;
    const Var recon = gaussian_log_density(x, model_.emission(z));
    const Var kl = kl_diag_normal(q, p);
    Step out;
    out.recon = recon.scalar();
    out.kl = kl.scalar();
    out.log_weight = out.recon + gaussian_log_density(z, p).scalar() - gaussian_log_density(z, q).scalar();
    out.mu_q = q.mu.value().row(0);
    out.var_q = q.var.value().row(0);
    out.next = BoundModel::lower(model_.advance(s, z));
    tape_.truncate(mark_);
    return out;
  }

 private:
  ad::Tape tape_;
  BoundParams bound_;
  BoundModel model_;
  GaussianHeadFnn encoder_;
  std::size_t mark_;
};

void check_inputs(const FittedModel& model, const Matrix& x) {
  if (model.spec.n_z >= 5) {
    throw EvaluationError("importance sampling is limited to fewer than 5 factors");
  }
  if (x.cols() != model.spec.n_x) {
    throw ad::ShapeError("data has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(model.spec.n_x));
  }
  if (x.rows() < 1) throw EvaluationError("no observations to score");
}

Rng path_rng(std::uint64_t seed, int path) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path)};
  return Rng(seq);
}

template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(0, i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += threads) fn(w, i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

MllEstimate score_paths(const FittedModel& model, const Matrix& x, const FactorState& state_in,
                        int samples, int threads,
                        const std::function<RowVector(Rng*, int, Eigen::Index)>& eps_at,
                        std::uint64_t seed) {
  check_inputs(model, x);
  if (samples < 1) throw std::invalid_argument("importance sampling needs at least one path");
  const ParamSet merged = model.merged();
  MllEstimate est;
  est.num_samples = samples;
  est.per_sample.assign(static_cast<std::size_t>(samples), 0.0);
  est.per_sample_vlb.assign(static_cast<std::size_t>(samples), 0.0);

  std::vector<std::unique_ptr<PathScorer>> scorers(static_cast<std::size_t>(std::max(threads, 1)));
  parallel_for(samples, threads, [&](int worker, int l) {
    auto& scorer = scorers[static_cast<std::size_t>(worker)];
    if (!scorer) scorer = std::make_unique<PathScorer>(model.spec, merged);
    Rng rng = path_rng(seed, l);
    FactorState state = state_in;
    double w = 0.0, recon = 0.0, kl = 0.0;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const RowVector eps = eps_at(&rng, l, t);
      const auto fail = [&](const std::string& why) {
        return EvaluationError("non-finite importance weight on path " + std::to_string(l) +
                               " at timestep " + std::to_string(t) + why);
      };
      PathScorer::Step s;
      try {
        s = scorer->step(x.row(t), state, &eps);
      } catch (const std::domain_error& e) {
        throw fail(std::string(" (") + e.what() + ")");
      }
      if (!std::isfinite(s.log_weight) || !std::isfinite(s.recon) || !std::isfinite(s.kl)) {
        throw fail("");
      }
      w += s.log_weight;
      recon += s.recon;
      kl += s.kl;
      state = s.next;
    }
    est.per_sample[static_cast<std::size_t>(l)] = w;
    est.per_sample_vlb[static_cast<std::size_t>(l)] = recon - kl;
  });

  const double n = samples;
  double sum = 0.0, vsum = 0.0;
  for (int l = 0; l < samples; ++l) {
    sum += est.per_sample[static_cast<std::size_t>(l)];
    vsum += est.per_sample_vlb[static_cast<std::size_t>(l)];
  }
  est.value = sum / n;
  est.vlb = vsum / n;
  const double top = *std::max_element(est.per_sample.begin(), est.per_sample.end());
  double acc = 0.0, ss = 0.0;
  for (double w : est.per_sample) {
    acc += std::exp(w - top);
    ss += (w - est.value) * (w - est.value);
  }
  est.log_mean_exp = top + std::log(acc / n);
  est.std_error = samples > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  return est;
}

}  // namespace

MllEstimate mll_importance(const FittedModel& model, const Matrix& x, const FactorState& state_in,
                           int samples, std::uint64_t seed, int threads) {
  const int n_z = model.spec.n_z;
  return score_paths(
      model, x, state_in, samples, threads,
      [n_z](Rng* rng, int, Eigen::Index) {
        std::normal_distribution<double> normal(0.0, 1.0);
        RowVector e(n_z);
        for (int j = 0; j < n_z; ++j) e(j) = normal(*rng);
        return e;
      },
      seed);
}

MllEstimate mll_importance(const FittedModel& model, const Matrix& x, const FactorState& state_in,
                           const std::vector<Matrix>& eps, int threads) {
  for (const auto& e : eps) {
    if (e.rows() != x.rows() || e.cols() != model.spec.n_z) {
      throw ad::ShapeError("mll_importance: every eps matrix must be " + std::to_string(x.rows()) +
                           "x" + std::to_string(model.spec.n_z));
    }
  }
  return score_paths(
      model, x, state_in, static_cast<int>(eps.size()), threads,
      [&eps](Rng*, int l, Eigen::Index t) { return RowVector(eps[static_cast<std::size_t>(l)].row(t)); },
      0);
}

PosteriorPass posterior_mean_pass(const FittedModel& model, const Matrix& x,
                                  const FactorState& state_in) {
  if (x.cols() != model.spec.n_x) {
    throw ad::ShapeError("data has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(model.spec.n_x));
  }
  PathScorer scorer(model.spec, model.merged());
  PosteriorPass out;
  out.mean.resize(x.rows(), model.spec.n_z);
  out.sd.resize(x.rows(), model.spec.n_z);
  FactorState state = state_in;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const auto s = scorer.step(x.row(t), state, nullptr);
    out.mean.row(t) = s.mu_q;
    out.sd.row(t) = s.var_q.cwiseSqrt();
    state = s.next;
  }
  out.state_out = state;
  return out;
}

FactorPath factor_path(const FittedModel& model, const ReturnPanel& panel) {
  PosteriorPass pass = posterior_mean_pass(model, panel.returns, initial_state(model.spec, model.theta));
  return {panel.dates, std::move(pass.mean), std::move(pass.sd)};
}

std::string_view split_name(SplitSide side) { return side == SplitSide::Train ? "train" : "test"; }

SplitScores evaluate_split(const FittedModel& model, const ReturnPanel& panel, Date divide,
                           int samples, std::uint64_t seed, int threads) {
  if (panel.assets() != model.spec.n_x) {
    throw EvaluationError("panel has " + std::to_string(panel.assets()) + " assets, " +
                          model.spec.label() + " was fitted on " + std::to_string(model.spec.n_x));
  }
  const Eigen::Index k = split_index(panel, divide);
  if (k == 0 || k == panel.days()) {
    throw EvaluationError("split date " + divide.iso() + " is outside (" + panel.dates.front().iso() +
                          ", " + panel.dates.back().iso() + "]; one side would be empty");
  }
  const Matrix train = panel.returns.topRows(k);
  const Matrix test = panel.returns.bottomRows(panel.days() - k);
  const FactorState start = initial_state(model.spec, model.theta);
  const FactorState warm = posterior_mean_pass(model, train, start).state_out;

  SplitScores s;
  s.train_days = train.rows();
  s.test_days = test.rows();
  s.train_mll = mll_importance(model, train, start, samples, seed, threads);
  s.test_mll = mll_importance(model, test, warm, samples, seed + 1, threads);
  auto row = [&](SplitSide side, const MllEstimate& e, Eigen::Index days) {
    const double d = static_cast<double>(days);
    return ComparisonRow{model.spec.label(), side, e.log_mean_exp / d, e.vlb / d, e.std_error / d};
  };
  s.train = row(SplitSide::Train, s.train_mll, s.train_days);
  s.test = row(SplitSide::Test, s.test_mll, s.test_days);
  return s;
}

std::vector<ComparisonRow> compare(const std::vector<FittedModel>& models, const ReturnPanel& panel,
                                   Date divide, int samples, std::uint64_t seed, int threads) {
  for (const auto& m : models) {
    if (m.spec.n_x != panel.assets() || (!m.symbols.empty() && m.symbols != panel.symbols)) {
      throw EvaluationError(m.spec.label() + " was fitted on a different panel (assets or symbols differ)");
    }
  }
  std::vector<const FittedModel*> order;
  for (const auto& m : models) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(),
                   [](const FittedModel* a, const FittedModel* b) { return spec_less(a->spec, b->spec); });
  std::vector<ComparisonRow> rows;
  for (const FittedModel* m : order) {
    const SplitScores s = evaluate_split(*m, panel, divide, samples, seed, threads);
    rows.push_back(s.train);
    rows.push_back(s.test);
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << "model,split,mll_per_day,vlb_per_day,mll_stderr\n";
  for (const auto& r : rows) {
    os << r.model << ',' << split_name(r.split) << ',' << format_double(r.mll_per_day) << ','
       << format_double(r.vlb_per_day) << ',' << format_double(r.mll_stderr) << '\n';
  }
  return os.str();
}

std::vector<ComparisonRow> parse_comparison_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "model,split,mll_per_day,vlb_per_day,mll_stderr") {
    throw EvaluationError("comparison table: unexpected header");
  }
  std::vector<ComparisonRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw EvaluationError("comparison table line " + std::to_string(lineno) + ": expected 5 fields");
    ComparisonRow r;
    r.model = f[0];
    if (f[1] == "train") {
      r.split = SplitSide::Train;
    } else if (f[1] == "test") {
      r.split = SplitSide::Test;
    } else {
      throw EvaluationError("comparison table line " + std::to_string(lineno) + ": bad split '" + f[1] + "'");
    }
    double* targets[] = {&r.mll_per_day, &r.vlb_per_day, &r.mll_stderr};
    for (int i = 0; i < 3; ++i) {
      const std::string& s = f[static_cast<std::size_t>(i + 2)];
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), *targets[i]);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw EvaluationError("comparison table line " + std::to_string(lineno) + ": bad number '" + s + "'");
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string factor_path_csv(const FactorPath& path) {
  std::ostringstream os;
  const Eigen::Index n_z = path.mean.cols();
  os << "date";
  for (Eigen::Index j = 1; j <= n_z; ++j) os << ",mean_" << j;
  for (Eigen::Index j = 1; j <= n_z; ++j) os << ",sd_" << j;
  os << '\n';
  for (Eigen::Index t = 0; t < path.mean.rows(); ++t) {
    os << path.dates[static_cast<std::size_t>(t)].iso();
    for (Eigen::Index j = 0; j < n_z; ++j) os << ',' << format_double(path.mean(t, j));
    for (Eigen::Index j = 0; j < n_z; ++j) os << ',' << format_double(path.sd(t, j));
    os << '\n';
  }
  return os.str();
}

}  // namespace gfm
