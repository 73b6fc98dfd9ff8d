#include "gfm/cli.hpp"

#include "gfm/evaluation.hpp"
#include "gfm/fixtures.hpp"
#include "gfm/model_io.hpp"
#include "gfm/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <utility>

#include "CLI11.hpp"

namespace gfm::cli {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Outputs are rendered fully before anything touches the disk, so a failing
// command leaves no partial files.
struct PendingWrites {
  std::vector<std::pair<std::string, std::string>> files;

  void add(const std::string& path, std::string contents) {
    if (!path.empty()) files.emplace_back(path, std::move(contents));
  }
  void commit() const {
    for (const auto& [path, contents] : files) write_file_atomic(path, contents);
  }
};

PanelMode panel_mode(bool prices) { return prices ? PanelMode::Prices : PanelMode::Returns; }

struct FitArgs {
  std::string panel, model, config, out, curve, split;
  bool prices = false;
};

int do_fit(const FitArgs& a, std::ostream& out) {
  const ReturnPanel full = load_panel(a.panel, panel_mode(a.prices));
  const ReturnPanel panel = a.split.empty() ? full : split_panel(full, Date::parse(a.split)).train;
  const ModelSpec spec = ModelSpec::parse(a.model, static_cast<int>(panel.assets()));
  const TrainingConfig config = a.config.empty() ? TrainingConfig{} : load_config(a.config);

  FittedModel init = init_model(spec, config.seed, &panel.returns);
  init.symbols = panel.symbols;
  const FitResult result = fit(init, panel.returns, config);

  PendingWrites writes;
  writes.add(a.out, model_to_json(result.model));
  writes.add(a.curve, curve_csv(result.curve));
  writes.commit();

  const double best = result.curve[static_cast<std::size_t>(result.best_epoch)];
  out << "model " << spec.label() << " on " << panel.assets() << " assets x " << panel.days()
      << " days\n"
      << "epochs " << config.epochs << ", best epoch " << result.best_epoch + 1 << ", VLB "
      << fixed(best, 4) << " (" << fixed(best / static_cast<double>(panel.days())) << " per day)\n"
      << "wrote " << a.out << '\n';
  return 0;
}

void print_rows(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-6s %14s %14s %12s\n", "model", "split", "mll/day",
                "vlb/day", "stderr/day");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %-6s %14.6f %14.6f %12.6f\n", r.model.c_str(),
                  std::string(split_name(r.split)).c_str(), r.mll_per_day, r.vlb_per_day,
                  r.mll_stderr);
    out << line;
  }
}

struct EvaluateArgs {
  std::string panel, model, split, out, factors;
  int mc = 256;
  std::uint64_t seed = 0;
  int threads = 1;
  bool prices = false;
};

int do_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const ReturnPanel panel = load_panel(a.panel, panel_mode(a.prices));
  const FittedModel model = load_model(a.model);
  if (model.spec.n_x != panel.assets()) {
    throw std::runtime_error(a.model + " expects " + std::to_string(model.spec.n_x) +
                             " assets but " + a.panel + " has " + std::to_string(panel.assets()));
  }
  const SplitScores s = evaluate_split(model, panel, Date::parse(a.split), a.mc, a.seed, a.threads);
  const std::vector<ComparisonRow> rows{s.train, s.test};

  PendingWrites writes;
  writes.add(a.out, comparison_csv(rows));
  if (!a.factors.empty()) writes.add(a.factors, factor_path_csv(factor_path(model, panel)));
  writes.commit();

  out << model.spec.label() << ": train " << s.train_days << " days, test " << s.test_days
      << " days, L = " << a.mc << '\n';
  print_rows(out, rows);
  out << "train-test VLB gap per day " << fixed(s.train.vlb_per_day - s.test.vlb_per_day) << '\n';
  return 0;
}

struct SimulateArgs {
  std::string model, params, out, factors;
  int days = 1000;
  int assets = 10;
  std::uint64_t seed = 0;
};

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.days < 1) throw std::invalid_argument("--days must be positive");
  Fixture f;
  if (!a.params.empty()) {
    const FittedModel m = load_model(a.params);
    const ModelSpec requested = ModelSpec::parse(a.model, m.spec.n_x);
    if (!(requested == m.spec)) {
      throw std::invalid_argument("--model " + a.model + " does not match " + a.params + " (" +
                                  m.spec.label() + ")");
    }
    const SimulatedPath path = simulate(m.spec, m.theta, a.days, initial_state(m.spec, m.theta), a.seed);
    f.spec = m.spec;
    f.theta = m.theta;
    f.panel.dates = business_days(FixtureOptions{}.start, static_cast<std::size_t>(a.days));
    f.panel.symbols = m.symbols;
    if (f.panel.symbols.empty()) {
      for (int i = 0; i < m.spec.n_x; ++i) f.panel.symbols.push_back("S" + std::to_string(i + 1));
    }
    f.panel.returns = path.x;
    f.z_path = path.z;
  } else {
    FixtureOptions opts;
    opts.steps = a.days;
    opts.seed = a.seed;
    f = make_fixture(ModelSpec::parse(a.model, a.assets), opts);
  }

  PendingWrites writes;
  std::ostringstream panel_text;
  write_panel(panel_text, f.panel);
  writes.add(a.out, panel_text.str());
  if (!a.factors.empty()) {
    std::ostringstream z;
    z << "date";
    for (Eigen::Index j = 1; j <= f.z_path.cols(); ++j) z << ",z_" << j;
    z << '\n';
    for (Eigen::Index t = 0; t < f.z_path.rows(); ++t) {
      z << f.panel.dates[static_cast<std::size_t>(t)].iso();
      for (Eigen::Index j = 0; j < f.z_path.cols(); ++j) z << ',' << format_double(f.z_path(t, j));
      z << '\n';
    }
    writes.add(a.factors, z.str());
  }
  writes.commit();

  out << "simulated " << f.spec.label() << ": " << f.panel.days() << " days x "
      << f.panel.assets() << " assets, " << f.panel.dates.front().iso() << " to "
      << f.panel.dates.back().iso() << '\n'
      << "wrote " << a.out << '\n';
  return 0;
}

struct StatsArgs {
  std::string panel, out;
  bool prices = false;
};

int do_stats(const StatsArgs& a, std::ostream& out) {
  const ReturnPanel panel = load_panel(a.panel, panel_mode(a.prices));
  const auto reports = moments(panel);
  PendingWrites writes;
  writes.add(a.out, moments_csv(reports));
  writes.commit();

  char line[200];
  std::snprintf(line, sizeof line, "%-10s %10s %10s %10s %10s %10s %10s %10s %10s %10s\n", "symbol",
                "min", "Q1", "Q2", "Q3", "max", "M1", "M2", "M3", "M4");
  out << line;
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 5) : std::string("undef"); };
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-10s %10.5f %10.5f %10.5f %10.5f %10.5f %10.5f %10.5f %10s %10s\n",
                  r.symbol.c_str(), r.min, r.q1, r.q2, r.q3, r.max, r.m1, r.m2, opt(r.m3).c_str(),
                  opt(r.m4).c_str());
    out << line;
  }
  return 0;
}

struct CompareArgs {
  std::string panel, split, out;
  std::vector<std::string> models;
  int mc = 256;
  std::uint64_t seed = 0;
  int threads = 1;
  bool prices = false;
};

int do_compare(const CompareArgs& a, std::ostream& out) {
  const ReturnPanel panel = load_panel(a.panel, panel_mode(a.prices));
  std::vector<FittedModel> models;
  for (const auto& path : a.models) models.push_back(load_model(path));
  const auto rows = compare(models, panel, Date::parse(a.split), a.mc, a.seed, a.threads);
  PendingWrites writes;
  writes.add(a.out, comparison_csv(rows));
  writes.commit();
  print_rows(out, rows);
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    out << rows[i].model << " train-test VLB gap per day "
        << fixed(rows[i].vlb_per_day - rows[i + 1].vlb_per_day) << '\n';
  }
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent factor models for daily return panels", "gfm"};
  app.require_subcommand(1);

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a return panel");
  fit_cmd->add_option("panel", fit_args.panel, "Panel CSV")->required();
  fit_cmd->add_option("--model", fit_args.model, "Model label, e.g. APT(1)")->required();
  fit_cmd->add_option("--config", fit_args.config, "Training config JSON");
  fit_cmd->add_option("--out", fit_args.out, "Model file to write")->required();
  fit_cmd->add_option("--curve", fit_args.curve, "Training curve CSV to write");
  fit_cmd->add_option("--split", fit_args.split, "Fit only on days before this date");
  fit_cmd->add_flag("--prices", fit_args.prices, "Panel holds prices, not returns");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a fitted model on both sides of a split");
  eval_cmd->add_option("panel", eval_args.panel, "Panel CSV")->required();
  eval_cmd->add_option("modelfile", eval_args.model, "Fitted model file")->required();
  eval_cmd->add_option("--split", eval_args.split, "First test date (YYYY-MM-DD)")->required();
  eval_cmd->add_option("--mc", eval_args.mc, "Importance-sampling paths")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_args.seed, "Sampling seed");
  eval_cmd->add_option("--threads", eval_args.threads, "Worker threads")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_args.out, "Comparison CSV to write");
  eval_cmd->add_option("--factors", eval_args.factors, "Posterior factor path CSV to write");
  eval_cmd->add_flag("--prices", eval_args.prices, "Panel holds prices, not returns");

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a synthetic return panel");
  sim_cmd->add_option("--model", sim_args.model, "Model label, e.g. L-SVFM(1)")->required();
  sim_cmd->add_option("--params", sim_args.params, "Model file supplying the parameters");
  sim_cmd->add_option("--days", sim_args.days, "Number of days")->required();
  sim_cmd->add_option("--seed", sim_args.seed, "Simulation seed")->required();
  sim_cmd->add_option("--assets", sim_args.assets, "Assets when no --params given")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", sim_args.out, "Panel CSV to write")->required();
  sim_cmd->add_option("--factors", sim_args.factors, "True factor path CSV to write");

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "Summary statistics per series");
  stats_cmd->add_option("panel", stats_args.panel, "Panel CSV")->required();
  stats_cmd->add_option("--out", stats_args.out, "Moments CSV to write");
  stats_cmd->add_flag("--prices", stats_args.prices, "Panel holds prices, not returns");

  CompareArgs cmp_args;
  auto* cmp_cmd = app.add_subcommand("compare", "Comparison table for several fitted models");
  cmp_cmd->add_option("panel", cmp_args.panel, "Panel CSV")->required();
  cmp_cmd->add_option("modelfiles", cmp_args.models, "Fitted model files")->required();
  cmp_cmd->add_option("--split", cmp_args.split, "First test date (YYYY-MM-DD)")->required();
  cmp_cmd->add_option("--mc", cmp_args.mc, "Importance-sampling paths")->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--seed", cmp_args.seed, "Sampling seed");
  cmp_cmd->add_option("--threads", cmp_args.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--out", cmp_args.out, "Comparison CSV to write");
  cmp_cmd->add_flag("--prices", cmp_args.prices, "Panel holds prices, not returns");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "gfm: " << one_line(e.what()) << " (see gfm --help)\n";
    return 2;
  }

  try {
    if (*fit_cmd) return do_fit(fit_args, out);
    if (*eval_cmd) return do_evaluate(eval_args, out);
    if (*sim_cmd) return do_simulate(sim_args, out);
    if (*stats_cmd) return do_stats(stats_args, out);
    if (*cmp_cmd) return do_compare(cmp_args, out);
  } catch (const std::exception& e) {
    err << "gfm: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

}  // namespace gfm::cli
