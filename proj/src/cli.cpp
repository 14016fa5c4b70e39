#include <netfilt/cli.hpp>
#include <netfilt/harness.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>

namespace netfilt {

namespace fs = std::filesystem;

namespace {

std::string default_out(const std::string& scenario_path, const char* suffix) {
  const fs::path p(scenario_path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

Scenario load_with_overrides(const CliOptions& o) {
  Scenario s = load_scenario(o.scenario_path);
  for (const auto& assignment : o.overrides) apply_override(s, assignment);
  if (o.seed) s.seed = *o.seed;
  if (o.realisations) s.run.realisations = *o.realisations;
  return s;
}

RunOptions run_options(const CliOptions& o) {
  RunOptions r;
  r.threads = o.threads;
  return r;
}

double last_or_nan(const std::vector<double>& v) { return v.empty() ? std::nan("") : v.back(); }

void print_summary(std::ostream& out, const RunSummary& s) {
  out << "realisations: " << s.realisations << " (diverged " << s.diverged << ")\n";
  out << "final central MSE: " << last_or_nan(s.central_mse) << '\n';
  out << "final agent MSE: min " << last_or_nan(s.agent_mse_min) << ", mean " << last_or_nan(s.agent_mse_mean)
      << ", max " << last_or_nan(s.agent_mse_max) << '\n';
  out << "final mean |Delta|^2: " << last_or_nan(s.delta_sq) << '\n';
  out << "consensus radius: " << s.report.lemma1_radius << '\n';
  out << "window product check: "
      << (s.report.theorem3_k ? "k = " + std::to_string(*s.report.theorem3_k) : std::string("no contracting window"))
      << '\n';
  if (s.report.fit)
    out << "exponential fit: rho " << s.report.fit->rho << ", nu " << s.report.fit->nu
        << (s.report.fit->valid ? "" : " (invalid)") << '\n';
  out << "wall time: " << s.wall_seconds << " s\n";
}

int cmd_run(const CliOptions& o, std::ostream& out) {
  const Scenario s = load_with_overrides(o);
  const RunSummary summary = run_scenario(s, run_options(o));
  const std::string dir = o.out.empty() ? default_out(o.scenario_path, "_results") : o.out;
  write_artifacts(dir, summary);
  if (!o.quiet) {
    print_summary(out, summary);
    out << "artifacts: " << dir << '\n';
  }
  return summary.diverged > 0 ? kExitDiverged : kExitOk;
}

int cmd_check_network(const CliOptions& o, std::ostream& out) {
  const TopologyFile file = read_topology_file(o.topology_path);
  NetworkTopology topology;
  try {
    topology = build_topology(file.edges, file.num_agents);
  } catch (const DisconnectedGraph& e) {
    out << "agents: " << file.num_agents << "\nedges: " << file.edges.size() << '\n';
    out << "connected: no (disconnected: " << e.what() << ")\n";
    out << "result: FAIL\n";
    return kExitCheckFailed;
  }
  Matrix c;
  if (!o.matrix_path.empty()) {
    c = read_combination_csv(o.matrix_path);
  } else {
    c = parse_weight_rule(o.weights) == WeightRule::Uniform ? uniform_weights<double>(topology).matrix()
                                                            : metropolis_weights<double>(topology).matrix();
  }
  const Assumption3Report r = assess_combination(topology, c);
  auto yes = [](bool b) { return b ? "yes" : "no"; };
  out << "agents: " << topology.num_agents() << "\nedges: " << topology.edges().size() << '\n';
  out << "diameter: " << diameter(topology) << '\n';
  out << "connected: yes\n";
  out << "square: " << yes(r.square) << '\n';
  if (r.square) {
    out << "row-sum max error: " << r.row_sum_max_error << (r.rows_stochastic ? "" : " (row-sum violation)") << '\n';
    out << "respects neighbourhoods: " << yes(r.respects_support) << '\n';
    out << "nonnegative: " << yes(r.nonnegative) << '\n';
    out << "primitive: " << yes(r.primitive) << '\n';
    out << "consensus radius: " << r.rho_lemma1 << '\n';
  }
  out << "result: " << (r.passed() ? "PASS" : "FAIL") << '\n';
  return r.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_analyze(const CliOptions& o, std::ostream& out) {
  const OfflineAnalysis a = analyze_directory(o.analyze_dir, o.burn_in);
  const fs::path dir = o.out.empty() ? fs::path(o.analyze_dir) : fs::path(o.out);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "analysis_report.txt");
    if (!f) throw IoFailure("cannot write analysis_report.txt in '" + dir.string() + "'");
    f << "realisations = " << a.realisations << '\n';
    write_report(f, a.report);
  }
  {
    std::ofstream f(dir / "analysis_discrepancy.csv");
    if (!f) throw IoFailure("cannot write analysis_discrepancy.csv in '" + dir.string() + "'");
    write_discrepancy_csv(f, a.delta_sq, a.agent_mse);
  }
  if (!o.quiet) {
    out << "trajectories: " << a.realisations << '\n';
    out << "final mean |Delta|^2: " << last_or_nan(a.delta_sq) << '\n';
    write_report(out, a.report);
  }
  return kExitOk;
}

int cmd_sweep(const CliOptions& o, std::ostream& out) {
  const Scenario s = load_with_overrides(o);
  const auto summaries = sweep(s, o.sweep_param, o.sweep_values, run_options(o));
  const fs::path dir = o.out.empty() ? fs::path(default_out(o.scenario_path, "_sweep")) : fs::path(o.out);
  fs::create_directories(dir);
  std::ofstream table(dir / "sweep.csv");
  if (!table) throw IoFailure("cannot write sweep.csv in '" + dir.string() + "'");
  table << "value,realisations,diverged,final_central_mse,final_agent_mse_mean,final_delta_sq\n";
  table.precision(12);
  bool diverged = false;
  for (std::size_t k = 0; k < summaries.size(); ++k) {
    const RunSummary& r = summaries[k];
    write_artifacts((dir / (o.sweep_param + "_" + o.sweep_values[k])).string(), r);
    table << o.sweep_values[k] << ',' << r.realisations << ',' << r.diverged << ',' << last_or_nan(r.central_mse)
          << ',' << last_or_nan(r.agent_mse_mean) << ',' << last_or_nan(r.delta_sq) << '\n';
    diverged = diverged || r.diverged > 0;
    if (!o.quiet)
      out << o.sweep_param << " = " << o.sweep_values[k] << ": final agent MSE " << last_or_nan(r.agent_mse_mean)
          << ", diverged " << r.diverged << '\n';
  }
  return diverged ? kExitDiverged : kExitOk;
}

}  // namespace

std::unique_ptr<CLI::App> make_app(CliOptions& o) {
  auto app = std::make_unique<CLI::App>("Distributed and centralised nonlinear filtering experiments", "netfilt");
  app->require_subcommand(1);
  app->fallthrough();
  app->add_option("--out", o.out, "Output directory for artifacts");
  app->add_option("--seed", o.seed, "Override the scenario master seed");
  app->add_option("--realisations", o.realisations, "Override the Monte Carlo realisation count")
      ->check(CLI::PositiveNumber);
  app->add_flag("--quiet", o.quiet, "Suppress the human-readable summary");
  app->add_option("--threads", o.threads, "Worker threads (0: hardware concurrency)");

  auto* run = app->add_subcommand("run", "Run a scenario and write CSV, report and trajectory artifacts");
  run->add_option("scenario", o.scenario_path, "Scenario file")->required();
  run->add_option("overrides", o.overrides, "Dotted key=value overrides applied after parsing");

  auto* check = app->add_subcommand("check-network", "Check a topology and its weights for the consensus conditions");
  check->add_option("topology", o.topology_path, "Topology file")->required();
  check->add_option("--weights", o.weights, "Weight rule")->check(CLI::IsMember({"uniform", "metropolis"}));
  check->add_option("--matrix", o.matrix_path, "Combination matrix CSV to check instead of a weight rule");

  auto* analyze = app->add_subcommand("analyze", "Recompute convergence diagnostics from dumped trajectories");
  analyze->add_option("directory", o.analyze_dir, "Directory holding trajectory_*.csv")->required();
  analyze->add_option("--burn-in", o.burn_in, "Steps excluded from the contraction and fit statistics");

  auto* sw = app->add_subcommand("sweep", "Run a scenario once per parameter value");
  sw->add_option("scenario", o.scenario_path, "Scenario file")->required();
  sw->add_option("--param", o.sweep_param, "Sweepable key")->required();
  sw->add_option("--values", o.sweep_values, "Comma-separated values")->required()->delimiter(',');
  return app;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CliOptions options;
  auto app = make_app(options);
  try {
    app->parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app->exit(e, out, err);
    return kExitInvalid;
  }
  try {
    if (app->got_subcommand("run")) return cmd_run(options, out);
    if (app->got_subcommand("check-network")) return cmd_check_network(options, out);
    if (app->got_subcommand("analyze")) return cmd_analyze(options, out);
    if (app->got_subcommand("sweep")) return cmd_sweep(options, out);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace netfilt
