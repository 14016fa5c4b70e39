#pragma once

#include <netfilt/analysis.hpp>
#include <netfilt/filters.hpp>
#include <netfilt/models.hpp>
#include <netfilt/network.hpp>
#include <netfilt/scenario.hpp>

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace netfilt {

/// Model, network and filter configuration built from a Scenario.
struct PreparedScenario {
  std::unique_ptr<StateSpaceModel> model;
  NetworkTopology topology;
  CombinationMatrix<double> combination;
  SpectralReport spectral;
  Index diameter = 0;
  SimulationSetup setup;
};

/// Builds the experiment; throws ScenarioInvalid for inconsistent settings, missing
/// files, or a combination matrix whose consensus-gap radius is not below 1.
PreparedScenario prepare_scenario(const Scenario& scenario);

struct RunOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  /// Realisations whose contraction ratios feed the per-agent gamma quantile.
  Index gamma_realisations = 32;
  bool compute_report = true;
};

struct RunSummary {
  // Per-step Monte Carlo means, steps 1..horizon.
  std::vector<double> central_mse;
  std::vector<double> agent_mse_min;
  std::vector<double> agent_mse_mean;
  std::vector<double> agent_mse_max;
  std::vector<double> delta_sq;
  Matrix agent_mse;  // horizon x agents
  std::vector<Matrix> agent_component_mse;  // one horizon x agents matrix per state component

  double initial_error_sq = 0;  // mean |x_0 - x_hat_0|^2
  Index realisations = 0;       // realisations that entered the means
  Index diverged = 0;           // realisations truncated by the divergence guard
  Index diameter = 0;
  std::optional<Matrix> regressor_supports;  // agents x d, tanh model only
  ConvergenceReport report;
  std::vector<RunTrace> trajectories;  // the first run.dump_trajectories realisations
  double wall_seconds = 0;

  Index horizon() const noexcept { return static_cast<Index>(central_mse.size()); }
};

RunSummary run_scenario(const Scenario& scenario, const RunOptions& options = {});

/// One summary per value of `key` (one of sweepable_keys()); value k runs with seed + k.
std::vector<RunSummary> sweep(const Scenario& scenario, const std::string& key, const std::vector<std::string>& values,
                              const RunOptions& options = {});

/// `step,central_mse,agent_mse_min,agent_mse_mean,agent_mse_max,delta_sq`, 12 significant digits.
void export_csv(std::ostream& out, const RunSummary& summary);
void export_csv(const std::string& path, const RunSummary& summary);

/// `step,mean_sq_delta,agent_0,...`.
void write_discrepancy_csv(std::ostream& out, const std::vector<double>& delta_sq, const Matrix& agent_mse);

/// Trajectory dump `step,agent,component,truth,estimate,phi`; agent -1 is the centralised filter.
void write_trajectory_csv(std::ostream& out, const RunTrace& trace);

/// Writes summary.csv, discrepancy.csv, report.txt, g_delta.csv and any trajectory dumps into `dir`.
void write_artifacts(const std::string& dir, const RunSummary& summary);

// ---------------------------------------------------------------------------
// Offline analysis of dumped trajectories

struct Trajectory {
  std::vector<Vector> truth;
  std::vector<Vector> central;
  std::vector<std::vector<Vector>> estimates;  // [step][agent]
  std::vector<std::vector<Vector>> phi;
};

Trajectory read_trajectory_csv(std::istream& in);

struct OfflineAnalysis {
  std::vector<double> delta_sq;  // Monte Carlo mean per step (from step 1)
  Matrix agent_mse;
  ConvergenceReport report;
  Index realisations = 0;
};

/// Recomputes discrepancy, contraction ratios, window products (from g_delta.csv when
/// present) and the exponential fit from `trajectory_*.csv` files in `dir`.
/// Throws FormatError when the directory holds no trajectories.
OfflineAnalysis analyze_directory(const std::string& dir, Index burn_in = 0);

}  // namespace netfilt
