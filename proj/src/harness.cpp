#include <netfilt/harness.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace netfilt {

namespace fs = std::filesystem;

namespace {

std::unique_ptr<StateSpaceModel> build_model(const Scenario& s, Index agents) {
  const auto& m = s.model;
  switch (m.kind) {
    case ModelKind::Tanh: {
      TanhRegressionModel::Params p;
      p.state_dim = m.state_dim;
      p.num_agents = agents;
      p.active_per_agent = m.active_per_agent;
      p.obs_var = m.obs_var;
      p.regressor_var = m.regressor_var;
      p.truth_scale = m.truth_scale;
      return std::make_unique<TanhRegressionModel>(p);
    }
    case ModelKind::ParticleBox: {
      ParticleInBoxModel::Params p;
      p.num_agents = agents;
      p.vertical_observer = m.vertical_observer;
      p.half_width = m.half_width;
      p.dt = m.dt;
      p.process_var = m.process_var;
      p.obs_var = m.obs_var;
      p.initial_speed_var = m.initial_speed_var;
      p.initial_position_var = m.initial_position_var;
      return std::make_unique<ParticleInBoxModel>(p);
    }
    case ModelKind::ScalarLinear:
      return std::make_unique<LinearModel>(
          LinearModel::scalar(m.transition, m.process_var, m.obs_var, agents, m.prior_mean, m.prior_var));
  }
  throw ScenarioInvalid("unknown model kind");
}

NetworkTopology build_network(const Scenario& s) {
  const auto& n = s.network;
  switch (n.source) {
    case TopologySource::File: {
      if (n.file.empty()) throw ScenarioInvalid("network.source = file needs network.file");
      fs::path path(n.file);
      if (path.is_relative() && !s.base_dir.empty()) path = fs::path(s.base_dir) / path;
      if (!fs::exists(path)) throw ScenarioInvalid("topology file '" + path.string() + "' does not exist");
      const TopologyFile file = read_topology_file(path.string());
      return build_topology(file.edges, file.num_agents);
    }
    case TopologySource::Sm7: return generate_topology_sm7(n.seed);
    case TopologySource::Complete: return complete_topology(n.agents);
    case TopologySource::Path: return path_topology(n.agents);
    case TopologySource::Star: return star_topology(n.agents);
  }
  throw ScenarioInvalid("unknown topology source");
}

/// Per-realisation statistics, filled step by step.
struct RealisationStats {
  std::vector<double> central_sq;  // steps 1..T
  Matrix agent_sq;                 // T x N
  std::vector<Matrix> component_sq;  // per state component, T x N
  std::vector<double> delta_sq;
  double initial_error_sq = 0;
  std::vector<std::vector<double>> gamma;  // per agent, finite ratios after burn-in
  bool diverged = false;
  std::optional<RunTrace> trace;
};

class StatsObserver final : public StepObserver {
 public:
  StatsObserver(RealisationStats& stats, Index horizon, Index agents, Index state_dim, Index burn_in, bool gamma,
                bool record)
      : stats_(stats), burn_in_(burn_in), gamma_(gamma) {
    stats_.central_sq.assign(static_cast<std::size_t>(horizon), std::numeric_limits<double>::quiet_NaN());
    stats_.delta_sq.assign(static_cast<std::size_t>(horizon), std::numeric_limits<double>::quiet_NaN());
    stats_.agent_sq = Matrix::Constant(horizon, agents, std::numeric_limits<double>::quiet_NaN());
    stats_.component_sq.assign(static_cast<std::size_t>(state_dim), stats_.agent_sq);
    if (gamma_) stats_.gamma.resize(static_cast<std::size_t>(agents));
    if (record) stats_.trace.emplace();
  }

  void on_step(const StepView& view) override {
    const Vector central_err = view.truth - view.central.estimate;
    const auto n_agents = view.agents.size();
    if (view.step == 0) {
      stats_.initial_error_sq = central_err.squaredNorm();
    } else {
      const auto row = view.step - 1;
      stats_.central_sq[static_cast<std::size_t>(row)] = central_err.squaredNorm();
      double delta = 0;
      for (std::size_t i = 0; i < n_agents; ++i) {
        const Vector err = view.truth - view.agents[i].estimate;
        stats_.agent_sq(row, static_cast<Index>(i)) = err.squaredNorm();
        for (Index k = 0; k < err.size(); ++k)
          stats_.component_sq[static_cast<std::size_t>(k)](row, static_cast<Index>(i)) = err(k) * err(k);
        delta += (err - central_err).squaredNorm();
        if (gamma_ && view.step > burn_in_) {
          const double denom = (previous_truth_ - previous_[i]).squaredNorm();
          if (denom > 1e-15)
            stats_.gamma[i].push_back((view.truth - view.agents[i].phi).squaredNorm() / denom);
        }
      }
      stats_.delta_sq[static_cast<std::size_t>(row)] = delta;
    }
    if (gamma_) {
      previous_truth_ = view.truth;
      previous_.resize(n_agents);
      for (std::size_t i = 0; i < n_agents; ++i) previous_[i] = view.agents[i].estimate;
    }
    if (stats_.trace) {
      RunTrace& t = *stats_.trace;
      t.truth.push_back(view.truth);
      t.central.push_back(view.central);
      t.agents.emplace_back(view.agents.begin(), view.agents.end());
      t.regressors.push_back(view.regressors);
    }
  }

 private:
  RealisationStats& stats_;
  Index burn_in_;
  bool gamma_;
  Vector previous_truth_;
  std::vector<Vector> previous_;
};

/// Truth crossed a wall between consecutive steps in [first, last + 1].
bool reflection_between(const ParticleInBoxModel& model, const RunTrace& trace, Index first, Index last) {
  const double near_wall = model.params().half_width - 1.0;
  for (Index m = first; m <= last && m + 1 < static_cast<Index>(trace.truth.size()); ++m) {
    const Vector& a = trace.truth[static_cast<std::size_t>(m)];
    const Vector& b = trace.truth[static_cast<std::size_t>(m + 1)];
    for (Index axis : {Index{0}, Index{2}}) {
      const bool flipped = a(axis + 1) * b(axis + 1) < 0;
      if (flipped && std::abs(b(axis)) > near_wall) return true;
    }
  }
  return false;
}

ConvergenceReport build_report(const PreparedScenario& prep, const Scenario& scenario, const RunTrace& trace,
                               const std::vector<std::vector<double>>& gamma_ratios,
                               const std::vector<double>& agent_mse_mean, double initial_error_sq) {
  ConvergenceReport r;
  const auto& c = prep.combination;
  const StateSpaceModel& model = *prep.model;
  r.lemma1_radius = prep.spectral.rho_lemma1;
  r.rho_c = spectral_radius(c.matrix());
  for (const auto& ratios : gamma_ratios) r.theorem2_gammas.push_back(quantile(ratios, kGammaQuantile));

  const Index steps = trace.steps();
  if (steps >= 1 && !trace.outcome.diverged) {
    const Index window = scenario.run.g_window > 0 ? scenario.run.g_window : prep.diameter + 1;
    const Index last = steps - 1;
    const Index first = std::max<Index>(0, last - window + 1);
    r.g_delta = g_delta_sequence(model, trace, c, first, last);
    for (Index m = first; m <= last; ++m) r.g_steps.push_back(m);
    const Index count = static_cast<Index>(r.g_delta.size());
    for (Index k = 0; k < count; ++k) r.theorem3_products.push_back(theorem3_window(r.g_delta, k).product);
    r.theorem3_k = smallest_contracting_window(r.g_delta, count - 1);

    const Index n = model.num_agents();
    std::vector<Matrix> gains(static_cast<std::size_t>(n)), hs(static_cast<std::size_t>(n));
    const auto& now = trace.agents[static_cast<std::size_t>(last)];
    const auto& next = trace.agents[static_cast<std::size_t>(last + 1)];
    const Regressors& z = trace.regressors[static_cast<std::size_t>(last + 1)];
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      gains[k] = next[k].gain;
      hs[k] = model.jacobian_h(i, model.project(now[k].estimate), z);
    }
    r.theorem1_radius = theorem1_radius<double>(c.matrix(), gains, hs,
                                                model.jacobian_f(trace.central[static_cast<std::size_t>(last)].estimate));
    r.residuals = residual_report(model, trace, c);
    if (const auto* box = dynamic_cast<const ParticleInBoxModel*>(&model))
      r.reflection_in_window = reflection_between(*box, trace, first, last);
  }
  try {
    r.fit = fit_exponential_bound(agent_mse_mean, scenario.run.burn_in, initial_error_sq);
  } catch (const FitFailed&) {
    r.fit.reset();
  }
  return r;
}

std::string format12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw FormatError("trailing characters in number '" + text + "'", line);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("not a number: '" + text + "'", line);
  }
}

long long parse_int(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw FormatError("trailing characters in integer '" + text + "'", line);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("not an integer: '" + text + "'", line);
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

PreparedScenario prepare_scenario(const Scenario& scenario) {
  if (scenario.run.realisations < 1) throw ScenarioInvalid("run.realisations must be at least 1");
  if (scenario.run.horizon < 1) throw ScenarioInvalid("run.horizon must be at least 1");
  if (scenario.run.burn_in < 0 || scenario.run.g_window < 0 || scenario.run.dump_trajectories < 0)
    throw ScenarioInvalid("run.burn_in, run.g_window and run.dump_trajectories must be nonnegative");
  PreparedScenario p;
  try {
    p.topology = build_network(scenario);
    p.model = build_model(scenario, p.topology.num_agents());
    p.combination = scenario.network.weights == WeightRule::Uniform ? uniform_weights<double>(p.topology)
                                                                     : metropolis_weights<double>(p.topology);
    p.spectral = spectral_report(p.combination);
    p.setup.rule = scenario.filter.gradient ? GainRule::gradient(scenario.filter.zeta) : GainRule::extended_kalman();
  } catch (const ScenarioInvalid&) {
    throw;
  } catch (const Error& e) {
    throw ScenarioInvalid(e.what());
  }
  if (!(p.spectral.rho_lemma1 < 1.0))
    throw ScenarioInvalid("combination matrix fails the consensus condition (radius " +
                          std::to_string(p.spectral.rho_lemma1) + ")");
  p.diameter = diameter(p.topology);
  p.setup.model = p.model.get();
  p.setup.combination = p.combination;
  if (scenario.filter.masks == MaskMode::Observable)
    for (Index i = 0; i < p.model->num_agents(); ++i) p.setup.masks.push_back(p.model->observable_mask(i));
  p.setup.matched_gains = scenario.filter.matched;
  p.setup.horizon = scenario.run.horizon;
  p.setup.divergence_threshold = scenario.run.divergence_threshold;
  return p;
}

RunSummary run_scenario(const Scenario& scenario, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const PreparedScenario prep = prepare_scenario(scenario);
  const Index horizon = scenario.run.horizon;
  const Index agents = prep.model->num_agents();
  const Index state_dim = prep.model->state_dim();
  const Index total = scenario.run.realisations;

  unsigned threads = options.threads != 0 ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<Index>(threads, total));
  const Index batch = static_cast<Index>(threads) * 4;

  RunSummary summary;
  summary.diameter = prep.diameter;
  if (const auto* tanh = dynamic_cast<const TanhRegressionModel*>(prep.model.get()))
    summary.regressor_supports = tanh->support_matrix();
  std::vector<double> central(static_cast<std::size_t>(horizon), 0.0), delta(static_cast<std::size_t>(horizon), 0.0);
  Matrix agent_sum = Matrix::Zero(horizon, agents);
  std::vector<Matrix> component_sum(static_cast<std::size_t>(state_dim), agent_sum);
  double initial_sum = 0;
  std::vector<std::vector<double>> gamma_ratios(static_cast<std::size_t>(agents));
  std::optional<RunTrace> report_trace;

  for (Index begin = 0; begin < total; begin += batch) {
    const Index end = std::min(total, begin + batch);
    std::vector<RealisationStats> results(static_cast<std::size_t>(end - begin));
    std::atomic<Index> next{begin};
    auto worker = [&] {
      for (Index r = next++; r < end; r = next++) {
        RealisationStats& stats = results[static_cast<std::size_t>(r - begin)];
        const bool record = (options.compute_report && r == 0) || r < scenario.run.dump_trajectories;
        StatsObserver observer(stats, horizon, agents, state_dim, scenario.run.burn_in,
                               r < options.gamma_realisations, record);
        Rng rng = derive_stream(scenario.seed, static_cast<std::uint64_t>(r));
        const SimulationOutcome outcome = simulate(prep.setup, rng, observer);
        stats.diverged = outcome.diverged;
        if (stats.trace) stats.trace->outcome = outcome;
      }
    };
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (Index r = begin; r < end; ++r) {
      RealisationStats& stats = results[static_cast<std::size_t>(r - begin)];
      if (stats.trace) {
        if (r < scenario.run.dump_trajectories) summary.trajectories.push_back(*stats.trace);
        if (r == 0 && options.compute_report) report_trace = std::move(stats.trace);
      }
      if (stats.diverged) {
        ++summary.diverged;
        continue;
      }
      ++summary.realisations;
      initial_sum += stats.initial_error_sq;
      for (Index n = 0; n < horizon; ++n) {
        central[static_cast<std::size_t>(n)] += stats.central_sq[static_cast<std::size_t>(n)];
        delta[static_cast<std::size_t>(n)] += stats.delta_sq[static_cast<std::size_t>(n)];
      }
      agent_sum += stats.agent_sq;
      for (std::size_t k = 0; k < component_sum.size(); ++k) component_sum[k] += stats.component_sq[k];
      for (std::size_t i = 0; i < stats.gamma.size(); ++i)
        gamma_ratios[i].insert(gamma_ratios[i].end(), stats.gamma[i].begin(), stats.gamma[i].end());
    }
  }

  const double count = static_cast<double>(summary.realisations);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  summary.agent_mse = summary.realisations > 0 ? Matrix(agent_sum / count) : Matrix::Constant(horizon, agents, nan);
  summary.initial_error_sq = summary.realisations > 0 ? initial_sum / count : nan;
  for (const Matrix& c : component_sum)
    summary.agent_component_mse.push_back(summary.realisations > 0 ? Matrix(c / count)
                                                                   : Matrix::Constant(horizon, agents, nan));
  for (Index n = 0; n < horizon; ++n) {
    const auto k = static_cast<std::size_t>(n);
    summary.central_mse.push_back(summary.realisations > 0 ? central[k] / count : nan);
    summary.delta_sq.push_back(summary.realisations > 0 ? delta[k] / count : nan);
    const auto row = summary.agent_mse.row(n);
    summary.agent_mse_min.push_back(row.minCoeff());
    summary.agent_mse_mean.push_back(row.mean());
    summary.agent_mse_max.push_back(row.maxCoeff());
  }

  if (options.compute_report && report_trace)
    summary.report = build_report(prep, scenario, *report_trace, gamma_ratios, summary.agent_mse_mean,
                                  summary.initial_error_sq);
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

std::vector<RunSummary> sweep(const Scenario& scenario, const std::string& key, const std::vector<std::string>& values,
                              const RunOptions& options) {
  const auto& keys = sweepable_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end())
    throw UnknownParameter("'" + key + "' is not a sweepable parameter");
  std::vector<Scenario> variants;
  for (std::size_t k = 0; k < values.size(); ++k) {
    Scenario s = scenario;
    apply_override(s, key, values[k]);
    s.seed = scenario.seed + k;
    variants.push_back(std::move(s));
  }
  std::vector<RunSummary> out;
  for (const auto& s : variants) out.push_back(run_scenario(s, options));
  return out;
}

// ---------------------------------------------------------------------------

void export_csv(std::ostream& out, const RunSummary& s) {
  out << "step,central_mse,agent_mse_min,agent_mse_mean,agent_mse_max,delta_sq\n";
  for (Index n = 0; n < s.horizon(); ++n) {
    const auto k = static_cast<std::size_t>(n);
    out << n + 1 << ',' << format12(s.central_mse[k]) << ',' << format12(s.agent_mse_min[k]) << ','
        << format12(s.agent_mse_mean[k]) << ',' << format12(s.agent_mse_max[k]) << ',' << format12(s.delta_sq[k])
        << '\n';
  }
}

void export_csv(const std::string& path, const RunSummary& summary) {
  auto out = open_out(path);
  export_csv(out, summary);
  if (!out) throw IoFailure("write to '" + path + "' failed");
}

void write_discrepancy_csv(std::ostream& out, const std::vector<double>& delta_sq, const Matrix& agent_mse) {
  out << "step,mean_sq_delta";
  for (Index i = 0; i < agent_mse.cols(); ++i) out << ",agent_" << i;
  out << '\n';
  for (std::size_t n = 0; n < delta_sq.size(); ++n) {
    out << n + 1 << ',' << format12(delta_sq[n]);
    for (Index i = 0; i < agent_mse.cols(); ++i) out << ',' << format12(agent_mse(static_cast<Index>(n), i));
    out << '\n';
  }
}

void write_trajectory_csv(std::ostream& out, const RunTrace& trace) {
  char buf[128];
  out << "step,agent,component,truth,estimate,phi\n";
  for (std::size_t n = 0; n < trace.truth.size(); ++n) {
    const Vector& x = trace.truth[n];
    const Vector& c = trace.central[n].estimate;
    for (Index k = 0; k < x.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,-1,%td,%.17g,%.17g,%.17g\n", n, k, x(k), c(k), c(k));
      out << buf;
    }
    for (std::size_t i = 0; i < trace.agents[n].size(); ++i) {
      const AgentState& a = trace.agents[n][i];
      for (Index k = 0; k < x.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%td,%.17g,%.17g,%.17g\n", n, i, k, x(k), a.estimate(k), a.phi(k));
        out << buf;
      }
    }
  }
}

void write_artifacts(const std::string& dir, const RunSummary& summary) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create '" + dir + "': " + ec.message());
  const fs::path base(dir);
  export_csv((base / "summary.csv").string(), summary);
  {
    auto out = open_out(base / "discrepancy.csv");
    write_discrepancy_csv(out, summary.delta_sq, summary.agent_mse);
  }
  {
    auto out = open_out(base / "report.txt");
    out << "realisations = " << summary.realisations << '\n';
    out << "diverged = " << summary.diverged << '\n';
    out << "diameter = " << summary.diameter << '\n';
    out << "initial_error_sq = " << format12(summary.initial_error_sq) << '\n';
    write_report(out, summary.report);
  }
  {
    auto out = open_out(base / "g_delta.csv");
    write_g_delta_csv(out, summary.report);
  }
  if (summary.regressor_supports) {
    auto out = open_out(base / "supports.csv");
    write_supports_csv(out, *summary.regressor_supports);
  }
  for (std::size_t r = 0; r < summary.trajectories.size(); ++r) {
    auto out = open_out(base / ("trajectory_" + std::to_string(r) + ".csv"));
    write_trajectory_csv(out, summary.trajectories[r]);
  }
}

// ---------------------------------------------------------------------------

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw FormatError("empty trajectory file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "step,agent,component,truth,estimate,phi") throw FormatError("unexpected trajectory header", 1);

  struct Row {
    long long step, agent, component;
    double truth, estimate, phi;
  };
  std::vector<Row> rows;
  long long max_step = -1, max_agent = -1, max_comp = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw FormatError("expected 6 columns, found " + std::to_string(cells.size()), line_no);
    Row r{parse_int(cells[0], line_no), parse_int(cells[1], line_no), parse_int(cells[2], line_no),
          parse_double(cells[3], line_no), parse_double(cells[4], line_no), parse_double(cells[5], line_no)};
    if (r.step < 0 || r.agent < -1 || r.component < 0) throw FormatError("negative index", line_no);
    max_step = std::max(max_step, r.step);
    max_agent = std::max(max_agent, r.agent);
    max_comp = std::max(max_comp, r.component);
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("trajectory file has no rows", line_no);
  if (max_agent < 0) throw FormatError("trajectory file has no agent rows", line_no);

  const auto steps = static_cast<std::size_t>(max_step + 1);
  const auto agents = static_cast<std::size_t>(max_agent + 1);
  const auto dim = static_cast<Index>(max_comp + 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Trajectory t;
  t.truth.assign(steps, Vector::Constant(dim, nan));
  t.central.assign(steps, Vector::Constant(dim, nan));
  t.estimates.assign(steps, std::vector<Vector>(agents, Vector::Constant(dim, nan)));
  t.phi = t.estimates;
  for (const Row& r : rows) {
    const auto n = static_cast<std::size_t>(r.step);
    t.truth[n](r.component) = r.truth;
    if (r.agent < 0) {
      t.central[n](r.component) = r.estimate;
    } else {
      t.estimates[n][static_cast<std::size_t>(r.agent)](r.component) = r.estimate;
      t.phi[n][static_cast<std::size_t>(r.agent)](r.component) = r.phi;
    }
  }
  for (std::size_t n = 0; n < steps; ++n) {
    bool complete = t.truth[n].allFinite() && t.central[n].allFinite();
    for (std::size_t i = 0; i < agents && complete; ++i) complete = t.estimates[n][i].allFinite();
    if (!complete) throw FormatError("step " + std::to_string(n) + " is incomplete", line_no);
  }
  return t;
}

OfflineAnalysis analyze_directory(const std::string& dir, Index burn_in) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir))
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("trajectory_") && name.ends_with(".csv")) files.push_back(entry.path());
    }
  if (files.empty()) throw FormatError("no trajectory_*.csv files in '" + dir + "'");
  std::sort(files.begin(), files.end());

  OfflineAnalysis result;
  std::vector<std::vector<double>> gamma_ratios;
  double initial_sum = 0;
  Index horizon = -1, agents = 0;
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open '" + path.string() + "'");
    Trajectory t;
    try {
      t = read_trajectory_csv(in);
    } catch (const FormatError& e) {
      throw FormatError(path.filename().string() + ": " + e.detail(), e.line());
    }
    const Index steps = static_cast<Index>(t.truth.size()) - 1;
    const Index n_agents = static_cast<Index>(t.estimates.front().size());
    if (horizon < 0) {
      horizon = steps;
      agents = n_agents;
      result.delta_sq.assign(static_cast<std::size_t>(horizon), 0.0);
      result.agent_mse = Matrix::Zero(horizon, agents);
      gamma_ratios.resize(static_cast<std::size_t>(agents));
    } else if (steps != horizon || n_agents != agents) {
      throw FormatError(path.filename().string() + ": trajectory shape differs from the first file");
    }
    initial_sum += (t.truth[0] - t.central[0]).squaredNorm();
    for (Index n = 1; n <= horizon; ++n) {
      const auto k = static_cast<std::size_t>(n);
      const Vector central_err = t.truth[k] - t.central[k];
      for (Index i = 0; i < agents; ++i) {
        const Vector err = t.truth[k] - t.estimates[k][static_cast<std::size_t>(i)];
        result.agent_mse(n - 1, i) += err.squaredNorm();
        result.delta_sq[k - 1] += (err - central_err).squaredNorm();
      }
    }
    for (Index i = 0; i < agents; ++i) {
      std::vector<Vector> est, phi;
      for (std::size_t n = 0; n < t.truth.size(); ++n) {
        est.push_back(t.estimates[n][static_cast<std::size_t>(i)]);
        phi.push_back(t.phi[n][static_cast<std::size_t>(i)]);
      }
      const GammaSeries g = estimate_gamma(t.truth, phi, est);
      for (std::size_t n = static_cast<std::size_t>(burn_in) + 1; n < g.ratio.size(); ++n)
        if (!g.degenerate[n]) gamma_ratios[static_cast<std::size_t>(i)].push_back(g.ratio[n]);
    }
    ++result.realisations;
  }
  const double count = static_cast<double>(result.realisations);
  for (auto& v : result.delta_sq) v /= count;
  result.agent_mse /= count;

  ConvergenceReport& r = result.report;
  for (const auto& ratios : gamma_ratios) r.theorem2_gammas.push_back(quantile(ratios, kGammaQuantile));

  const fs::path report_path = fs::path(dir) / "report.txt";
  if (std::ifstream in(report_path); in) {
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
      if (key == "lemma1_radius") r.lemma1_radius = std::stod(value);
      if (key == "theorem1_radius") r.theorem1_radius = std::stod(value);
      if (key == "rho_c") r.rho_c = std::stod(value);
    }
  }

  const fs::path g_path = fs::path(dir) / "g_delta.csv";
  if (std::ifstream in(g_path); in) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line_no == 1 || line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 2) throw FormatError("g_delta.csv: expected 2 columns", line_no);
      r.g_steps.push_back(static_cast<Index>(parse_int(cells[0], line_no)));
      r.g_delta.push_back(parse_double(cells[1], line_no));
    }
    const Index count_g = static_cast<Index>(r.g_delta.size());
    for (Index k = 0; k < count_g; ++k) r.theorem3_products.push_back(theorem3_window(r.g_delta, k).product);
    if (count_g > 0) r.theorem3_k = smallest_contracting_window(r.g_delta, count_g - 1);
  }

  std::vector<double> mean_mse;
  for (Index n = 0; n < horizon; ++n) mean_mse.push_back(result.agent_mse.row(n).mean());
  try {
    r.fit = fit_exponential_bound(mean_mse, burn_in, initial_sum / count);
  } catch (const FitFailed&) {
    r.fit.reset();
  }
  return result;
}

}  // namespace netfilt
