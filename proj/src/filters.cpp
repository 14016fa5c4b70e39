#include <netfilt/filters.hpp>

#include <cmath>
#include <string>

namespace netfilt {

namespace {

Matrix symmetrized(const Matrix& p) { return 0.5 * (p + p.transpose()); }

// Kalman gain P H^T S^-1 for a predicted covariance P.
Matrix kalman_gain(const Matrix& predicted, const Matrix& h, const Matrix& r) {
  const Matrix s = h * predicted * h.transpose() + r;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success || !s.allFinite())
    throw SingularInnovationCovariance("innovation covariance is not positive definite");
  const Matrix ph = predicted * h.transpose();
  Matrix gain = llt.solve(ph.transpose()).transpose();
  if (!gain.allFinite()) throw SingularInnovationCovariance("innovation covariance is numerically singular");
  return gain;
}

// Joseph-form posterior, valid for any gain (including masked ones).
Matrix joseph(const Matrix& predicted, const Matrix& gain, const Matrix& h, const Matrix& r) {
  const Index d = predicted.rows();
  const Matrix a = Matrix::Identity(d, d) - gain * h;
  return symmetrized(a * predicted * a.transpose() + gain * r * gain.transpose());
}

Matrix predicted_covariance(const StateSpaceModel& model, const Vector& prior_estimate, const Matrix& covariance) {
  const Matrix a = model.jacobian_f(prior_estimate);
  return symmetrized(a * covariance * a.transpose() + model.noise().sigma_v());
}

void check_observation(const StateSpaceModel& model, Index agent, const Vector& y) {
  if (y.size() != model.obs_dim(agent))
    throw DimensionMismatch("agent " + std::to_string(agent) + " observation has length " + std::to_string(y.size()) +
                            ", expected " + std::to_string(model.obs_dim(agent)));
}

}  // namespace

GainRule GainRule::gradient(double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0)) throw InvalidArgument("gradient step size must lie in (0, 1)");
  return GainRule(GainKind::Gradient, zeta);
}

// ---------------------------------------------------------------------------
// Centralised

CentralizedState initial_centralized_state(const StateSpaceModel& model) {
  return {model.prior().mean, model.prior().covariance, Matrix::Zero(model.state_dim(), model.total_obs_dim())};
}

CentralizedState centralized_step_with_gain(const CentralizedState& state, const StateSpaceModel& model,
                                            const Vector& y, const Regressors& z, const Matrix& gain) {
  if (y.size() != model.total_obs_dim()) throw DimensionMismatch("stacked observation length");
  if (gain.rows() != model.state_dim() || gain.cols() != model.total_obs_dim())
    throw DimensionMismatch("centralised gain shape");
  const Vector prediction = model.project(state.estimate);
  CentralizedState next;
  next.estimate = prediction + gain * (y - model.observe_stacked(prediction, z));
  next.covariance = state.covariance;
  next.gain = gain;
  return next;
}

CentralizedState centralized_step(const CentralizedState& state, const StateSpaceModel& model, const Vector& y,
                                  const Regressors& z, const GainRule& rule) {
  if (y.size() != model.total_obs_dim()) throw DimensionMismatch("stacked observation length");
  const Vector prediction = model.project(state.estimate);
  const Matrix h = model.jacobian_h_stacked(prediction, z);
  if (rule.kind() == GainKind::Gradient) {
    const Matrix gain = (2.0 * rule.zeta() / static_cast<double>(model.num_agents())) * h.transpose();
    return centralized_step_with_gain(state, model, y, z, gain);
  }
  const Matrix predicted = predicted_covariance(model, state.estimate, state.covariance);
  const Matrix r = model.noise().stacked_sigma_w();
  CentralizedState next;
  next.gain = kalman_gain(predicted, h, r);
  next.estimate = prediction + next.gain * (y - model.observe_stacked(prediction, z));
  next.covariance = joseph(predicted, next.gain, h, r);
  return next;
}

Matrix gain_partition(const StateSpaceModel& model, const Matrix& stacked_gain, Index agent) {
  if (agent < 0 || agent >= model.num_agents()) throw IndexOutOfRange("agent out of range");
  Index offset = 0;
  for (Index i = 0; i < agent; ++i) offset += model.obs_dim(i);
  return stacked_gain.middleCols(offset, model.obs_dim(agent));
}

// ---------------------------------------------------------------------------
// Federated

FederatedResult federated_step(std::span<const CentralizedState> replicas, const StateSpaceModel& model,
                               std::span<const Vector> y, const Regressors& z, const GainRule& rule,
                               std::span<const bool> participation) {
  const Index n = model.num_agents();
  if (static_cast<Index>(replicas.size()) != n || static_cast<Index>(y.size()) != n)
    throw DimensionMismatch("federated step needs one replica and one observation per agent");
  if (!participation.empty() && static_cast<Index>(participation.size()) != n)
    throw DimensionMismatch("participation mask length");
  const CentralizedState& prior = replicas.front();
  for (const auto& r : replicas) {
    if ((r.estimate - prior.estimate).cwiseAbs().maxCoeff() > 1e-12 ||
        (r.covariance - prior.covariance).cwiseAbs().maxCoeff() > 1e-12)
      throw InconsistentPrior("federated replicas disagree on the shared prior");
  }

  Vector stacked(model.total_obs_dim());
  Index offset = 0;
  for (Index i = 0; i < n; ++i) {
    check_observation(model, i, y[static_cast<std::size_t>(i)]);
    stacked.segment(offset, model.obs_dim(i)) = y[static_cast<std::size_t>(i)];
    offset += model.obs_dim(i);
  }

  // The fusion centre's gain is the centralised one; only its partition is used locally.
  CentralizedState reference = centralized_step(prior, model, stacked, z, rule);
  Matrix gain = reference.gain;
  offset = 0;
  for (Index i = 0; i < n; ++i) {
    if (!participation.empty() && !participation[static_cast<std::size_t>(i)])
      gain.middleCols(offset, model.obs_dim(i)).setZero();
    offset += model.obs_dim(i);
  }

  const Vector prediction = model.project(prior.estimate);
  FederatedResult result;
  result.local_updates.reserve(static_cast<std::size_t>(n));
  Vector sum = Vector::Zero(model.state_dim());
  const double scale = static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const Matrix gi = gain_partition(model, gain, i);
    Vector local = prediction + scale * gi * (y[static_cast<std::size_t>(i)] - model.observe(i, prediction, z));
    sum += local;
    result.local_updates.push_back(std::move(local));
  }
  result.fused.estimate = sum / scale;
  result.fused.gain = gain;
  if (rule.kind() == GainKind::ExtendedKalman) {
    const Matrix predicted = predicted_covariance(model, prior.estimate, prior.covariance);
    result.fused.covariance =
        joseph(predicted, gain, model.jacobian_h_stacked(prediction, z), model.noise().stacked_sigma_w());
  } else {
    result.fused.covariance = prior.covariance;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Distributed

AgentState initial_agent_state(const StateSpaceModel& model, Vector mask) {
  AgentState a;
  a.estimate = model.prior().mean;
  a.phi = a.estimate;
  a.covariance = model.prior().covariance;
  a.mask = mask.size() == 0 ? Vector::Ones(model.state_dim()) : std::move(mask);
  if (a.mask.size() != model.state_dim()) throw DimensionMismatch("mask length");
  a.gain = Matrix::Zero(model.state_dim(), 0);
  return a;
}

namespace {

AgentState local_step(const AgentState& agent, const StateSpaceModel& model, Index index, const Vector& y,
                      const Regressors& z, const GainRule& rule, bool masked) {
  check_observation(model, index, y);
  if (agent.estimate.size() != model.state_dim()) throw DimensionMismatch("agent estimate length");
  const Vector prediction = model.project(agent.estimate);
  const Vector innovation = y - model.observe(index, prediction, z);
  const Matrix h = model.jacobian_h(index, prediction, z);

  AgentState next = agent;
  if (rule.kind() == GainKind::Gradient) {
    Matrix gain = 2.0 * rule.zeta() * h.transpose();
    next.gain = masked ? Matrix(agent.mask.asDiagonal() * gain) : gain;
  } else {
    const Matrix predicted = predicted_covariance(model, agent.estimate, agent.covariance);
    const Matrix& r = model.noise().sigma_w(index);
    Matrix gain = kalman_gain(predicted, h, r);
    next.gain = masked ? Matrix(agent.mask.asDiagonal() * gain) : gain;
    next.covariance = joseph(predicted, next.gain, h, r);
  }
  next.phi = prediction + next.gain * innovation;
  return next;
}

}  // namespace

AgentState distributed_local_step(const AgentState& agent, const StateSpaceModel& model, Index index,
                                  const Vector& y, const Regressors& z, const GainRule& rule) {
  return local_step(agent, model, index, y, z, rule, false);
}

AgentState masked_local_step(const AgentState& agent, const StateSpaceModel& model, Index index, const Vector& y,
                             const Regressors& z, const GainRule& rule) {
  return local_step(agent, model, index, y, z, rule, true);
}

AgentState masked_local_step_with_gain(const AgentState& agent, const StateSpaceModel& model, Index index,
                                       const Vector& y, const Regressors& z, const Matrix& gain) {
  check_observation(model, index, y);
  if (gain.rows() != model.state_dim() || gain.cols() != model.obs_dim(index))
    throw DimensionMismatch("local gain shape");
  const Vector prediction = model.project(agent.estimate);
  AgentState next = agent;
  next.gain = agent.mask.asDiagonal() * gain;
  next.phi = prediction + next.gain * (y - model.observe(index, prediction, z));
  return next;
}

void fuse(std::span<AgentState> agents, const CombinationMatrix<double>& c) {
  std::vector<Vector> phi;
  phi.reserve(agents.size());
  for (const auto& a : agents) phi.push_back(a.phi);
  auto fused = fuse<double>(std::span<const Vector>(phi), c.matrix());
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i].estimate = std::move(fused[i]);
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

bool diverged(const Vector& truth, const Vector& estimate, double threshold) {
  const double e = (truth - estimate).squaredNorm();
  return !std::isfinite(e) || e > threshold;
}

}  // namespace

SimulationOutcome simulate(const SimulationSetup& setup, Rng& rng, StepObserver& observer) {
  if (setup.model == nullptr) throw InvalidArgument("simulation needs a model");
  const StateSpaceModel& model = *setup.model;
  const Index n = model.num_agents();
  if (setup.combination.size() != n) throw DimensionMismatch("combination matrix size differs from agent count");
  if (setup.horizon < 1) throw InvalidArgument("horizon must be at least 1");
  if (!setup.masks.empty() && static_cast<Index>(setup.masks.size()) != n)
    throw DimensionMismatch("one mask per agent");

  Vector truth = model.sample_initial_state(rng);
  CentralizedState central = initial_centralized_state(model);
  std::vector<AgentState> agents;
  agents.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    agents.push_back(initial_agent_state(model, setup.masks.empty() ? Vector() : setup.masks[static_cast<std::size_t>(i)]));

  SimulationOutcome outcome;
  const Regressors none;
  observer.on_step(StepView{0, truth, central, agents, none});

  std::vector<Vector> y(static_cast<std::size_t>(n));
  Vector stacked(model.total_obs_dim());
  for (Index step = 1; step <= setup.horizon; ++step) {
    const Regressors z = model.sample_regressors(rng);
    const NoiseDraw noise = model.sample_noise(rng);
    truth = model.evolve(truth, noise.v);

    Index offset = 0;
    for (Index i = 0; i < n; ++i) {
      auto& yi = y[static_cast<std::size_t>(i)];
      yi = model.observe(i, truth, noise.w[static_cast<std::size_t>(i)], z);
      stacked.segment(offset, yi.size()) = yi;
      offset += yi.size();
    }

    central = centralized_step(central, model, stacked, z, setup.rule);
    for (Index i = 0; i < n; ++i) {
      auto& agent = agents[static_cast<std::size_t>(i)];
      const auto& yi = y[static_cast<std::size_t>(i)];
      if (setup.matched_gains)
        agent = masked_local_step_with_gain(agent, model, i, yi, z,
                                            static_cast<double>(n) * gain_partition(model, central.gain, i));
      else
        agent = masked_local_step(agent, model, i, yi, z, setup.rule);
    }
    fuse(std::span<AgentState>(agents), setup.combination);

    outcome.steps_completed = step;
    observer.on_step(StepView{step, truth, central, agents, z});

    bool bad = diverged(truth, central.estimate, setup.divergence_threshold);
    for (const auto& a : agents) bad = bad || diverged(truth, a.estimate, setup.divergence_threshold);
    if (bad) {
      outcome.diverged = true;
      break;
    }
  }
  return outcome;
}

namespace {

class TraceRecorder final : public StepObserver {
 public:
  explicit TraceRecorder(RunTrace& trace) : trace_(trace) {}
  void on_step(const StepView& v) override {
    trace_.truth.push_back(v.truth);
    trace_.central.push_back(v.central);
    trace_.agents.emplace_back(v.agents.begin(), v.agents.end());
    trace_.regressors.push_back(v.regressors);
  }

 private:
  RunTrace& trace_;
};

}  // namespace

RunTrace run_distributed(const SimulationSetup& setup, Rng& rng) {
  RunTrace trace;
  TraceRecorder recorder(trace);
  trace.outcome = simulate(setup, rng, recorder);
  return trace;
}

}  // namespace netfilt
