#pragma once

#include <netfilt/models.hpp>
#include <netfilt/network.hpp>

#include <span>
#include <vector>

namespace netfilt {

enum class GainKind { ExtendedKalman, Gradient };

/// How a filter turns an innovation into a correction.
///
/// Gradient: one descent step of size zeta on the squared innovation norm, i.e. the
/// correction is zeta * J^T * 2 (y - y_hat) with J the observation Jacobian at the
/// prediction. The centralised filter descends the network-average cost, so its
/// gain is (2 zeta / N) H^T; a single agent's gain is 2 zeta H_i^T.
class GainRule {
 public:
  static GainRule extended_kalman() { return GainRule(GainKind::ExtendedKalman, 0.0); }
  /// Throws InvalidArgument unless zeta lies in (0, 1).
  static GainRule gradient(double zeta);

  GainKind kind() const noexcept { return kind_; }
  double zeta() const noexcept { return zeta_; }

  friend bool operator==(const GainRule&, const GainRule&) = default;

 private:
  GainRule(GainKind kind, double zeta) : kind_(kind), zeta_(zeta) {}

  GainKind kind_;
  double zeta_;
};

struct CentralizedState {
  Vector estimate;
  Matrix covariance;  // EKF bookkeeping; carried unchanged by the gradient rule
  Matrix gain;        // gain used by the most recent update (state_dim x total_obs_dim)
};

CentralizedState initial_centralized_state(const StateSpaceModel& model);

/// x_hat_n = f(x_hat_{n-1}) + G_n (y_n - h(f(x_hat_{n-1}))) with G_n from `rule`.
CentralizedState centralized_step(const CentralizedState& state, const StateSpaceModel& model, const Vector& y,
                                  const Regressors& z, const GainRule& rule);

/// Same update with a caller-supplied gain; the covariance is carried through untouched.
CentralizedState centralized_step_with_gain(const CentralizedState& state, const StateSpaceModel& model,
                                            const Vector& y, const Regressors& z, const Matrix& gain);

/// Columns of a stacked gain that multiply agent `agent`'s observation.
Matrix gain_partition(const StateSpaceModel& model, const Matrix& stacked_gain, Index agent);

struct FederatedResult {
  CentralizedState fused;
  std::vector<Vector> local_updates;  // f(x_hat) + N G_i (y_i - h_i(f(x_hat))) per agent
};

/// Local filtering at every agent followed by arithmetic-mean fusion at a centre.
/// All replicas must share the prior (InconsistentPrior otherwise). Agents flagged
/// false in `participation` only project, i.e. contribute with a zero gain.
FederatedResult federated_step(std::span<const CentralizedState> replicas, const StateSpaceModel& model,
                               std::span<const Vector> y, const Regressors& z, const GainRule& rule,
                               std::span<const bool> participation = {});

struct AgentState {
  Vector estimate;    // x_hat_{i,n}
  Vector phi;         // intermediate estimate before fusion
  Matrix gain;        // effective (masked) gain of the last local step
  Matrix covariance;  // local EKF covariance
  Vector mask;        // diagonal of Upsilon_i, entries 0 or 1

  Vector mask_complement() const { return Vector::Ones(mask.size()) - mask; }
};

/// Agent seeded from the model prior. An empty `mask` means all ones.
AgentState initial_agent_state(const StateSpaceModel& model, Vector mask = {});

/// phi = f(x_hat) + G (y_i - h_i(f(x_hat))) with the agent's own gain; ignores the mask.
AgentState distributed_local_step(const AgentState& agent, const StateSpaceModel& model, Index index,
                                  const Vector& y, const Regressors& z, const GainRule& rule);

/// Observable components take the full local step, the rest are projection only:
/// phi = Upsilon (full step) + (I - Upsilon) f(x_hat).
AgentState masked_local_step(const AgentState& agent, const StateSpaceModel& model, Index index, const Vector& y,
                             const Regressors& z, const GainRule& rule);

/// Masked local step with an externally supplied gain (e.g. N G_i for matched gains).
AgentState masked_local_step_with_gain(const AgentState& agent, const StateSpaceModel& model, Index index,
                                       const Vector& y, const Regressors& z, const Matrix& gain);

/// x_hat_i = sum_j c_ij phi_j.
template <typename Scalar>
std::vector<VectorX<Scalar>> fuse(std::span<const VectorX<Scalar>> phi, const MatrixX<Scalar>& c) {
  const Index n = c.rows();
  if (static_cast<Index>(phi.size()) != n) throw DimensionMismatch("fuse: one intermediate estimate per agent");
  std::vector<VectorX<Scalar>> out(phi.size());
  for (Index i = 0; i < n; ++i) {
    VectorX<Scalar> acc = VectorX<Scalar>::Zero(phi.front().size());
    for (Index j = 0; j < n; ++j)
      if (c(i, j) != Scalar(0)) acc.noalias() += c(i, j) * phi[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = std::move(acc);
  }
  return out;
}

/// Overwrites every agent's estimate with the convex combination of its neighbours' phi.
void fuse(std::span<AgentState> agents, const CombinationMatrix<double>& c);

// ---------------------------------------------------------------------------
// Simulation

struct SimulationSetup {
  const StateSpaceModel* model = nullptr;
  CombinationMatrix<double> combination;
  GainRule rule = GainRule::extended_kalman();
  std::vector<Vector> masks;  // empty: all-ones masks
  /// Agents use N G_{i,n} taken from the centralised gain instead of their own rule.
  bool matched_gains = false;
  Index horizon = 1;
  /// A realisation stops once any squared error exceeds this or turns non-finite.
  double divergence_threshold = 1e12;
};

/// Everything known at the end of step n. At n = 0 the filters hold the prior and
/// phi equals the estimate.
struct StepView {
  Index step;
  const Vector& truth;
  const CentralizedState& central;
  std::span<const AgentState> agents;
  const Regressors& regressors;
};

class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_step(const StepView& view) = 0;
};

struct SimulationOutcome {
  bool diverged = false;
  Index steps_completed = 0;
};

/// Simulates the truth, the stacked-observation centralised filter and the
/// distributed network side by side on one noise realisation.
SimulationOutcome simulate(const SimulationSetup& setup, Rng& rng, StepObserver& observer);

/// Full record of one realisation; every vector is indexed by step 0..T.
struct RunTrace {
  std::vector<Vector> truth;
  std::vector<CentralizedState> central;
  std::vector<std::vector<AgentState>> agents;
  std::vector<Regressors> regressors;  // regressors[n] are those used at step n (empty at 0)
  SimulationOutcome outcome;

  Index steps() const noexcept { return static_cast<Index>(truth.size()) - 1; }
};

RunTrace run_distributed(const SimulationSetup& setup, Rng& rng);

}  // namespace netfilt
