#pragma once

#include <netfilt/errors.hpp>
#include <netfilt/random.hpp>
#include <netfilt/types.hpp>

#include <iosfwd>
#include <memory>
#include <vector>

namespace netfilt {

/// Zero-mean white Gaussian noise: evolution covariance plus one observation
/// covariance per agent, mutually uncorrelated.
class NoiseModel {
 public:
  NoiseModel() = default;
  NoiseModel(Matrix sigma_v, std::vector<Matrix> sigma_w);

  const Matrix& sigma_v() const noexcept { return sigma_v_; }
  const Matrix& sigma_w(Index agent) const { return sigma_w_.at(static_cast<std::size_t>(agent)); }
  Index num_agents() const noexcept { return static_cast<Index>(sigma_w_.size()); }

  /// Block-diagonal covariance of the stacked observation noise.
  Matrix stacked_sigma_w() const;

  /// Draws x ~ N(0, cov) through the cached symmetric square root.
  Vector draw_v(Rng& rng) const;
  Vector draw_w(Index agent, Rng& rng) const;

 private:
  Matrix sigma_v_;
  std::vector<Matrix> sigma_w_;
  Matrix root_v_;
  std::vector<Matrix> root_w_;
};

struct NoiseDraw {
  Vector v;
  std::vector<Vector> w;
};

/// Per-agent observation inputs for models whose h_i changes over time (the
/// regressor Z_{i,n} of the tanh model). Empty for time-invariant observations.
using Regressors = std::vector<Matrix>;

/// Gaussian prior used to draw the initial truth and seed every filter.
struct Prior {
  Vector mean;
  Matrix covariance;
};

/// x' = f(x, v), y_i = h_i(x) + w_i. Noise on the state enters additively before any
/// nonlinearity of f, so the filters use Sigma_v directly as the process covariance.
class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual Index state_dim() const = 0;
  virtual Index num_agents() const = 0;
  virtual Index obs_dim(Index agent) const = 0;

  const NoiseModel& noise() const noexcept { return noise_; }
  const Prior& prior() const noexcept { return prior_; }

  Vector evolve(const Vector& x, const Vector& v) const;
  /// Deterministic projection f(x, 0).
  Vector project(const Vector& x) const;

  /// Noise-free h_i(x).
  Vector observe(Index agent, const Vector& x, const Regressors& z = {}) const;
  /// h_i(x) + w.
  Vector observe(Index agent, const Vector& x, const Vector& w, const Regressors& z = {}) const;

  Matrix jacobian_f(const Vector& x) const;
  Matrix jacobian_h(Index agent, const Vector& x, const Regressors& z = {}) const;

  Index total_obs_dim() const;
  Vector observe_stacked(const Vector& x, const Regressors& z = {}) const;
  Matrix jacobian_h_stacked(const Vector& x, const Regressors& z = {}) const;

  NoiseDraw sample_noise(Rng& rng) const;
  virtual Regressors sample_regressors(Rng&) const { return {}; }
  virtual Vector sample_initial_state(Rng& rng) const;

  /// Diagonal 0/1 selector of the state components agent i can correct from its
  /// own observations. Defaults to all ones.
  virtual Vector observable_mask(Index agent) const;

 protected:
  StateSpaceModel(NoiseModel noise, Prior prior);

  virtual Vector evolve_impl(const Vector& x, const Vector& v) const = 0;
  virtual Vector observe_impl(Index agent, const Vector& x, const Regressors& z) const = 0;
  virtual Matrix jacobian_f_impl(const Vector& x) const = 0;
  virtual Matrix jacobian_h_impl(Index agent, const Vector& x, const Regressors& z) const = 0;

  void check_state(const Vector& x, const char* what) const;
  void check_agent(Index agent) const;

 private:
  NoiseModel noise_;
  Prior prior_;
};

/// x' = A x + v, y_i = H_i x + w_i.
class LinearModel final : public StateSpaceModel {
 public:
  LinearModel(Matrix transition, std::vector<Matrix> observation, NoiseModel noise, Prior prior);

  /// Every agent observes the scalar state directly: x' = a x + v, y_i = x + w_i.
  static LinearModel scalar(double a, double process_var, double obs_var, Index num_agents,
                            double prior_mean = 0.0, double prior_var = 1.0);

  Index state_dim() const override { return transition_.rows(); }
  Index num_agents() const override { return static_cast<Index>(observation_.size()); }
  Index obs_dim(Index agent) const override { return observation_.at(static_cast<std::size_t>(agent)).rows(); }

  const Matrix& transition() const noexcept { return transition_; }

 protected:
  Vector evolve_impl(const Vector& x, const Vector& v) const override { return transition_ * x + v; }
  Vector observe_impl(Index agent, const Vector& x, const Regressors&) const override {
    return observation_[static_cast<std::size_t>(agent)] * x;
  }
  Matrix jacobian_f_impl(const Vector&) const override { return transition_; }
  Matrix jacobian_h_impl(Index agent, const Vector&, const Regressors&) const override {
    return observation_[static_cast<std::size_t>(agent)];
  }

 private:
  Matrix transition_;
  std::vector<Matrix> observation_;
};

/// Static parameter vector observed through y_i = tanh(Z_i x) + w_i with Gaussian
/// regressor rows Z_i masked to each agent's coordinate support.
class TanhRegressionModel final : public StateSpaceModel {
 public:
  struct Params {
    Index state_dim = 5;
    Index num_agents = 1;
    Index active_per_agent = 2;
    double obs_var = 0.01;
    double regressor_var = 1.0;
    double truth_scale = 1.0;
  };

  explicit TanhRegressionModel(const Params& params);
  /// Explicit support masks, one 0/1 vector of length state_dim per agent. Throws
  /// InvalidArgument unless together they cover every coordinate.
  TanhRegressionModel(const Params& params, std::vector<Vector> supports);

  /// Round-robin supports: agent i covers coordinates i*a, ..., i*a + a - 1 (mod d), a = active.
  static std::vector<Vector> round_robin_supports(Index state_dim, Index num_agents, Index active);

  Index state_dim() const override { return params_.state_dim; }
  Index num_agents() const override { return params_.num_agents; }
  Index obs_dim(Index) const override { return 1; }

  const Params& params() const noexcept { return params_; }
  const Vector& support(Index agent) const { return supports_.at(static_cast<std::size_t>(agent)); }
  Matrix support_matrix() const;  // agents x d

  Regressors sample_regressors(Rng& rng) const override;
  Vector observable_mask(Index agent) const override { return support(agent); }

 protected:
  Vector evolve_impl(const Vector& x, const Vector&) const override { return x; }
  Vector observe_impl(Index agent, const Vector& x, const Regressors& z) const override;
  Matrix jacobian_f_impl(const Vector& x) const override { return Matrix::Identity(x.size(), x.size()); }
  Matrix jacobian_h_impl(Index agent, const Vector& x, const Regressors& z) const override;

 private:
  const Matrix& regressor(Index agent, const Regressors& z) const;

  Params params_;
  std::vector<Vector> supports_;
};

/// Constant-velocity target in the square [-L, L]^2 with elastic walls.
/// State layout: [p_x, v_x, p_y, v_y].
class ParticleInBoxModel final : public StateSpaceModel {
 public:
  enum class Axis { X, Y };

  struct Params {
    Index num_agents = 1;
    Index vertical_observer = 0;  // the single agent measuring p_y
    double half_width = 10.0;
    double dt = 0.04;              // 25 Hz
    double process_var = 0.04;
    double obs_var = 0.16;
    double initial_speed_var = 1.0;
    double initial_position_var = 4.0;
  };

  explicit ParticleInBoxModel(const Params& params);

  Index state_dim() const override { return 4; }
  Index num_agents() const override { return params_.num_agents; }
  Index obs_dim(Index) const override { return 1; }

  const Params& params() const noexcept { return params_; }
  Axis observed_axis(Index agent) const;

  Vector sample_initial_state(Rng& rng) const override;
  Vector observable_mask(Index agent) const override;

  /// Folds positions back into the box, negating the velocity component at each bounce.
  void reflect(Vector& x) const;

 protected:
  Vector evolve_impl(const Vector& x, const Vector& v) const override;
  Vector observe_impl(Index agent, const Vector& x, const Regressors&) const override;
  Matrix jacobian_f_impl(const Vector& x) const override;
  Matrix jacobian_h_impl(Index agent, const Vector& x, const Regressors&) const override;

 private:
  Params params_;
};

/// `agent,x0,...,x<d-1>`, one 0/1 row per agent from an agents x d support matrix.
void write_supports_csv(std::ostream& out, const Matrix& supports);

}  // namespace netfilt
