#include <netfilt/models.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

namespace netfilt {

namespace {

void require_covariance(const Matrix& m, const std::string& what) {
  if (m.rows() != m.cols()) throw DimensionMismatch(what + " is not square");
  if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw InvalidArgument(what + " is not symmetric");
}

// Symmetric square root of a PSD matrix; negative round-off eigenvalues clamp to zero.
Matrix psd_root(const Matrix& m) {
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) throw EigenSolverFailure("covariance decomposition failed");
  const Vector& ev = solver.eigenvalues();
  if (ev.minCoeff() < -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
    throw InvalidArgument("covariance is not positive semidefinite");
  return solver.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * solver.eigenvectors().transpose();
}

Vector standard_normal(Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector z(n);
  for (Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

}  // namespace

// ---------------------------------------------------------------------------

NoiseModel::NoiseModel(Matrix sigma_v, std::vector<Matrix> sigma_w)
    : sigma_v_(std::move(sigma_v)), sigma_w_(std::move(sigma_w)) {
  require_covariance(sigma_v_, "evolution covariance");
  root_v_ = psd_root(sigma_v_);
  root_w_.reserve(sigma_w_.size());
  for (std::size_t l = 0; l < sigma_w_.size(); ++l) {
    require_covariance(sigma_w_[l], "observation covariance of agent " + std::to_string(l));
    root_w_.push_back(psd_root(sigma_w_[l]));
  }
}

Matrix NoiseModel::stacked_sigma_w() const {
  Index total = 0;
  for (const auto& s : sigma_w_) total += s.rows();
  Matrix out = Matrix::Zero(total, total);
  Index offset = 0;
  for (const auto& s : sigma_w_) {
    out.block(offset, offset, s.rows(), s.cols()) = s;
    offset += s.rows();
  }
  return out;
}

Vector NoiseModel::draw_v(Rng& rng) const { return root_v_ * standard_normal(root_v_.rows(), rng); }

Vector NoiseModel::draw_w(Index agent, Rng& rng) const {
  const Matrix& root = root_w_.at(static_cast<std::size_t>(agent));
  return root * standard_normal(root.rows(), rng);
}

// ---------------------------------------------------------------------------

StateSpaceModel::StateSpaceModel(NoiseModel noise, Prior prior) : noise_(std::move(noise)), prior_(std::move(prior)) {}

void StateSpaceModel::check_state(const Vector& x, const char* what) const {
  if (x.size() != state_dim())
    throw DimensionMismatch(std::string(what) + ": expected length " + std::to_string(state_dim()) + ", got " +
                            std::to_string(x.size()));
}

void StateSpaceModel::check_agent(Index agent) const {
  if (agent < 0 || agent >= num_agents())
    throw IndexOutOfRange("agent " + std::to_string(agent) + " out of range [0, " + std::to_string(num_agents()) + ")");
}

Vector StateSpaceModel::evolve(const Vector& x, const Vector& v) const {
  check_state(x, "evolve state");
  check_state(v, "evolve noise");
  return evolve_impl(x, v);
}

Vector StateSpaceModel::project(const Vector& x) const {
  check_state(x, "project state");
  return evolve_impl(x, Vector::Zero(state_dim()));
}

Vector StateSpaceModel::observe(Index agent, const Vector& x, const Regressors& z) const {
  check_agent(agent);
  check_state(x, "observe state");
  return observe_impl(agent, x, z);
}

Vector StateSpaceModel::observe(Index agent, const Vector& x, const Vector& w, const Regressors& z) const {
  Vector y = observe(agent, x, z);
  if (w.size() != y.size()) throw DimensionMismatch("observation noise has the wrong length");
  return y + w;
}

Matrix StateSpaceModel::jacobian_f(const Vector& x) const {
  check_state(x, "jacobian_f state");
  return jacobian_f_impl(x);
}

Matrix StateSpaceModel::jacobian_h(Index agent, const Vector& x, const Regressors& z) const {
  check_agent(agent);
  check_state(x, "jacobian_h state");
  return jacobian_h_impl(agent, x, z);
}

Index StateSpaceModel::total_obs_dim() const {
  Index total = 0;
  for (Index i = 0; i < num_agents(); ++i) total += obs_dim(i);
  return total;
}

Vector StateSpaceModel::observe_stacked(const Vector& x, const Regressors& z) const {
  Vector y(total_obs_dim());
  Index offset = 0;
  for (Index i = 0; i < num_agents(); ++i) {
    y.segment(offset, obs_dim(i)) = observe(i, x, z);
    offset += obs_dim(i);
  }
  return y;
}

Matrix StateSpaceModel::jacobian_h_stacked(const Vector& x, const Regressors& z) const {
  Matrix h(total_obs_dim(), state_dim());
  Index offset = 0;
  for (Index i = 0; i < num_agents(); ++i) {
    h.middleRows(offset, obs_dim(i)) = jacobian_h(i, x, z);
    offset += obs_dim(i);
  }
  return h;
}

NoiseDraw StateSpaceModel::sample_noise(Rng& rng) const {
  NoiseDraw d;
  d.v = noise_.draw_v(rng);
  d.w.reserve(static_cast<std::size_t>(num_agents()));
  for (Index i = 0; i < num_agents(); ++i) d.w.push_back(noise_.draw_w(i, rng));
  return d;
}

Vector StateSpaceModel::sample_initial_state(Rng& rng) const {
  return prior_.mean + psd_root(prior_.covariance) * standard_normal(state_dim(), rng);
}

Vector StateSpaceModel::observable_mask(Index agent) const {
  check_agent(agent);
  return Vector::Ones(state_dim());
}

// ---------------------------------------------------------------------------

LinearModel::LinearModel(Matrix transition, std::vector<Matrix> observation, NoiseModel noise, Prior prior)
    : StateSpaceModel(std::move(noise), std::move(prior)),
      transition_(std::move(transition)),
      observation_(std::move(observation)) {
  const Index d = transition_.rows();
  if (transition_.cols() != d) throw DimensionMismatch("transition matrix is not square");
  if (this->noise().sigma_v().rows() != d) throw DimensionMismatch("evolution covariance size");
  if (this->noise().num_agents() != static_cast<Index>(observation_.size()))
    throw DimensionMismatch("one observation covariance per agent is required");
  for (std::size_t i = 0; i < observation_.size(); ++i) {
    if (observation_[i].cols() != d) throw DimensionMismatch("observation matrix column count");
    if (this->noise().sigma_w(static_cast<Index>(i)).rows() != observation_[i].rows())
      throw DimensionMismatch("observation covariance size");
  }
  if (this->prior().mean.size() != d || this->prior().covariance.rows() != d)
    throw DimensionMismatch("prior dimension");
}

LinearModel LinearModel::scalar(double a, double process_var, double obs_var, Index num_agents, double prior_mean,
                                double prior_var) {
  std::vector<Matrix> h(static_cast<std::size_t>(num_agents), Matrix::Ones(1, 1));
  std::vector<Matrix> r(static_cast<std::size_t>(num_agents), Matrix::Constant(1, 1, obs_var));
  return LinearModel(Matrix::Constant(1, 1, a), std::move(h), NoiseModel(Matrix::Constant(1, 1, process_var), std::move(r)),
                     Prior{Vector::Constant(1, prior_mean), Matrix::Constant(1, 1, prior_var)});
}

// ---------------------------------------------------------------------------

namespace {

NoiseModel tanh_noise(const TanhRegressionModel::Params& p) {
  return NoiseModel(Matrix::Zero(p.state_dim, p.state_dim),
                    std::vector<Matrix>(static_cast<std::size_t>(p.num_agents), Matrix::Constant(1, 1, p.obs_var)));
}

Prior tanh_prior(const TanhRegressionModel::Params& p) {
  return Prior{Vector::Zero(p.state_dim),
               Matrix::Identity(p.state_dim, p.state_dim) * (p.truth_scale * p.truth_scale)};
}

}  // namespace

TanhRegressionModel::TanhRegressionModel(const Params& params)
    : TanhRegressionModel(params, round_robin_supports(params.state_dim, params.num_agents, params.active_per_agent)) {}

TanhRegressionModel::TanhRegressionModel(const Params& params, std::vector<Vector> supports)
    : StateSpaceModel(tanh_noise(params), tanh_prior(params)), params_(params), supports_(std::move(supports)) {
  if (params_.state_dim < 1 || params_.num_agents < 1) throw InvalidArgument("tanh model needs d >= 1 and N >= 1");
  if (static_cast<Index>(supports_.size()) != params_.num_agents) throw DimensionMismatch("one support mask per agent");
  Vector cover = Vector::Zero(params_.state_dim);
  for (const auto& s : supports_) {
    if (s.size() != params_.state_dim) throw DimensionMismatch("support mask length");
    cover = cover.cwiseMax(s);
  }
  if ((cover.array() == 0.0).any()) throw InvalidArgument("agent supports leave some coordinate unobserved");
}

std::vector<Vector> TanhRegressionModel::round_robin_supports(Index state_dim, Index num_agents, Index active) {
  if (active < 1 || active > state_dim) throw InvalidArgument("active coordinates must lie in [1, d]");
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(num_agents));
  for (Index i = 0; i < num_agents; ++i) {
    Vector s = Vector::Zero(state_dim);
    for (Index k = 0; k < active; ++k) s[(i * active + k) % state_dim] = 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

Matrix TanhRegressionModel::support_matrix() const {
  Matrix m(num_agents(), params_.state_dim);
  for (Index i = 0; i < num_agents(); ++i) m.row(i) = supports_[static_cast<std::size_t>(i)].transpose();
  return m;
}

Regressors TanhRegressionModel::sample_regressors(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, std::sqrt(params_.regressor_var));
  Regressors z;
  z.reserve(supports_.size());
  for (const auto& s : supports_) {
    Matrix row = Matrix::Zero(1, params_.state_dim);
    for (Index k = 0; k < params_.state_dim; ++k)
      if (s[k] != 0.0) row(0, k) = normal(rng);
    z.push_back(std::move(row));
  }
  return z;
}

const Matrix& TanhRegressionModel::regressor(Index agent, const Regressors& z) const {
  if (static_cast<Index>(z.size()) != num_agents())
    throw DimensionMismatch("tanh model needs one regressor per agent");
  const Matrix& row = z[static_cast<std::size_t>(agent)];
  if (row.cols() != params_.state_dim || row.rows() != 1) throw DimensionMismatch("regressor must be 1 x d");
  return row;
}

Vector TanhRegressionModel::observe_impl(Index agent, const Vector& x, const Regressors& z) const {
  return (regressor(agent, z) * x).array().tanh().matrix();
}

Matrix TanhRegressionModel::jacobian_h_impl(Index agent, const Vector& x, const Regressors& z) const {
  const Matrix& row = regressor(agent, z);
  const Vector t = (row * x).array().tanh().matrix();
  return (1.0 - t.array().square()).matrix().asDiagonal() * row;
}

// ---------------------------------------------------------------------------

namespace {

NoiseModel box_noise(const ParticleInBoxModel::Params& p) {
  return NoiseModel(Matrix::Identity(4, 4) * p.process_var,
                    std::vector<Matrix>(static_cast<std::size_t>(p.num_agents), Matrix::Constant(1, 1, p.obs_var)));
}

Prior box_prior(const ParticleInBoxModel::Params& p) {
  Vector var(4);
  var << p.initial_position_var, p.initial_speed_var, p.initial_position_var, p.initial_speed_var;
  return Prior{Vector::Zero(4), var.asDiagonal()};
}

}  // namespace

ParticleInBoxModel::ParticleInBoxModel(const Params& params)
    : StateSpaceModel(box_noise(params), box_prior(params)), params_(params) {
  if (params_.num_agents < 1) throw InvalidArgument("particle-in-box needs at least one agent");
  if (params_.vertical_observer < 0 || params_.vertical_observer >= params_.num_agents)
    throw IndexOutOfRange("vertical observer index out of range");
  if (!(params_.half_width > 0) || !(params_.dt > 0)) throw InvalidArgument("box half-width and dt must be positive");
}

ParticleInBoxModel::Axis ParticleInBoxModel::observed_axis(Index agent) const {
  check_agent(agent);
  return agent == params_.vertical_observer ? Axis::Y : Axis::X;
}

void ParticleInBoxModel::reflect(Vector& x) const {
  const double l = params_.half_width;
  for (Index axis : {Index{0}, Index{2}}) {
    double& p = x[axis];
    double& v = x[axis + 1];
    if (!std::isfinite(p) || (p <= l && p >= -l)) continue;
    // Fold with period 4L; an odd number of wall crossings flips the velocity.
    const double shifted = p + l;
    const double crossings = std::floor(shifted / (2 * l));
    const double r = shifted - crossings * 2 * l;
    if (std::fmod(std::abs(crossings), 2.0) == 0.0) {
      p = r - l;
    } else {
      p = l - r;
      v = -v;
    }
  }
}

Vector ParticleInBoxModel::evolve_impl(const Vector& x, const Vector& v) const {
  Vector next = jacobian_f_impl(x) * x + v;
  reflect(next);
  return next;
}

Vector ParticleInBoxModel::observe_impl(Index agent, const Vector& x, const Regressors&) const {
  return Vector::Constant(1, observed_axis(agent) == Axis::X ? x[0] : x[2]);
}

Matrix ParticleInBoxModel::jacobian_f_impl(const Vector&) const {
  Matrix a = Matrix::Identity(4, 4);
  a(0, 1) = params_.dt;
  a(2, 3) = params_.dt;
  return a;
}

Matrix ParticleInBoxModel::jacobian_h_impl(Index agent, const Vector&, const Regressors&) const {
  Matrix h = Matrix::Zero(1, 4);
  h(0, observed_axis(agent) == Axis::X ? 0 : 2) = 1.0;
  return h;
}

Vector ParticleInBoxModel::sample_initial_state(Rng& rng) const {
  Vector x = StateSpaceModel::sample_initial_state(rng);
  reflect(x);
  return x;
}

Vector ParticleInBoxModel::observable_mask(Index agent) const {
  Vector m = Vector::Zero(4);
  const Index base = observed_axis(agent) == Axis::X ? 0 : 2;
  m[base] = m[base + 1] = 1.0;
  return m;
}

void write_supports_csv(std::ostream& out, const Matrix& supports) {
  out << "agent";
  for (Index k = 0; k < supports.cols(); ++k) out << ",x" << k;
  out << '\n';
  for (Index i = 0; i < supports.rows(); ++i) {
    out << i;
    for (Index k = 0; k < supports.cols(); ++k) out << ',' << (supports(i, k) != 0.0 ? 1 : 0);
    out << '\n';
  }
}

}  // namespace netfilt
