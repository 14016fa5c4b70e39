#include <netfilt/analysis.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

using namespace netfilt;

namespace {

// f(x) = x + 0.1 sin(x) componentwise, h_i(x) = x.
class SineDrift final : public StateSpaceModel {
 public:
  explicit SineDrift(Index agents)
      : StateSpaceModel(NoiseModel(Matrix::Identity(2, 2) * 0.01,
                                   std::vector<Matrix>(static_cast<std::size_t>(agents), Matrix::Identity(2, 2))),
                        Prior{Vector::Zero(2), Matrix::Identity(2, 2)}),
        agents_(agents) {}

  Index state_dim() const override { return 2; }
  Index num_agents() const override { return agents_; }
  Index obs_dim(Index) const override { return 2; }

 protected:
  Vector evolve_impl(const Vector& x, const Vector& v) const override {
    return (x.array() + 0.1 * x.array().sin()).matrix() + v;
  }
  Vector observe_impl(Index, const Vector& x, const Regressors&) const override { return x; }
  Matrix jacobian_f_impl(const Vector& x) const override {
    return (1.0 + 0.1 * x.array().cos()).matrix().asDiagonal();
  }
  Matrix jacobian_h_impl(Index, const Vector& x, const Regressors&) const override {
    return Matrix::Identity(x.size(), x.size());
  }

 private:
  Index agents_;
};

// One-step trace: central estimate `central`, agent i holds central + offsets[i].
RunTrace one_step_trace(const StateSpaceModel& model, const Vector& central, const std::vector<Vector>& offsets,
                        const Vector& next_truth, const Regressors& z) {
  const Index n = model.num_agents();
  RunTrace t;
  t.truth = {central, next_truth};
  CentralizedState c0{central, Matrix::Identity(central.size(), central.size()), Matrix()};
  CentralizedState c1 = c0;
  c1.gain = Matrix::Constant(central.size(), model.total_obs_dim(), 0.01);
  t.central = {c0, c1};
  std::vector<AgentState> now, next;
  for (Index i = 0; i < n; ++i) {
    AgentState a = initial_agent_state(model);
    a.estimate = central + offsets[static_cast<std::size_t>(i)];
    now.push_back(a);
    a.gain = Matrix::Constant(central.size(), model.obs_dim(i), 0.02);
    next.push_back(a);
  }
  t.agents = {now, next};
  t.regressors = {Regressors{}, z};
  return t;
}

}  // namespace

TEST_CASE("discrepancy examples") {
  ErrorTrace e;
  e.central = {Vector::Ones(3)};
  e.agents = {{Vector::Ones(3), Vector::Ones(3)}};
  CHECK(discrepancy(e).squared_norm[0] == 0.0);

  ErrorTrace two;
  two.central = {Vector::Unit(2, 0)};
  two.agents = {{Vector::Unit(2, 0), Vector::Zero(2)}};
  const DiscrepancyTrace d = discrepancy(two);
  Vector expected(4);
  expected << 0, 0, -1, 0;
  CHECK(d.delta[0] == expected);
  CHECK(d.squared_norm[0] == 1.0);

  ErrorTrace bad = two;
  bad.agents[0][1] = Vector::Zero(3);
  CHECK_THROWS_AS(discrepancy(bad), ShapeMismatch);
  bad = two;
  bad.agents.clear();
  CHECK_THROWS_AS(discrepancy(bad), ShapeMismatch);
}

TEST_CASE("matched complete-graph run has vanishing discrepancy") {
  const LinearModel m = LinearModel::scalar(0.9, 0.04, 0.25, 10, 1.0, 2.0);
  SimulationSetup setup;
  setup.model = &m;
  setup.combination = uniform_weights(complete_topology(10));
  setup.matched_gains = true;
  setup.horizon = 100;
  Rng rng(3);
  const DiscrepancyTrace d = discrepancy(error_trace(run_distributed(setup, rng)));
  REQUIRE(d.squared_norm.size() == 101);
  for (double v : d.squared_norm) CHECK(v < 1e-18);
}

TEST_CASE("stacking identity") {
  const LinearModel m = LinearModel::scalar(0.95, 0.1, 0.5, 6);
  SimulationSetup setup;
  setup.model = &m;
  setup.combination = metropolis_weights(path_topology(6));
  setup.horizon = 40;
  Rng rng(8);
  const ErrorTrace e = error_trace(run_distributed(setup, rng));
  const DiscrepancyTrace d = discrepancy(e);
  for (Index n = 0; n < e.steps(); ++n) {
    double sum = 0;
    for (const auto& ei : e.agents[static_cast<std::size_t>(n)])
      sum += (ei - e.central[static_cast<std::size_t>(n)]).squaredNorm();
    CHECK(d.squared_norm[static_cast<std::size_t>(n)] == doctest::Approx(sum).epsilon(1e-14));
    CHECK((e.stacked(n) - d.delta[static_cast<std::size_t>(n)]).size() == 6);
  }
}

TEST_CASE("theorem1_radius examples") {
  const Matrix one = Matrix::Ones(1, 1);
  {
    const std::vector<Matrix> g{Matrix::Constant(1, 1, 0.5)}, h{one};
    CHECK(theorem1_radius<double>(one, g, h, one) == doctest::Approx(0.5).epsilon(1e-14));
  }
  {
    Matrix c(2, 2);
    c << 0.3, 0.7, 0.6, 0.4;
    const Matrix a = Matrix::Identity(2, 2) * 1.3;
    std::vector<Matrix> h{Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
    std::vector<Matrix> g = h;
    CHECK(theorem1_radius<double>(c, g, h, a) == doctest::Approx(0.0));
  }
  for (double g : {0.1, 0.5, 0.9, 1.4, 2.5}) {
    const Matrix c = Matrix::Constant(2, 2, 0.5);
    const std::vector<Matrix> gains(2, Matrix::Constant(1, 1, g)), h(2, one);
    // [[a, a], [a, a]] with a = (1 - g)/2 has eigenvalues 2a and 0.
    const double oracle = std::abs(2.0 * 0.5 * (1.0 - g));
    CHECK(theorem1_radius<double>(c, gains, h, one) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(oracle == doctest::Approx(std::abs(1.0 - g)));
  }
  const std::vector<Matrix> g{Matrix::Constant(1, 1, 0.5)}, h{one};
  CHECK_THROWS_AS(theorem1_radius<double>(Matrix::Constant(2, 2, 0.5), g, h, one), ShapeMismatch);
}

TEST_CASE("error propagation matrix matches a Kronecker assembly") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  const Index n = 3, d = 2;
  Matrix c(n, n);
  c << 0.5, 0.5, 0, 0.25, 0.5, 0.25, 0, 0.5, 0.5;
  Matrix a(d, d);
  a << n01(rng), n01(rng), n01(rng), n01(rng);
  std::vector<Matrix> gains, hs;
  std::vector<Vector> masks;
  Matrix big_g = Matrix::Zero(n * d, n), big_h = Matrix::Zero(n, n * d), big_u = Matrix::Zero(n * d, n * d);
  for (Index i = 0; i < n; ++i) {
    Matrix g(d, 1), h(1, d);
    g << n01(rng), n01(rng);
    h << n01(rng), n01(rng);
    Vector u(d);
    u << 1.0, static_cast<double>(i % 2);
    gains.push_back(g);
    hs.push_back(h);
    masks.push_back(u);
    big_g.block(i * d, i, d, 1) = g;
    big_h.block(i, i * d, 1, d) = h;
    big_u.block(i * d, i * d, d, d) = u.asDiagonal();
  }
  Matrix kron_c = Matrix::Zero(n * d, n * d), kron_a = Matrix::Zero(n * d, n * d);
  for (Index i = 0; i < n; ++i) {
    kron_a.block(i * d, i * d, d, d) = a;
    for (Index j = 0; j < n; ++j) kron_c.block(i * d, j * d, d, d) = c(i, j) * Matrix::Identity(d, d);
  }
  const Matrix oracle = kron_c * (Matrix::Identity(n * d, n * d) - big_u * big_g * big_h) * kron_a;
  const Matrix m = error_propagation_matrix<double>(c, gains, hs, a, masks);
  CHECK((m - oracle).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(g_delta<double>(c, gains, hs, a, masks) == doctest::Approx(spectral_radius(oracle)).epsilon(1e-12));
  CHECK(g_delta<double>(c, gains, hs, a, masks) >= 0.0);
}

TEST_CASE("theorem3_window") {
  const std::vector<double> s{1.2, 0.5};
  const WindowCheck w = theorem3_window(s, 1);
  CHECK(w.product == doctest::Approx(0.6));
  CHECK(w.satisfied);
  CHECK(theorem3_window(s, 0).satisfied);
  CHECK_THROWS_AS(theorem3_window(s, 2), WindowTooLong);
  CHECK_THROWS_AS(theorem3_window(s, -1), WindowTooLong);

  const std::vector<double> ones(8, 1.0);
  for (Index k = 0; k < 8; ++k) {
    CHECK(theorem3_window(ones, k).product == 1.0);
    CHECK_FALSE(theorem3_window(ones, k).satisfied);
  }
  CHECK_FALSE(smallest_contracting_window(ones, 7).has_value());

  const std::vector<double> rising{0.5, 1.5, 1.1};
  CHECK(smallest_contracting_window(rising, 5) == Index{2});
}

TEST_CASE("theorem3_window products are multiplicative") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.25, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(20);
    for (double& v : g) v = u(rng);
    const Index k = static_cast<Index>(rng() % 19);
    const Index split = static_cast<Index>(rng() % static_cast<std::uint64_t>(k + 1));
    // Most recent split+1 values times the k-split values before them.
    const double recent = theorem3_window(g, split).product;
    const std::span<const double> head(g.data(), g.size() - static_cast<std::size_t>(split) - 1);
    const double earlier = k > split ? theorem3_window(head, k - split - 1).product : 1.0;
    CHECK(theorem3_window(g, k).product == doctest::Approx(recent * earlier).epsilon(1e-14));
  }
}

TEST_CASE("gamma estimation examples") {
  std::vector<Vector> truth, phi, est;
  for (int n = 0; n < 5; ++n) {
    truth.push_back(Vector::Constant(2, n));
    phi.push_back(truth.back());
    est.push_back(Vector::Constant(2, n + 1.0));
  }
  const GammaSeries perfect = estimate_gamma(truth, phi, est);
  CHECK(std::isnan(perfect.ratio[0]));
  for (std::size_t n = 1; n < 5; ++n) CHECK(perfect.ratio[n] == 0.0);

  // Static truth, identity f, phi = previous estimate.
  std::vector<Vector> static_truth(5, Vector::Zero(2)), proj, e2;
  for (int n = 0; n < 5; ++n) {
    e2.push_back(Vector::Constant(2, 1.0 + n));
    proj.push_back(n == 0 ? e2.back() : e2[static_cast<std::size_t>(n - 1)]);
  }
  const GammaSeries carried = estimate_gamma(static_truth, proj, e2);
  for (std::size_t n = 1; n < 5; ++n) CHECK(carried.ratio[n] == doctest::Approx(1.0));

  std::vector<Vector> degenerate_est = truth;
  const GammaSeries flagged = estimate_gamma(truth, phi, degenerate_est);
  for (std::size_t n = 1; n < 5; ++n) {
    CHECK(flagged.degenerate[n]);
    CHECK(std::isnan(flagged.ratio[n]));
  }
  CHECK_THROWS_AS(estimate_gamma(truth, phi, std::span<const Vector>(est.data(), 3)), ShapeMismatch);
}

TEST_CASE("fixed-gain scalar filter contracts by (1 - g)^2") {
  const LinearModel m = LinearModel::scalar(1.0, 0.0, 0.0, 1, 0.0, 1.0);
  for (double g : {0.2, 0.5, 0.7}) {
    SimulationSetup setup;
    setup.model = &m;
    setup.combination = uniform_weights(complete_topology(1));
    setup.rule = GainRule::gradient(g / 2.0);  // single agent: gain 2 zeta H^T
    setup.horizon = 20;
    Rng rng(2);
    const RunTrace t = run_distributed(setup, rng);
    REQUIRE(std::abs(t.truth[0](0) - t.agents[0][0].estimate(0)) > 1e-3);
    const GammaSeries gs = estimate_gamma(t, 0);
    const double expected = (1.0 - g) * (1.0 - g);
    for (std::size_t n = 1; n < gs.ratio.size(); ++n)
      if (!gs.degenerate[n]) CHECK(gs.ratio[n] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("quantile") {
  CHECK(quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(quantile({1, 2, 3, 4, 5}, 0.95) == doctest::Approx(4.8));
  CHECK(quantile({5, 1, 4, 2, 3}, 0.0) == 1.0);
  CHECK(quantile({5, 1, 4, 2, 3}, 1.0) == 5.0);
  CHECK(quantile({std::nan(""), 2.0, INFINITY}, 0.95) == 2.0);
  CHECK(std::isnan(quantile({}, 0.5)));
}

TEST_CASE("exponential fit recovers synthetic parameters") {
  std::vector<double> trace(100);
  for (std::size_t n = 0; n < trace.size(); ++n) trace[n] = 1.0 * std::pow(0.5, static_cast<double>(n)) + 0.1;
  const ExponentialBoundFit fit = fit_exponential_bound(trace, 0, 1.0);
  CHECK(fit.valid);
  CHECK(fit.eta == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.rho == doctest::Approx(0.5).epsilon(0.05));
  CHECK(fit.nu == doctest::Approx(0.1).epsilon(0.05));
  CHECK(fit.mu == 1.0);
  CHECK(fit.window_begin == 0);
  CHECK(fit.window_end > 2);

  std::vector<double> scaled(200);
  for (std::size_t n = 0; n < scaled.size(); ++n)
    scaled[n] = 3.0 * 4.0 * std::pow(0.9, static_cast<double>(n)) + 0.02;
  const ExponentialBoundFit f2 = fit_exponential_bound(scaled, 5, 4.0);
  CHECK(f2.rho == doctest::Approx(0.9).epsilon(0.01));
  CHECK(f2.eta == doctest::Approx(3.0).epsilon(0.05));
  CHECK(f2.window_begin == 5);
}

TEST_CASE("fitted curve dominates a noisy decaying trace within slack") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> jitter(0.95, 1.05);
  std::vector<double> trace(300);
  for (std::size_t n = 0; n < trace.size(); ++n)
    trace[n] = (2.0 * std::pow(0.97, static_cast<double>(n)) + 0.05) * jitter(rng);
  const ExponentialBoundFit fit = fit_exponential_bound(trace, 0, 2.0);
  CHECK(fit.valid);
  CHECK(fit.rho < 1.0);
  CHECK(fit.rho > 0.0);
  CHECK(fit.eta > 0.0);
  CHECK(fit.nu >= 0.0);
  CHECK(fit.max_shortfall < 0.5);
}

TEST_CASE("exponential fit failures") {
  const std::vector<double> flat(50, 0.3);
  CHECK_THROWS_AS(fit_exponential_bound(flat, 0, 1.0), FitFailed);
  std::vector<double> rising(50);
  std::iota(rising.begin(), rising.end(), 1.0);
  CHECK_THROWS_AS(fit_exponential_bound(rising, 0, 1.0), FitFailed);
  const std::vector<double> shorty(10, 1.0);
  CHECK_THROWS_AS(fit_exponential_bound(shorty, 0, 1.0), FitFailed);
  std::vector<double> with_nan(50, 1.0);
  with_nan[3] = std::nan("");
  CHECK_THROWS_AS(fit_exponential_bound(with_nan, 0, 1.0), FitFailed);
}

TEST_CASE("linear model residuals vanish except the observation innovation") {
  const LinearModel m = LinearModel::scalar(0.9, 0.04, 0.25, 5, 1.0, 2.0);
  SimulationSetup setup;
  setup.model = &m;
  setup.combination = metropolis_weights(path_topology(5));
  setup.horizon = 30;
  Rng rng(6);
  const RunTrace t = run_distributed(setup, rng);
  const ResidualNorms r = residual_report(m, t, setup.combination);
  CHECK(r.res_f < 1e-18);
  CHECK(r.res_h < 1e-18);
  CHECK(r.res_ob > 0.0);
  CHECK(r.res_delta >= 0.0);
  CHECK(r.mu_prime > 0.0);
}

TEST_CASE("identical estimates give zero linearisation residuals") {
  TanhRegressionModel::Params p;
  p.num_agents = 3;
  const TanhRegressionModel m(p);
  Rng rng(9);
  const Regressors z = m.sample_regressors(rng);
  Vector x(5);
  x << 0.3, -0.2, 0.1, 0.5, -0.4;
  const std::vector<Vector> zero(3, Vector::Zero(5));
  const RunTrace t = one_step_trace(m, x, zero, x + Vector::Constant(5, 0.1), z);
  const ResidualNorms r = residuals_at(m, t, uniform_weights(complete_topology(3)), 0);
  CHECK(r.res_f == 0.0);
  CHECK(r.res_h == 0.0);
  CHECK(r.mu_prime == 0.0);
  CHECK(r.res_ob > 0.0);
  CHECK_THROWS_AS(residuals_at(m, t, uniform_weights(complete_topology(3)), 1), ShapeMismatch);
}

TEST_CASE("tanh residuals are second order in the perturbation") {
  TanhRegressionModel::Params p;
  p.num_agents = 3;
  const TanhRegressionModel m(p);
  Rng rng(13);
  const Regressors z = m.sample_regressors(rng);
  Vector x(5);
  x << 0.3, -0.2, 0.1, 0.5, -0.4;
  std::mt19937_64 g(1);
  std::normal_distribution<double> n01;
  std::vector<Vector> offsets;
  for (int i = 0; i < 3; ++i) {
    Vector o(5);
    for (Index k = 0; k < 5; ++k) o(k) = n01(g);
    offsets.push_back(1e-4 * o / o.norm());
  }
  const RunTrace t = one_step_trace(m, x, offsets, x, z);
  const ResidualNorms r = residuals_at(m, t, uniform_weights(complete_topology(3)), 0);
  CHECK(r.res_f == 0.0);  // f is the identity
  CHECK(std::sqrt(r.res_h) < 1e-7);
  CHECK(std::sqrt(r.res_h) > 1e-12);
  CHECK(r.mu_prime == doctest::Approx(1e-8).epsilon(1e-6));
}

TEST_CASE("residual log-log slope is two for a smooth model") {
  const SineDrift m(2);
  Vector x(2);
  x << 0.7, -1.1;
  Vector dir(2);
  dir << 0.6, 0.8;
  std::vector<double> log_s, log_r;
  for (double s : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}) {
    const std::vector<Vector> offsets{s * dir, -s * dir};
    const RunTrace t = one_step_trace(m, x, offsets, x, {});
    const ResidualNorms r = residuals_at(m, t, uniform_weights(complete_topology(2)), 0);
    log_s.push_back(std::log(s));
    log_r.push_back(std::log(std::sqrt(r.res_f)));
    CHECK(r.res_h == doctest::Approx(r.res_f).epsilon(1e-6));  // h is the identity
  }
  const double ms = std::accumulate(log_s.begin(), log_s.end(), 0.0) / 5.0;
  const double mr = std::accumulate(log_r.begin(), log_r.end(), 0.0) / 5.0;
  double num = 0, den = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    num += (log_s[k] - ms) * (log_r[k] - mr);
    den += (log_s[k] - ms) * (log_s[k] - ms);
  }
  const double slope = num / den;
  CHECK(slope >= 1.8);
  CHECK(slope <= 2.2);
}

TEST_CASE("g_delta sequence on a recorded run") {
  const LinearModel m = LinearModel::scalar(0.9, 0.04, 0.25, 4);
  SimulationSetup setup;
  setup.model = &m;
  setup.combination = metropolis_weights(path_topology(4));
  setup.horizon = 20;
  Rng rng(17);
  const RunTrace t = run_distributed(setup, rng);
  const std::vector<double> g = g_delta_sequence(m, t, setup.combination, 5, 19);
  REQUIRE(g.size() == 15);
  for (double v : g) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(g_delta_sequence(m, t, setup.combination, 5, 20), ShapeMismatch);
  CHECK_THROWS_AS(g_delta_sequence(m, t, setup.combination, 6, 5), ShapeMismatch);
}

TEST_CASE("report writers") {
  ConvergenceReport r;
  r.lemma1_radius = 0.9;
  r.theorem1_radius = 0.8;
  r.rho_c = 1.0;
  r.theorem2_gammas = {0.25, 0.5};
  r.g_steps = {10, 11};
  r.g_delta = {0.7, 0.6};
  r.theorem3_products = {0.6, 0.42};
  r.theorem3_k = 0;
  ExponentialBoundFit fit;
  fit.valid = true;
  fit.rho = 0.95;
  r.fit = fit;
  std::ostringstream text;
  write_report(text, r);
  const std::string s = text.str();
  CHECK(s.find("lemma1_radius = 0.9\n") != std::string::npos);
  CHECK(s.find("theorem2_gamma_max = 0.5\n") != std::string::npos);
  CHECK(s.find("theorem2_gammas = 0.25 0.5\n") != std::string::npos);
  CHECK(s.find("theorem3_products = 0.6 0.42\n") != std::string::npos);
  CHECK(s.find("theorem3_k = 0\n") != std::string::npos);
  CHECK(s.find("fit_valid = true\n") != std::string::npos);
  CHECK(s.find("fit_rho = 0.95\n") != std::string::npos);

  std::ostringstream csv;
  write_g_delta_csv(csv, r);
  CHECK(csv.str() == "step,g_delta\n10,0.7\n11,0.6\n");

  r.theorem3_k.reset();
  r.fit.reset();
  std::ostringstream none;
  write_report(none, r);
  CHECK(none.str().find("theorem3_k = none\n") != std::string::npos);
  CHECK(none.str().find("fit_valid = false\n") != std::string::npos);
}
