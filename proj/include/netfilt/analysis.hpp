#pragma once

#include <netfilt/filters.hpp>
#include <netfilt/network.hpp>

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace netfilt {

// ---------------------------------------------------------------------------
// Errors and discrepancy

/// Estimation errors of the centralised filter and of every agent, per step.
struct ErrorTrace {
  std::vector<Vector> central;             // epsilon_n = x_n - x_hat_n
  std::vector<std::vector<Vector>> agents;  // agents[n][i] = x_n - x_hat_{i,n}

  Index steps() const noexcept { return static_cast<Index>(central.size()); }
  /// Network-wide stacked error at step n.
  Vector stacked(Index n) const;
};

ErrorTrace error_trace(const RunTrace& trace);

/// Delta_n = stacked agent error - 1 (x) centralised error.
struct DiscrepancyTrace {
  std::vector<Vector> delta;
  std::vector<double> squared_norm;
};

DiscrepancyTrace discrepancy(const ErrorTrace& errors);

// ---------------------------------------------------------------------------
// Convergence conditions

namespace detail {

inline void check_blocks(Index agents, std::size_t gains, std::size_t jacobians, std::size_t masks) {
  if (static_cast<Index>(gains) != agents || static_cast<Index>(jacobians) != agents ||
      (masks != 0 && static_cast<Index>(masks) != agents))
    throw ShapeMismatch("one gain, observation Jacobian and (optional) mask per agent is required");
}

}  // namespace detail

/// Dense assembly of (C (x) I)(I - Upsilon G H)(I (x) A). An empty `masks` span means identity masks.
template <typename Scalar>
MatrixX<Scalar> error_propagation_matrix(const MatrixX<Scalar>& c, std::span<const MatrixX<Scalar>> gains,
                                         std::span<const MatrixX<Scalar>> jacobians_h, const MatrixX<Scalar>& a,
                                         std::span<const VectorX<Scalar>> masks = {}) {
  const Index n = c.rows();
  const Index d = a.rows();
  detail::check_blocks(n, gains.size(), jacobians_h.size(), masks.size());
  if (c.cols() != n || a.cols() != d) throw ShapeMismatch("C and A must be square");
  std::vector<MatrixX<Scalar>> local(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const auto& g = gains[static_cast<std::size_t>(j)];
    const auto& h = jacobians_h[static_cast<std::size_t>(j)];
    if (g.rows() != d || h.cols() != d || g.cols() != h.rows()) throw ShapeMismatch("gain/Jacobian block shapes");
    MatrixX<Scalar> gh = g * h;
    if (!masks.empty()) gh = masks[static_cast<std::size_t>(j)].asDiagonal() * gh;
    local[static_cast<std::size_t>(j)] = (MatrixX<Scalar>::Identity(d, d) - gh) * a;
  }
  MatrixX<Scalar> m = MatrixX<Scalar>::Zero(n * d, n * d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (c(i, j) != Scalar(0)) m.block(i * d, j * d, d, d) = c(i, j) * local[static_cast<std::size_t>(j)];
  return m;
}

/// rho((C (x) I)(I - G H)(I (x) A)): the leading factor of the equal-gain discrepancy bound.
template <typename Scalar>
Scalar theorem1_radius(const MatrixX<Scalar>& c, std::span<const MatrixX<Scalar>> gains,
                       std::span<const MatrixX<Scalar>> jacobians_h, const MatrixX<Scalar>& a) {
  return spectral_radius(error_propagation_matrix<Scalar>(c, gains, jacobians_h, a));
}

/// g_Delta = rho((C (x) I)(I - Upsilon G H)(I (x) A)) for one step.
template <typename Scalar>
Scalar g_delta(const MatrixX<Scalar>& c, std::span<const MatrixX<Scalar>> gains,
               std::span<const MatrixX<Scalar>> jacobians_h, const MatrixX<Scalar>& a,
               std::span<const VectorX<Scalar>> masks) {
  return spectral_radius(error_propagation_matrix<Scalar>(c, gains, jacobians_h, a, masks));
}

struct WindowCheck {
  double product = 1.0;
  bool satisfied = false;
};

/// Product of the most recent k+1 values of `g_sequence`; satisfied iff the product is below 1.
WindowCheck theorem3_window(std::span<const double> g_sequence, Index k);

/// Smallest k in [0, k_max] whose trailing window product is below 1, if any.
std::optional<Index> smallest_contracting_window(std::span<const double> g_sequence, Index k_max);

/// Per-step contraction ratios |x_n - phi_n|^2 / |x_{n-1} - x_hat_{n-1}|^2 for one agent.
/// Steps whose denominator is at or below 1e-15 are flagged and carry NaN.
struct GammaSeries {
  std::vector<double> ratio;      // ratio[n] for n >= 1; ratio[0] is NaN
  std::vector<bool> degenerate;
};

GammaSeries estimate_gamma(std::span<const Vector> truth, std::span<const Vector> phi,
                           std::span<const Vector> estimates);
GammaSeries estimate_gamma(const RunTrace& trace, Index agent);

/// Empirical q-quantile (linear interpolation) of the finite entries; NaN when none.
double quantile(std::vector<double> values, double q);

inline constexpr double kGammaQuantile = 0.95;

// ---------------------------------------------------------------------------
// Exponential mean-square bound

/// trace[n] ~ eta * mu * rho^n + nu, with n the 0-based index into the trace.
struct ExponentialBoundFit {
  double eta = 0;
  double rho = 0;
  double nu = 0;
  double mu = 0;
  double residual = 0;        // RMS of the log-domain residuals over the fitted window
  double max_shortfall = 0;   // max relative amount by which the trace exceeds the curve on the window
  Index window_begin = 0;
  Index window_end = 0;       // exclusive
  bool valid = false;
};

/// nu is the mean of the trailing 20%. (eta, rho) come from least squares on
/// log(trace - nu) over the transient: from `burn_in` until the excess first drops
/// below 1% of its starting value. Throws FitFailed when there is no transient.
ExponentialBoundFit fit_exponential_bound(std::span<const double> mse, Index burn_in, double initial_error_sq);

// ---------------------------------------------------------------------------
// Linearisation residuals

struct ResidualNorms {
  double res_f = 0;       // sum_i |f(x_hat) - f(x_hat_i) - A (x_hat - x_hat_i)|^2
  double res_h = 0;       // sum_i |h_i(f(x_hat)) - h_i(f(x_hat_i)) - H_i A (x_hat - x_hat_i)|^2
  double res_ob = 0;      // |h(f(x, v)) - h(f(x_hat))|^2 over the stacked observation
  double res_delta = 0;   // |S Res_ob-blocks|^2 with S = (1/N) 1 G - C Upsilon G~
  double mu_prime = 0;    // max_i |x_hat - x_hat_i|^2
};

/// Residuals at step m of a recorded run (0 <= m < T). The Jacobians are taken at
/// the centralised estimate and its projection; gains are those applied at step m+1.
ResidualNorms residuals_at(const StateSpaceModel& model, const RunTrace& trace, const CombinationMatrix<double>& c,
                           Index m);

/// Mean residuals over steps [0, T).
ResidualNorms residual_report(const StateSpaceModel& model, const RunTrace& trace, const CombinationMatrix<double>& c);

// ---------------------------------------------------------------------------
// Report

struct ConvergenceReport {
  double lemma1_radius = 0;
  double theorem1_radius = 0;
  double rho_c = 0;                        // rho(C (x) I) = rho(C)
  std::vector<double> theorem2_gammas;     // per agent
  std::vector<Index> g_steps;              // step index of each g_Delta value
  std::vector<double> g_delta;
  std::vector<double> theorem3_products;   // k = 0..K over the most recent window
  std::optional<Index> theorem3_k;         // smallest contracting window, if any
  ResidualNorms residuals;
  std::optional<ExponentialBoundFit> fit;
  bool reflection_in_window = false;
};

/// Computes g_Delta at each step in [first, last] of a recorded run.
std::vector<double> g_delta_sequence(const StateSpaceModel& model, const RunTrace& trace,
                                     const CombinationMatrix<double>& c, Index first, Index last);

/// Flat `key = value` text.
void write_report(std::ostream& out, const ConvergenceReport& report);
/// CSV `step,g_delta`.
void write_g_delta_csv(std::ostream& out, const ConvergenceReport& report);

}  // namespace netfilt
