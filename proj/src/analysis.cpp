#include <netfilt/analysis.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace netfilt {

Vector ErrorTrace::stacked(Index n) const {
  const auto& e = agents.at(static_cast<std::size_t>(n));
  if (e.empty()) return Vector();
  const Index d = e.front().size();
  Vector out(d * static_cast<Index>(e.size()));
  for (std::size_t i = 0; i < e.size(); ++i) out.segment(static_cast<Index>(i) * d, d) = e[i];
  return out;
}

ErrorTrace error_trace(const RunTrace& trace) {
  ErrorTrace e;
  e.central.reserve(trace.truth.size());
  e.agents.reserve(trace.truth.size());
  for (std::size_t n = 0; n < trace.truth.size(); ++n) {
    e.central.push_back(trace.truth[n] - trace.central[n].estimate);
    std::vector<Vector> per_agent;
    per_agent.reserve(trace.agents[n].size());
    for (const auto& a : trace.agents[n]) per_agent.push_back(trace.truth[n] - a.estimate);
    e.agents.push_back(std::move(per_agent));
  }
  return e;
}

DiscrepancyTrace discrepancy(const ErrorTrace& errors) {
  if (errors.agents.size() != errors.central.size())
    throw ShapeMismatch("centralised and distributed error traces have different lengths");
  DiscrepancyTrace out;
  out.delta.reserve(errors.central.size());
  out.squared_norm.reserve(errors.central.size());
  for (std::size_t n = 0; n < errors.central.size(); ++n) {
    const Vector& c = errors.central[n];
    const auto& agents = errors.agents[n];
    Vector delta(c.size() * static_cast<Index>(agents.size()));
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (agents[i].size() != c.size()) throw ShapeMismatch("agent error length differs from centralised error");
      delta.segment(static_cast<Index>(i) * c.size(), c.size()) = agents[i] - c;
    }
    out.squared_norm.push_back(delta.squaredNorm());
    out.delta.push_back(std::move(delta));
  }
  return out;
}

// ---------------------------------------------------------------------------

WindowCheck theorem3_window(std::span<const double> g_sequence, Index k) {
  if (k < 0 || static_cast<std::size_t>(k) + 1 > g_sequence.size())
    throw WindowTooLong("window of " + std::to_string(k + 1) + " values exceeds a sequence of " +
                        std::to_string(g_sequence.size()));
  WindowCheck w;
  for (std::size_t i = g_sequence.size() - static_cast<std::size_t>(k) - 1; i < g_sequence.size(); ++i)
    w.product *= g_sequence[i];
  w.satisfied = w.product < 1.0;
  return w;
}

std::optional<Index> smallest_contracting_window(std::span<const double> g_sequence, Index k_max) {
  const Index limit = std::min<Index>(k_max, static_cast<Index>(g_sequence.size()) - 1);
  for (Index k = 0; k <= limit; ++k)
    if (theorem3_window(g_sequence, k).satisfied) return k;
  return std::nullopt;
}

GammaSeries estimate_gamma(std::span<const Vector> truth, std::span<const Vector> phi,
                           std::span<const Vector> estimates) {
  if (truth.size() != phi.size() || truth.size() != estimates.size())
    throw ShapeMismatch("gamma estimation needs aligned truth, phi and estimate traces");
  GammaSeries g;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.ratio.assign(truth.size(), nan);
  g.degenerate.assign(truth.size(), false);
  for (std::size_t n = 1; n < truth.size(); ++n) {
    const double denominator = (truth[n - 1] - estimates[n - 1]).squaredNorm();
    if (denominator <= 1e-15) {
      g.degenerate[n] = true;
      continue;
    }
    g.ratio[n] = (truth[n] - phi[n]).squaredNorm() / denominator;
  }
  return g;
}

GammaSeries estimate_gamma(const RunTrace& trace, Index agent) {
  std::vector<Vector> phi, est;
  phi.reserve(trace.agents.size());
  est.reserve(trace.agents.size());
  for (const auto& step : trace.agents) {
    const auto& a = step.at(static_cast<std::size_t>(agent));
    phi.push_back(a.phi);
    est.push_back(a.estimate);
  }
  return estimate_gamma(trace.truth, phi, est);
}

double quantile(std::vector<double> values, double q) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------

ExponentialBoundFit fit_exponential_bound(std::span<const double> mse, Index burn_in, double initial_error_sq) {
  const auto len = static_cast<Index>(mse.size());
  if (burn_in < 0 || len <= burn_in + 10)
    throw FitFailed("trace of length " + std::to_string(len) + " is too short for burn-in " + std::to_string(burn_in));
  for (double v : mse)
    if (!std::isfinite(v)) throw FitFailed("trace contains non-finite values");

  ExponentialBoundFit fit;
  fit.mu = initial_error_sq;
  const Index tail = std::max<Index>(1, len / 5);
  fit.nu = std::accumulate(mse.end() - tail, mse.end(), 0.0) / static_cast<double>(tail);

  const double start_excess = mse[static_cast<std::size_t>(burn_in)] - fit.nu;
  if (!(start_excess > 1e-9 * std::abs(fit.nu))) throw FitFailed("no decaying transient after burn-in");
  Index end = burn_in;
  while (end < len - tail && mse[static_cast<std::size_t>(end)] - fit.nu >= 0.01 * start_excess) ++end;
  if (end - burn_in < 2) throw FitFailed("transient too short to fit");
  fit.window_begin = burn_in;
  fit.window_end = end;

  // Least squares for log(excess) = log(eta mu) + n log(rho).
  double sn = 0, sy = 0, snn = 0, sny = 0;
  Index used = 0, nonpositive = 0;
  for (Index n = burn_in; n < end; ++n) {
    const double excess = mse[static_cast<std::size_t>(n)] - fit.nu;
    if (excess <= 0) {
      ++nonpositive;
      continue;
    }
    const double x = static_cast<double>(n), y = std::log(excess);
    sn += x;
    sy += y;
    snn += x * x;
    sny += x * y;
    ++used;
  }
  if (used < 2) throw FitFailed("fewer than two positive excess points in the transient");
  const double m = static_cast<double>(used);
  const double slope = (m * sny - sn * sy) / (m * snn - sn * sn);
  const double intercept = (sy - slope * sn) / m;
  fit.rho = std::clamp(std::exp(slope), std::numeric_limits<double>::min(), 1.0 - 1e-12);
  const double amplitude = std::exp(intercept);
  fit.eta = initial_error_sq > 0 ? amplitude / initial_error_sq : amplitude;

  double sq = 0;
  for (Index n = burn_in; n < end; ++n) {
    const double v = mse[static_cast<std::size_t>(n)];
    const double curve = amplitude * std::pow(fit.rho, static_cast<double>(n)) + fit.nu;
    if (v - fit.nu > 0) {
      const double r = std::log(v - fit.nu) - (intercept + slope * static_cast<double>(n));
      sq += r * r;
    }
    if (v > 0) fit.max_shortfall = std::max(fit.max_shortfall, (v - curve) / v);
  }
  fit.residual = std::sqrt(sq / m);
  fit.valid = static_cast<double>(nonpositive) <= 0.1 * static_cast<double>(end - burn_in) && std::exp(slope) < 1.0;
  return fit;
}

// ---------------------------------------------------------------------------

ResidualNorms residuals_at(const StateSpaceModel& model, const RunTrace& trace, const CombinationMatrix<double>& c,
                           Index m) {
  if (m < 0 || m >= trace.steps()) throw ShapeMismatch("residual step outside [0, T)");
  const Index n = model.num_agents();
  const auto& agents = trace.agents[static_cast<std::size_t>(m)];
  const auto& next_agents = trace.agents[static_cast<std::size_t>(m + 1)];
  if (static_cast<Index>(agents.size()) != n || c.size() != n) throw ShapeMismatch("agent count mismatch");
  const Regressors& z = trace.regressors[static_cast<std::size_t>(m + 1)];
  const Vector& central = trace.central[static_cast<std::size_t>(m)].estimate;
  const Matrix& central_gain = trace.central[static_cast<std::size_t>(m + 1)].gain;
  const Vector& next_truth = trace.truth[static_cast<std::size_t>(m + 1)];

  const Matrix a = model.jacobian_f(central);
  const Vector fx = model.project(central);

  ResidualNorms r;
  std::vector<Vector> ob(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Vector& xi = agents[static_cast<std::size_t>(i)].estimate;
    const Vector dev = central - xi;
    r.mu_prime = std::max(r.mu_prime, dev.squaredNorm());
    const Vector fxi = model.project(xi);
    const Vector lin = a * dev;
    r.res_f += (fx - fxi - lin).squaredNorm();
    const Matrix h = model.jacobian_h(i, fx, z);
    const Vector hfx = model.observe(i, fx, z);
    r.res_h += (hfx - model.observe(i, fxi, z) - h * lin).squaredNorm();
    ob[static_cast<std::size_t>(i)] = model.observe(i, next_truth, z) - hfx;
    r.res_ob += ob[static_cast<std::size_t>(i)].squaredNorm();
  }

  // S r: block i = sum_j G_j r_j - sum_j c_ij Upsilon_j G~_j r_j.
  Vector common = Vector::Zero(model.state_dim());
  std::vector<Vector> local(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const auto& aj = next_agents[static_cast<std::size_t>(j)];
    common += gain_partition(model, central_gain, j) * ob[static_cast<std::size_t>(j)];
    local[static_cast<std::size_t>(j)] = aj.mask.asDiagonal() * (aj.gain * ob[static_cast<std::size_t>(j)]);
  }
  for (Index i = 0; i < n; ++i) {
    Vector block = common;
    for (Index j = 0; j < n; ++j)
      if (c(i, j) != 0.0) block -= c(i, j) * local[static_cast<std::size_t>(j)];
    r.res_delta += block.squaredNorm();
  }
  return r;
}

ResidualNorms residual_report(const StateSpaceModel& model, const RunTrace& trace, const CombinationMatrix<double>& c) {
  ResidualNorms mean;
  const Index steps = trace.steps();
  if (steps < 1) return mean;
  for (Index m = 0; m < steps; ++m) {
    const ResidualNorms r = residuals_at(model, trace, c, m);
    mean.res_f += r.res_f;
    mean.res_h += r.res_h;
    mean.res_ob += r.res_ob;
    mean.res_delta += r.res_delta;
    mean.mu_prime = std::max(mean.mu_prime, r.mu_prime);
  }
  const double s = static_cast<double>(steps);
  mean.res_f /= s;
  mean.res_h /= s;
  mean.res_ob /= s;
  mean.res_delta /= s;
  return mean;
}

std::vector<double> g_delta_sequence(const StateSpaceModel& model, const RunTrace& trace,
                                     const CombinationMatrix<double>& c, Index first, Index last) {
  if (first < 0 || last >= trace.steps() || first > last) throw ShapeMismatch("g_delta step range outside [0, T)");
  const Index n = model.num_agents();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  std::vector<Matrix> gains(static_cast<std::size_t>(n)), hs(static_cast<std::size_t>(n));
  std::vector<Vector> masks(static_cast<std::size_t>(n));
  for (Index m = first; m <= last; ++m) {
    const auto& now = trace.agents[static_cast<std::size_t>(m)];
    const auto& next = trace.agents[static_cast<std::size_t>(m + 1)];
    const Regressors& z = trace.regressors[static_cast<std::size_t>(m + 1)];
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      gains[k] = next[k].gain;
      masks[k] = next[k].mask;
      hs[k] = model.jacobian_h(i, model.project(now[k].estimate), z);
    }
    const Matrix a = model.jacobian_f(trace.central[static_cast<std::size_t>(m)].estimate);
    out.push_back(g_delta<double>(c.matrix(), gains, hs, a, masks));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_list(std::ostream& out, const char* key, const auto& values) {
  out << key << " =";
  for (const auto& v : values) out << ' ' << v;
  out << '\n';
}

}  // namespace

void write_report(std::ostream& out, const ConvergenceReport& r) {
  const auto precision = out.precision(12);
  out << "lemma1_radius = " << r.lemma1_radius << '\n';
  out << "theorem1_radius = " << r.theorem1_radius << '\n';
  out << "rho_c = " << r.rho_c << '\n';
  out << "theorem2_gamma_max = "
      << (r.theorem2_gammas.empty() ? 0.0 : *std::max_element(r.theorem2_gammas.begin(), r.theorem2_gammas.end()))
      << '\n';
  write_list(out, "theorem2_gammas", r.theorem2_gammas);
  write_list(out, "theorem3_products", r.theorem3_products);
  out << "theorem3_k = " << (r.theorem3_k ? std::to_string(*r.theorem3_k) : std::string("none")) << '\n';
  out << "reflection_in_window = " << (r.reflection_in_window ? "true" : "false") << '\n';
  out << "res_f = " << r.residuals.res_f << '\n';
  out << "res_h = " << r.residuals.res_h << '\n';
  out << "res_ob = " << r.residuals.res_ob << '\n';
  out << "res_delta = " << r.residuals.res_delta << '\n';
  out << "mu_prime = " << r.residuals.mu_prime << '\n';
  if (r.fit) {
    out << "fit_valid = " << (r.fit->valid ? "true" : "false") << '\n';
    out << "fit_eta = " << r.fit->eta << '\n';
    out << "fit_rho = " << r.fit->rho << '\n';
    out << "fit_nu = " << r.fit->nu << '\n';
    out << "fit_mu = " << r.fit->mu << '\n';
    out << "fit_residual = " << r.fit->residual << '\n';
    out << "fit_max_shortfall = " << r.fit->max_shortfall << '\n';
  } else {
    out << "fit_valid = false\n";
  }
  out.precision(precision);
}

void write_g_delta_csv(std::ostream& out, const ConvergenceReport& r) {
  const auto precision = out.precision(12);
  out << "step,g_delta\n";
  for (std::size_t k = 0; k < r.g_delta.size(); ++k)
    out << (k < r.g_steps.size() ? r.g_steps[k] : static_cast<Index>(k)) << ',' << r.g_delta[k] << '\n';
  out.precision(precision);
}

}  // namespace netfilt
