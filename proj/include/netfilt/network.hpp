#pragma once

#include <netfilt/errors.hpp>
#include <netfilt/types.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace netfilt {

/// Static, undirected, connected agent graph. Every neighbourhood contains its own agent.
class NetworkTopology {
 public:
  Index num_agents() const noexcept { return static_cast<Index>(neighborhoods_.size()); }

  /// Sorted member list of the closed neighbourhood of `agent` (includes `agent`).
  const std::vector<Index>& neighborhood(Index agent) const;

  /// Number of neighbours excluding the agent itself.
  Index degree(Index agent) const { return static_cast<Index>(neighborhood(agent).size()) - 1; }

  bool adjacent(Index a, Index b) const;

  /// Unique undirected edges, first < second, lexicographically sorted.
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  friend bool operator==(const NetworkTopology&, const NetworkTopology&) = default;

 private:
  friend NetworkTopology build_topology(std::span<const Edge> edges, Index num_agents);

  std::vector<std::vector<Index>> neighborhoods_;
  std::vector<Edge> edges_;
};

/// Symmetric closure of `edges` over `num_agents` agents.
/// Throws IndexOutOfRange for bad indices, InvalidArgument for self-loops,
/// DisconnectedGraph when some agent is unreachable.
NetworkTopology build_topology(std::span<const Edge> edges, Index num_agents);

NetworkTopology complete_topology(Index num_agents);
NetworkTopology path_topology(Index num_agents);
NetworkTopology star_topology(Index num_agents);

/// Random geometric graph in the unit square with exactly `num_edges` edges: the
/// connection radius is placed between the num_edges-th and next-shortest pair
/// distance. Positions are resampled until the graph is connected.
NetworkTopology generate_geometric_topology(Index num_agents, Index num_edges, std::uint64_t seed,
                                            int max_attempts = 10000);

/// The 120-agent, 352-edge network used by the bundled experiments.
NetworkTopology generate_topology_sm7(std::uint64_t seed);

inline constexpr Index kSm7Agents = 120;
inline constexpr Index kSm7Edges = 352;

/// Agents reachable from `agent` in at most `k` hops, sorted.
std::vector<Index> k_hop_neighborhood(const NetworkTopology& topology, Index agent, Index k);

/// Longest shortest path (in hops).
Index diameter(const NetworkTopology& topology);

/// Reads the `agents <N>` / `edge <i> <j>` text format. Connectivity is NOT enforced here.
struct TopologyFile {
  Index num_agents = 0;
  std::vector<Edge> edges;
};
TopologyFile read_topology_file(std::istream& in);
TopologyFile read_topology_file(const std::string& path);
void write_topology(std::ostream& out, const NetworkTopology& topology);

// ---------------------------------------------------------------------------
// Combination matrices

/// Spectral radius of a dense square matrix via a full eigen-decomposition.
template <typename Derived>
typename Derived::RealScalar spectral_radius(const Eigen::MatrixBase<Derived>& m) {
  using Real = typename Derived::RealScalar;
  if (m.rows() != m.cols()) throw DimensionMismatch("spectral_radius: matrix is not square");
  if (m.rows() == 0) return Real(0);
  Eigen::EigenSolver<MatrixX<Real>> solver(m.template cast<Real>().eval(), false);
  if (solver.info() != Eigen::Success) throw EigenSolverFailure("eigenvalue iteration did not converge");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Primitivity of a nonnegative square matrix: some power is entrywise positive.
/// Uses repeated squaring of the sparsity pattern up to an exponent >= n^2, with early exit.
template <typename Derived>
bool is_primitive(const Eigen::MatrixBase<Derived>& m) {
  const Index n = m.rows();
  if (n == 0 || m.cols() != n) return false;
  MatrixX<double> pattern = (m.array() > 0).template cast<double>();
  const long long target = static_cast<long long>(n) * n;
  for (long long exponent = 1;; exponent *= 2) {
    if ((pattern.array() > 0).all()) return true;
    if (exponent >= target) return false;
    pattern = ((pattern * pattern).array() > 0).template cast<double>();
  }
}

/// Row-stochastic fusion weights respecting a topology.
template <typename Scalar = double>
class CombinationMatrix {
 public:
  using Matrix = MatrixX<Scalar>;

  CombinationMatrix() = default;

  /// Validating constructor; throws InvalidCombinationMatrix when the weights break
  /// row-stochasticity (1e-12), the neighbourhood support, nonnegativity or primitivity.
  CombinationMatrix(const NetworkTopology& topology, Matrix entries);

  const Matrix& matrix() const noexcept { return entries_; }
  Index size() const noexcept { return entries_.rows(); }
  Scalar operator()(Index i, Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

/// c_ij = 1/|N_i| on the closed neighbourhood.
template <typename Scalar = double>
CombinationMatrix<Scalar> uniform_weights(const NetworkTopology& topology) {
  const Index n = topology.num_agents();
  MatrixX<Scalar> c = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto& hood = topology.neighborhood(i);
    const Scalar w = Scalar(1) / static_cast<Scalar>(hood.size());
    for (Index j : hood) c(i, j) = w;
  }
  return CombinationMatrix<Scalar>(topology, std::move(c));
}

/// Metropolis rule: symmetric and doubly stochastic.
template <typename Scalar = double>
CombinationMatrix<Scalar> metropolis_weights(const NetworkTopology& topology) {
  const Index n = topology.num_agents();
  MatrixX<Scalar> c = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    Scalar off = 0;
    for (Index j : topology.neighborhood(i)) {
      if (j == i) continue;
      c(i, j) = Scalar(1) / static_cast<Scalar>(1 + std::max(topology.degree(i), topology.degree(j)));
      off += c(i, j);
    }
    c(i, i) = Scalar(1) - off;
  }
  return CombinationMatrix<Scalar>(topology, std::move(c));
}

/// 11^T/N - C; consensus needs its spectral radius below 1.
template <typename Derived>
MatrixX<typename Derived::Scalar> consensus_gap_matrix(const Eigen::MatrixBase<Derived>& c) {
  using S = typename Derived::Scalar;
  const Index n = c.rows();
  return MatrixX<S>::Constant(n, n, S(1) / static_cast<S>(n)) - c;
}

/// Outcome of checking a candidate weight matrix against a topology.
struct Assumption3Report {
  bool connected = true;
  bool square = true;
  double row_sum_max_error = 0;
  bool rows_stochastic = false;
  bool respects_support = false;
  bool nonnegative = false;
  bool primitive = false;
  double rho_lemma1 = 0;

  bool passed() const noexcept {
    return connected && square && rows_stochastic && respects_support && nonnegative && primitive &&
           rho_lemma1 < 1.0;
  }
};

inline constexpr double kRowSumTolerance = 1e-12;

/// kRowSumTolerance, widened for scalars coarser than double.
template <typename Scalar>
constexpr double row_sum_tolerance() {
  return std::max(kRowSumTolerance, 64.0 * static_cast<double>(std::numeric_limits<Scalar>::epsilon()));
}

template <typename Derived>
Assumption3Report assess_combination(const NetworkTopology& topology, const Eigen::MatrixBase<Derived>& c) {
  Assumption3Report r;
  const Index n = topology.num_agents();
  if (c.rows() != n || c.cols() != n) {
    r.square = false;
    return r;
  }
  const auto m = c.template cast<double>().eval();
  r.row_sum_max_error = (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
  r.rows_stochastic = r.row_sum_max_error <= row_sum_tolerance<typename Derived::Scalar>();
  r.nonnegative = (m.array() >= 0).all();
  r.respects_support = true;
  for (Index i = 0; i < n && r.respects_support; ++i)
    for (Index j = 0; j < n; ++j)
      if (m(i, j) != 0 && !topology.adjacent(i, j)) {
        r.respects_support = false;
        break;
      }
  r.primitive = r.nonnegative && is_primitive(m);
  r.rho_lemma1 = spectral_radius(consensus_gap_matrix(m));
  return r;
}

template <typename Scalar>
CombinationMatrix<Scalar>::CombinationMatrix(const NetworkTopology& topology, Matrix entries)
    : entries_(std::move(entries)) {
  const Assumption3Report r = assess_combination(topology, entries_);
  if (!r.square) throw InvalidCombinationMatrix("combination matrix shape does not match topology");
  if (!r.rows_stochastic)
    throw InvalidCombinationMatrix("row sums deviate from 1 by " + std::to_string(r.row_sum_max_error));
  if (!r.respects_support) throw InvalidCombinationMatrix("nonzero weight outside a neighbourhood");
  if (!r.nonnegative) throw InvalidCombinationMatrix("negative weight");
  if (!r.primitive) throw InvalidCombinationMatrix("combination matrix is not primitive");
}

struct SpectralReport {
  double rho_lemma1 = 0;
  bool is_primitive = false;
  double row_sum_max_error = 0;
};

template <typename Scalar>
SpectralReport spectral_report(const CombinationMatrix<Scalar>& c) {
  const auto m = c.matrix().template cast<double>().eval();
  SpectralReport r;
  r.rho_lemma1 = spectral_radius(consensus_gap_matrix(m));
  r.is_primitive = is_primitive(m);
  r.row_sum_max_error = (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
  return r;
}

/// CSV export: header `# combination-matrix N=<N>`, then one comma-separated row per agent.
void write_combination_csv(std::ostream& out, const Matrix& c);
Matrix read_combination_csv(std::istream& in);
Matrix read_combination_csv(const std::string& path);

}  // namespace netfilt
