#include <netfilt/network.hpp>
#include <netfilt/random.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

namespace netfilt {

namespace {

std::vector<Index> bfs_depths(const std::vector<std::vector<Index>>& hoods, Index source) {
  std::vector<Index> depth(hoods.size(), -1);
  std::queue<Index> frontier;
  depth[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    const Index u = frontier.front();
    frontier.pop();
    for (Index v : hoods[u]) {
      if (depth[v] < 0) {
        depth[v] = depth[u] + 1;
        frontier.push(v);
      }
    }
  }
  return depth;
}

void check_agent(const NetworkTopology& t, Index agent) {
  if (agent < 0 || agent >= t.num_agents())
    throw IndexOutOfRange("agent " + std::to_string(agent) + " out of range [0, " +
                          std::to_string(t.num_agents()) + ")");
}

}  // namespace

const std::vector<Index>& NetworkTopology::neighborhood(Index agent) const {
  check_agent(*this, agent);
  return neighborhoods_[agent];
}

bool NetworkTopology::adjacent(Index a, Index b) const {
  const auto& hood = neighborhood(a);
  check_agent(*this, b);
  return std::binary_search(hood.begin(), hood.end(), b);
}

NetworkTopology build_topology(std::span<const Edge> edges, Index num_agents) {
  if (num_agents < 1) throw InvalidArgument("a topology needs at least one agent");
  NetworkTopology t;
  t.neighborhoods_.resize(num_agents);
  for (Index i = 0; i < num_agents; ++i) t.neighborhoods_[i].push_back(i);
  for (auto [a, b] : edges) {
    if (a < 0 || a >= num_agents || b < 0 || b >= num_agents)
      throw IndexOutOfRange("edge (" + std::to_string(a) + ", " + std::to_string(b) + ") references an agent outside [0, " +
                            std::to_string(num_agents) + ")");
    if (a == b) throw InvalidArgument("self-loop on agent " + std::to_string(a));
    t.edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(t.edges_.begin(), t.edges_.end());
  t.edges_.erase(std::unique(t.edges_.begin(), t.edges_.end()), t.edges_.end());
  for (auto [a, b] : t.edges_) {
    t.neighborhoods_[a].push_back(b);
    t.neighborhoods_[b].push_back(a);
  }
  for (auto& hood : t.neighborhoods_) std::sort(hood.begin(), hood.end());

  const auto depth = bfs_depths(t.neighborhoods_, 0);
  const auto unreachable = std::find(depth.begin(), depth.end(), Index{-1});
  if (unreachable != depth.end())
    throw DisconnectedGraph("topology is disconnected: agent " +
                            std::to_string(std::distance(depth.begin(), unreachable)) + " is unreachable from agent 0");
  return t;
}

NetworkTopology complete_topology(Index num_agents) {
  std::vector<Edge> edges;
  for (Index i = 0; i < num_agents; ++i)
    for (Index j = i + 1; j < num_agents; ++j) edges.emplace_back(i, j);
  return build_topology(edges, num_agents);
}

NetworkTopology path_topology(Index num_agents) {
  std::vector<Edge> edges;
  for (Index i = 0; i + 1 < num_agents; ++i) edges.emplace_back(i, i + 1);
  return build_topology(edges, num_agents);
}

NetworkTopology star_topology(Index num_agents) {
  std::vector<Edge> edges;
  for (Index i = 1; i < num_agents; ++i) edges.emplace_back(0, i);
  return build_topology(edges, num_agents);
}

NetworkTopology generate_geometric_topology(Index num_agents, Index num_edges, std::uint64_t seed,
                                            int max_attempts) {
  const Index max_pairs = num_agents * (num_agents - 1) / 2;
  if (num_agents < 1 || num_edges < num_agents - 1 || num_edges > max_pairs)
    throw InvalidArgument("cannot place " + std::to_string(num_edges) + " edges on " +
                          std::to_string(num_agents) + " agents as a connected simple graph");
  Rng rng(seed);
  struct Pair {
    double dist2;
    Index a, b;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(max_pairs));
  std::vector<double> xs(num_agents), ys(num_agents);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    for (Index i = 0; i < num_agents; ++i) {
      xs[i] = uniform01(rng);
      ys[i] = uniform01(rng);
    }
    pairs.clear();
    for (Index i = 0; i < num_agents; ++i)
      for (Index j = i + 1; j < num_agents; ++j) {
        const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
        pairs.push_back({dx * dx + dy * dy, i, j});
      }
    // Radius strictly between the num_edges-th and (num_edges+1)-th shortest pair.
    std::nth_element(pairs.begin(), pairs.begin() + num_edges, pairs.end(),
                     [](const Pair& l, const Pair& r) { return l.dist2 < r.dist2; });
    if (num_edges < max_pairs) {
      const double cut = pairs[num_edges].dist2;
      const bool tie = std::any_of(pairs.begin(), pairs.begin() + num_edges,
                                   [cut](const Pair& p) { return p.dist2 == cut; });
      if (tie) continue;
    }
    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(num_edges));
    for (Index e = 0; e < num_edges; ++e) edges.emplace_back(pairs[e].a, pairs[e].b);
    try {
      return build_topology(edges, num_agents);
    } catch (const DisconnectedGraph&) {
    }
  }
  throw GenerationFailed("no connected geometric graph found after " + std::to_string(max_attempts) + " attempts");
}

NetworkTopology generate_topology_sm7(std::uint64_t seed) {
  return generate_geometric_topology(kSm7Agents, kSm7Edges, seed);
}

std::vector<Index> k_hop_neighborhood(const NetworkTopology& topology, Index agent, Index k) {
  check_agent(topology, agent);
  if (k < 0) throw InvalidArgument("hop count must be nonnegative");
  std::vector<Index> depth(topology.num_agents(), -1);
  std::vector<Index> frontier{agent}, reached{agent};
  depth[agent] = 0;
  for (Index hop = 1; hop <= k && !frontier.empty(); ++hop) {
    std::vector<Index> next;
    for (Index u : frontier)
      for (Index v : topology.neighborhood(u))
        if (depth[v] < 0) {
          depth[v] = hop;
          next.push_back(v);
          reached.push_back(v);
        }
    frontier = std::move(next);
  }
  std::sort(reached.begin(), reached.end());
  return reached;
}

Index diameter(const NetworkTopology& topology) {
  std::vector<std::vector<Index>> hoods(topology.num_agents());
  for (Index i = 0; i < topology.num_agents(); ++i) hoods[i] = topology.neighborhood(i);
  Index best = 0;
  for (Index i = 0; i < topology.num_agents(); ++i) {
    const auto depth = bfs_depths(hoods, i);
    best = std::max(best, *std::max_element(depth.begin(), depth.end()));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Files

TopologyFile read_topology_file(std::istream& in) {
  TopologyFile file;
  bool have_header = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string keyword;
    if (!(fields >> keyword)) continue;
    if (keyword == "agents") {
      if (have_header) throw FormatError("duplicate 'agents' line", line_no);
      if (!(fields >> file.num_agents) || file.num_agents < 1)
        throw FormatError("expected 'agents <N>' with N >= 1", line_no);
      have_header = true;
    } else if (keyword == "edge") {
      if (!have_header) throw FormatError("'edge' before 'agents' line", line_no);
      Edge e;
      if (!(fields >> e.first >> e.second)) throw FormatError("expected 'edge <i> <j>'", line_no);
      file.edges.push_back(e);
    } else {
      throw FormatError("unknown keyword '" + keyword + "'", line_no);
    }
    std::string extra;
    if (fields >> extra) throw FormatError("trailing token '" + extra + "'", line_no);
  }
  if (!have_header) throw FormatError("missing 'agents <N>' line");
  return file;
}

TopologyFile read_topology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open topology file '" + path + "'");
  return read_topology_file(in);
}

void write_topology(std::ostream& out, const NetworkTopology& topology) {
  out << "agents " << topology.num_agents() << '\n';
  for (auto [a, b] : topology.edges()) out << "edge " << a << ' ' << b << '\n';
}

void write_combination_csv(std::ostream& out, const Matrix& c) {
  out << "# combination-matrix N=" << c.rows() << '\n';
  out << std::setprecision(17);
  for (Index i = 0; i < c.rows(); ++i) {
    for (Index j = 0; j < c.cols(); ++j) {
      if (j) out << ',';
      out << c(i, j);
    }
    out << '\n';
  }
}

Matrix read_combination_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw FormatError("empty combination matrix file");
  const std::string prefix = "# combination-matrix N=";
  if (line.rfind(prefix, 0) != 0) throw FormatError("expected header '" + prefix + "<N>'", line_no);
  Index n = 0;
  try {
    n = std::stol(line.substr(prefix.size()));
  } catch (const std::exception&) {
    throw FormatError("bad matrix size in header", line_no);
  }
  if (n < 1) throw FormatError("matrix size must be positive", line_no);
  Matrix c(n, n);
  for (Index i = 0; i < n; ++i) {
    ++line_no;
    if (!std::getline(in, line)) throw FormatError("expected " + std::to_string(n) + " rows", line_no);
    std::istringstream row(line);
    std::string cell;
    Index j = 0;
    while (std::getline(row, cell, ',')) {
      if (j >= n) throw FormatError("too many columns", line_no);
      try {
        std::size_t used = 0;
        c(i, j) = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw FormatError("not a number: '" + cell + "'", line_no);
      }
      ++j;
    }
    if (j != n) throw FormatError("expected " + std::to_string(n) + " columns", line_no);
  }
  return c;
}

Matrix read_combination_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open matrix file '" + path + "'");
  return read_combination_csv(in);
}

}  // namespace netfilt
