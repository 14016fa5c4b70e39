#pragma once

#include <netfilt/types.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace netfilt {

enum class ModelKind { Tanh, ParticleBox, ScalarLinear };
enum class TopologySource { File, Sm7, Complete, Path, Star };
enum class WeightRule { Uniform, Metropolis };
enum class MaskMode { Observable, Full };

/// Everything needed to reproduce one Monte Carlo experiment.
struct Scenario {
  int version = 1;
  std::uint64_t seed = 0;

  struct Model {
    ModelKind kind = ModelKind::Tanh;
    // tanh regression
    Index state_dim = 5;
    Index active_per_agent = 2;
    double regressor_var = 1.0;
    double truth_scale = 1.0;
    // particle in the box
    Index vertical_observer = 0;
    double half_width = 10.0;
    double dt = 0.04;
    double initial_position_var = 4.0;
    double initial_speed_var = 1.0;
    // scalar linear
    double transition = 0.9;
    double prior_mean = 0.0;
    double prior_var = 1.0;
    // shared
    double process_var = 0.04;
    double obs_var = 0.01;

    friend bool operator==(const Model&, const Model&) = default;
  } model;

  struct Network {
    TopologySource source = TopologySource::Sm7;
    std::string file;  // relative paths resolve against the scenario file's directory
    Index agents = 120;
    std::uint64_t seed = 42;
    WeightRule weights = WeightRule::Metropolis;

    friend bool operator==(const Network&, const Network&) = default;
  } network;

  struct Filter {
    bool gradient = true;  // false: extended Kalman
    double zeta = 0.1;
    MaskMode masks = MaskMode::Observable;
    bool matched = false;

    friend bool operator==(const Filter&, const Filter&) = default;
  } filter;

  struct Run {
    Index horizon = 300;
    Index realisations = 2000;
    Index burn_in = 0;
    Index g_window = 0;            // 0: graph diameter + 1
    Index dump_trajectories = 0;   // realisations written as trajectory CSVs
    double divergence_threshold = 1e12;

    friend bool operator==(const Run&, const Run&) = default;
  } run;

  /// Directory that relative file references resolve against; not serialised.
  std::string base_dir;

  friend bool operator==(const Scenario& a, const Scenario& b) {
    return a.version == b.version && a.seed == b.seed && a.model == b.model && a.network == b.network &&
           a.filter == b.filter && a.run == b.run;
  }
};

inline constexpr int kScenarioVersion = 1;

/// INI-style text: top-level `version` and `seed`, then [model], [network], [filter], [run]
/// sections of `key = value` lines. Unknown keys, missing required keys and unsupported
/// versions raise FormatError with the offending line.
Scenario parse_scenario(std::istream& in);
Scenario load_scenario(const std::string& path);
void write_scenario(std::ostream& out, const Scenario& scenario);
std::string to_string(const Scenario& scenario);

/// Applies a dotted `section.key=value` override (`seed=...` for the top level).
void apply_override(Scenario& scenario, const std::string& assignment);
void apply_override(Scenario& scenario, const std::string& key, const std::string& value);

/// Every dotted key the format knows, in serialisation order.
std::vector<std::string> scenario_keys();

/// Keys accepted by `sweep`.
const std::vector<std::string>& sweepable_keys();

std::string to_string(ModelKind kind);
std::string to_string(TopologySource source);
std::string to_string(WeightRule rule);
std::string to_string(MaskMode mode);

WeightRule parse_weight_rule(const std::string& text);

}  // namespace netfilt
