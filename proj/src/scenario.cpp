#include <netfilt/errors.hpp>
#include <netfilt/scenario.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace netfilt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw InvalidArgument("key '" + key + "': not a number: '" + text + "'");
  return value;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw InvalidArgument("key '" + key + "': expected true or false, got '" + text + "'");
}

template <typename Enum>
Enum parse_enum(const std::string& text, const std::string& key, std::initializer_list<std::pair<const char*, Enum>> options) {
  for (const auto& [name, value] : options)
    if (text == name) return value;
  std::string allowed;
  for (const auto& [name, value] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw InvalidArgument("key '" + key + "': '" + text + "' is not one of " + allowed);
}

struct Field {
  std::string key;
  std::function<std::string(const Scenario&)> get;
  std::function<void(Scenario&, const std::string&)> set;
  std::function<bool(const Scenario&)> relevant;
  bool required = false;
};

bool always(const Scenario&) { return true; }
bool is_tanh(const Scenario& s) { return s.model.kind == ModelKind::Tanh; }
bool is_box(const Scenario& s) { return s.model.kind == ModelKind::ParticleBox; }
bool is_linear(const Scenario& s) { return s.model.kind == ModelKind::ScalarLinear; }

#define NETFILT_INDEX_FIELD(KEY, MEMBER, WHEN)                                                       \
  Field {                                                                                           \
    KEY, [](const Scenario& s) { return std::to_string(s.MEMBER); },                                \
        [](Scenario& s, const std::string& v) { s.MEMBER = parse_number<Index>(v, KEY); }, WHEN      \
  }
#define NETFILT_DOUBLE_FIELD(KEY, MEMBER, WHEN)                                                     \
  Field {                                                                                           \
    KEY, [](const Scenario& s) { return format_double(s.MEMBER); },                                 \
        [](Scenario& s, const std::string& v) { s.MEMBER = parse_number<double>(v, KEY); }, WHEN     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> registry = [] {
    std::vector<Field> f;
    f.push_back({"version", [](const Scenario& s) { return std::to_string(s.version); },
                 [](Scenario& s, const std::string& v) {
                   s.version = parse_number<int>(v, "version");
                   if (s.version != kScenarioVersion)
                     throw InvalidArgument("unsupported scenario version " + v);
                 },
                 always, true});
    f.push_back({"seed", [](const Scenario& s) { return std::to_string(s.seed); },
                 [](Scenario& s, const std::string& v) { s.seed = parse_number<std::uint64_t>(v, "seed"); }, always,
                 true});

    f.push_back({"model.kind", [](const Scenario& s) { return to_string(s.model.kind); },
                 [](Scenario& s, const std::string& v) {
                   s.model.kind = parse_enum<ModelKind>(v, "model.kind",
                                                        {{"tanh", ModelKind::Tanh},
                                                         {"particle_box", ModelKind::ParticleBox},
                                                         {"scalar_linear", ModelKind::ScalarLinear}});
                 },
                 always, true});
    f.push_back(NETFILT_INDEX_FIELD("model.state_dim", model.state_dim, is_tanh));
    f.push_back(NETFILT_INDEX_FIELD("model.active_per_agent", model.active_per_agent, is_tanh));
    f.push_back(NETFILT_DOUBLE_FIELD("model.regressor_var", model.regressor_var, is_tanh));
    f.push_back(NETFILT_DOUBLE_FIELD("model.truth_scale", model.truth_scale, is_tanh));
    f.push_back(NETFILT_INDEX_FIELD("model.vertical_observer", model.vertical_observer, is_box));
    f.push_back(NETFILT_DOUBLE_FIELD("model.half_width", model.half_width, is_box));
    f.push_back(NETFILT_DOUBLE_FIELD("model.dt", model.dt, is_box));
    f.push_back(NETFILT_DOUBLE_FIELD("model.initial_position_var", model.initial_position_var, is_box));
    f.push_back(NETFILT_DOUBLE_FIELD("model.initial_speed_var", model.initial_speed_var, is_box));
    f.push_back(NETFILT_DOUBLE_FIELD("model.transition", model.transition, is_linear));
    f.push_back(NETFILT_DOUBLE_FIELD("model.prior_mean", model.prior_mean, is_linear));
    f.push_back(NETFILT_DOUBLE_FIELD("model.prior_var", model.prior_var, is_linear));
    f.push_back(NETFILT_DOUBLE_FIELD("model.process_var", model.process_var,
                                     [](const Scenario& s) { return !is_tanh(s); }));
    f.push_back(NETFILT_DOUBLE_FIELD("model.obs_var", model.obs_var, always));

    f.push_back({"network.source", [](const Scenario& s) { return to_string(s.network.source); },
                 [](Scenario& s, const std::string& v) {
                   s.network.source = parse_enum<TopologySource>(v, "network.source",
                                                                 {{"file", TopologySource::File},
                                                                  {"sm7", TopologySource::Sm7},
                                                                  {"complete", TopologySource::Complete},
                                                                  {"path", TopologySource::Path},
                                                                  {"star", TopologySource::Star}});
                 },
                 always, true});
    f.push_back({"network.file", [](const Scenario& s) { return s.network.file; },
                 [](Scenario& s, const std::string& v) { s.network.file = v; },
                 [](const Scenario& s) { return s.network.source == TopologySource::File; }});
    f.push_back(NETFILT_INDEX_FIELD("network.agents", network.agents, [](const Scenario& s) {
      return s.network.source != TopologySource::File && s.network.source != TopologySource::Sm7;
    }));
    f.push_back({"network.seed", [](const Scenario& s) { return std::to_string(s.network.seed); },
                 [](Scenario& s, const std::string& v) {
                   s.network.seed = parse_number<std::uint64_t>(v, "network.seed");
                 },
                 [](const Scenario& s) { return s.network.source == TopologySource::Sm7; }});
    f.push_back({"network.weights", [](const Scenario& s) { return to_string(s.network.weights); },
                 [](Scenario& s, const std::string& v) { s.network.weights = parse_weight_rule(v); }, always, true});

    f.push_back({"filter.gain", [](const Scenario& s) { return std::string(s.filter.gradient ? "gradient" : "ekf"); },
                 [](Scenario& s, const std::string& v) {
                   s.filter.gradient = parse_enum<bool>(v, "filter.gain", {{"gradient", true}, {"ekf", false}});
                 },
                 always, true});
    f.push_back(NETFILT_DOUBLE_FIELD("filter.zeta", filter.zeta, [](const Scenario& s) { return s.filter.gradient; }));
    f.push_back({"filter.masks", [](const Scenario& s) { return to_string(s.filter.masks); },
                 [](Scenario& s, const std::string& v) {
                   s.filter.masks = parse_enum<MaskMode>(v, "filter.masks",
                                                         {{"observable", MaskMode::Observable}, {"full", MaskMode::Full}});
                 },
                 always});
    f.push_back({"filter.matched", [](const Scenario& s) { return std::string(s.filter.matched ? "true" : "false"); },
                 [](Scenario& s, const std::string& v) { s.filter.matched = parse_bool(v, "filter.matched"); }, always});

    f.push_back(NETFILT_INDEX_FIELD("run.horizon", run.horizon, always));
    f.back().required = true;
    f.push_back(NETFILT_INDEX_FIELD("run.realisations", run.realisations, always));
    f.back().required = true;
    f.push_back(NETFILT_INDEX_FIELD("run.burn_in", run.burn_in, always));
    f.push_back(NETFILT_INDEX_FIELD("run.g_window", run.g_window, always));
    f.push_back(NETFILT_INDEX_FIELD("run.dump_trajectories", run.dump_trajectories, always));
    f.push_back(NETFILT_DOUBLE_FIELD("run.divergence_threshold", run.divergence_threshold, always));
    return f;
  }();
  return registry;
}

#undef NETFILT_INDEX_FIELD
#undef NETFILT_DOUBLE_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Tanh: return "tanh";
    case ModelKind::ParticleBox: return "particle_box";
    case ModelKind::ScalarLinear: return "scalar_linear";
  }
  return "?";
}

std::string to_string(TopologySource source) {
  switch (source) {
    case TopologySource::File: return "file";
    case TopologySource::Sm7: return "sm7";
    case TopologySource::Complete: return "complete";
    case TopologySource::Path: return "path";
    case TopologySource::Star: return "star";
  }
  return "?";
}

std::string to_string(WeightRule rule) { return rule == WeightRule::Uniform ? "uniform" : "metropolis"; }

std::string to_string(MaskMode mode) { return mode == MaskMode::Observable ? "observable" : "full"; }

WeightRule parse_weight_rule(const std::string& text) {
  return parse_enum<WeightRule>(text, "weights", {{"uniform", WeightRule::Uniform}, {"metropolis", WeightRule::Metropolis}});
}

std::vector<std::string> scenario_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

const std::vector<std::string>& sweepable_keys() {
  static const std::vector<std::string> keys{"filter.zeta", "run.horizon", "network.weights", "model.active_per_agent"};
  return keys;
}

void apply_override(Scenario& scenario, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw UnknownParameter("unknown scenario key '" + key + "'");
  f->set(scenario, value);
}

void apply_override(Scenario& scenario, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidArgument("override '" + assignment + "' is not of the form key=value");
  apply_override(scenario, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

Scenario parse_scenario(std::istream& in) {
  Scenario s;
  std::set<std::string> seen;
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "network" && section != "filter" && section != "run")
        throw FormatError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected 'key = value'", line_no);
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    const Field* f = find_field(key);
    if (f == nullptr) throw FormatError("unknown key '" + key + "'", line_no);
    if (!seen.insert(key).second) throw FormatError("duplicate key '" + key + "'", line_no);
    try {
      f->set(s, value);
    } catch (const Error& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  for (const auto& f : fields())
    if (f.required && !seen.contains(f.key)) throw FormatError("missing required key '" + f.key + "'");
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open scenario file '" + path + "'");
  try {
    Scenario s = parse_scenario(in);
    s.base_dir = std::filesystem::path(path).parent_path().string();
    return s;
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.detail(), e.line());
  }
}

void write_scenario(std::ostream& out, const Scenario& scenario) {
  std::string current;
  for (const auto& f : fields()) {
    if (!f.relevant(scenario)) continue;
    const auto dot = f.key.find('.');
    const std::string section = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (section != current) {
      out << "\n[" << section << "]\n";
      current = section;
    }
    out << name << " = " << f.get(scenario) << '\n';
  }
}

std::string to_string(const Scenario& scenario) {
  std::ostringstream out;
  write_scenario(out, scenario);
  return out.str();
}

}  // namespace netfilt
