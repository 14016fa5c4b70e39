#include <netfilt/cli.hpp>
#include <netfilt/harness.hpp>

#include <CLI11.hpp>
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace netfilt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "netfilt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Runs the installed tool and captures stdout.
std::string tool_output(const std::string& args) {
  const std::string command = std::string(NETFILT_TOOL) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string text;
  std::array<char, 512> buffer{};
  while (fgets(buffer.data(), static_cast<int>(buffer.size()), pipe) != nullptr) text += buffer.data();
  pclose(pipe);
  return text;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("netfilt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

const std::string kSource = NETFILT_SOURCE_DIR;

const std::string kSmallLinear =
    "version = 1\n"
    "seed = 4\n"
    "[model]\n"
    "kind = scalar_linear\n"
    "process_var = 0.04\n"
    "obs_var = 0.25\n"
    "[network]\n"
    "source = complete\n"
    "agents = 4\n"
    "weights = uniform\n"
    "[filter]\n"
    "gain = ekf\n"
    "masks = full\n"
    "matched = true\n"
    "[run]\n"
    "horizon = 25\n"
    "realisations = 5\n"
    "dump_trajectories = 2\n";

}  // namespace

TEST_CASE("help lists every registered option") {
  CliOptions options;
  const auto app = make_app(options);
  const std::string top = tool_output("--help");
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_name() == "--help") continue;
    CAPTURE(opt->get_name());
    CHECK(top.find(opt->get_name()) != std::string::npos);
  }
  for (const CLI::App* sub : app->get_subcommands({})) {
    CAPTURE(sub->get_name());
    CHECK(top.find(sub->get_name()) != std::string::npos);
    const std::string help = tool_output(sub->get_name() + " --help");
    for (const CLI::Option* opt : sub->get_options()) {
      CAPTURE(opt->get_name());
      CHECK(help.find(opt->get_name()) != std::string::npos);
      CHECK_FALSE(opt->get_description().empty());
    }
  }
  for (const char* flag : {"--out", "--seed", "--realisations", "--quiet"}) CHECK(top.find(flag) != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == kExitInvalid);
  CHECK(cli({"frobnicate"}).code == kExitInvalid);
  CHECK(cli({"run"}).code == kExitInvalid);
  CHECK(cli({"--realisations", "0", "run", "x.cfg"}).code == kExitInvalid);
  CHECK(cli({"--help"}).code == kExitOk);
  const Result missing = cli({"run", "/nonexistent/scenario.cfg"});
  CHECK(missing.code == kExitInvalid);
  CHECK(missing.err.find("error:") != std::string::npos);
  CHECK(missing.err.find("scenario.cfg") != std::string::npos);
}

TEST_CASE("scenario parse errors report the line") {
  const fs::path dir = scratch("bad");
  write_file(dir / "bad.cfg", "version = 1\nseed = 1\n[model]\nkind = scalar_linear\ncolour = blue\n");
  const Result r = cli({"run", (dir / "bad.cfg").string()});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("line 5") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("check-network on the bundled topology") {
  const Result r = cli({"check-network", kSource + "/scenarios/sm7_topology.txt", "--weights", "metropolis"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("agents: 120") != std::string::npos);
  CHECK(r.out.find("edges: 352") != std::string::npos);
  CHECK(r.out.find("primitive: yes") != std::string::npos);
  CHECK(r.out.find("result: PASS") != std::string::npos);
  CHECK(cli({"check-network", kSource + "/scenarios/sm7_topology.txt", "--weights", "uniform"}).code == kExitOk);
  CHECK(cli({"check-network", kSource + "/scenarios/sm7_topology.txt", "--weights", "laplace"}).code ==
        kExitInvalid);
}

TEST_CASE("check-network failures exit 1") {
  const fs::path dir = scratch("network");
  write_file(dir / "split.txt", "agents 4\nedge 0 1\nedge 2 3\n");
  const Result split = cli({"check-network", (dir / "split.txt").string()});
  CHECK(split.code == kExitCheckFailed);
  CHECK(split.out.find("disconnected") != std::string::npos);

  write_file(dir / "pair.txt", "agents 2\nedge 0 1\n");
  write_file(dir / "bad.csv", "# combination-matrix N=2\n0.5,0.6\n0.5,0.5\n");
  const Result rows =
      cli({"check-network", (dir / "pair.txt").string(), "--matrix", (dir / "bad.csv").string()});
  CHECK(rows.code == kExitCheckFailed);
  CHECK(rows.out.find("row-sum violation") != std::string::npos);
  CHECK(rows.out.find("result: FAIL") != std::string::npos);

  write_file(dir / "good.csv", "# combination-matrix N=2\n0.5,0.5\n0.5,0.5\n");
  CHECK(cli({"check-network", (dir / "pair.txt").string(), "--matrix", (dir / "good.csv").string()}).code ==
        kExitOk);
  fs::remove_all(dir);
}

TEST_CASE("run, analyze and sweep") {
  const fs::path dir = scratch("run");
  write_file(dir / "small.cfg", kSmallLinear);
  const fs::path out = dir / "out";
  const Result r = cli({"--out", out.string(), "run", (dir / "small.cfg").string(), "run.horizon=20"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("realisations: 5") != std::string::npos);
  std::ifstream summary(out / "summary.csv");
  std::string line;
  int lines = 0;
  while (std::getline(summary, line)) ++lines;
  CHECK(lines == 21);

  const Result quiet = cli({"run", (dir / "small.cfg").string(), "--quiet", "--seed", "9", "--realisations", "2"});
  CHECK(quiet.code == kExitOk);
  CHECK(quiet.out.empty());
  CHECK(fs::exists(dir / "small_results" / "summary.csv"));

  CHECK(cli({"run", (dir / "small.cfg").string(), "filter.bogus=1"}).code == kExitInvalid);

  const Result a = cli({"analyze", out.string(), "--burn-in", "2"});
  CHECK(a.code == kExitOk);
  CHECK(fs::exists(out / "analysis_report.txt"));
  CHECK(fs::exists(out / "analysis_discrepancy.csv"));
  CHECK(a.out.find("trajectories: 2") != std::string::npos);

  const fs::path empty = dir / "empty";
  fs::create_directories(empty);
  const Result none = cli({"analyze", empty.string()});
  CHECK(none.code == kExitInvalid);
  CHECK(none.err.find("trajectory") != std::string::npos);

  const fs::path sw = dir / "sweep";
  const Result s = cli({"--out", sw.string(), "--quiet", "sweep", (dir / "small.cfg").string(), "--param",
                        "run.horizon", "--values", "5,10"});
  CHECK(s.code == kExitOk);
  CHECK(fs::exists(sw / "sweep.csv"));
  CHECK(fs::exists(sw / "run.horizon_5" / "summary.csv"));
  CHECK(fs::exists(sw / "run.horizon_10" / "summary.csv"));
  CHECK(cli({"sweep", (dir / "small.cfg").string(), "--param", "model.obs_var", "--values", "1"}).code ==
        kExitInvalid);
  fs::remove_all(dir);
}

TEST_CASE("diverging runs exit 3") {
  const fs::path dir = scratch("diverge");
  write_file(dir / "small.cfg", kSmallLinear);
  const Result r = cli({"--quiet", "--out", (dir / "o").string(), "run", (dir / "small.cfg").string(),
                        "model.transition=4", "filter.matched=false", "filter.gain=gradient", "filter.zeta=0.01",
                        "run.divergence_threshold=1e4", "run.horizon=40"});
  CHECK(r.code == kExitDiverged);
  fs::remove_all(dir);
}
