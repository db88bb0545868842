#include <cstdlib>
#include <sstream>

#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

#include "cdfsl/cli.hpp"
#include "cdfsl/eval.hpp"
#include "test_support.hpp"

using namespace cdfsl;
using cdfsl::testing::slurp;
using cdfsl::testing::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string synth_into(const TempDir& dir, const std::string& name, const std::vector<std::string>& extra = {}) {
  const std::string path = (dir / name).string();
  std::vector<std::string> args{"synth", "--classes", "10", "--per-class", "30", "--dim", "16", "--separation", "4.0",
                                "--sigma", "1.0", "--seed", "7", "--out", path};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return path;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("evaluate happy path prints one formatted line") {
    TempDir dir("cli_happy");
    const auto data = synth_into(dir, "d");
    const auto r = cli({"evaluate", "--dataset", data, "--method", "mean-centroid", "--ways", "5", "--shots", "5",
                        "--queries", "15", "--episodes", "60", "--seed", "42"});
    CHECK(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
    CHECK(r.out.find("% ± ") != std::string::npos);
  }

  TEST_CASE("ims without a library is a configuration error") {
    TempDir dir("cli_ims");
    const auto data = synth_into(dir, "d");
    const auto r = cli({"evaluate", "--dataset", data, "--method", "ims", "--shots", "5"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--library") != std::string::npos);
  }

  TEST_CASE("synth is byte-reproducible") {
    TempDir dir("cli_synth");
    const auto a = synth_into(dir, "a");
    const auto b = synth_into(dir, "b");
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(a)) names.push_back(entry.path().filename().string());
    REQUIRE(names.size() >= 3);
    for (const auto& n : names) {
      CAPTURE(n);
      const auto left = slurp(std::filesystem::path(a) / n);
      const auto right = slurp(std::filesystem::path(b) / n);
      CHECK(left == right);
    }
  }

  TEST_CASE("usage errors exit 2") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"evaluate", "--bogus"}).code == 2);
    CHECK(cli({"evaluate", "--method", "linear"}).code == 2);  // missing --shots and --dataset
    CHECK(cli({"evaluate", "--help"}).code == 0);
  }

  TEST_CASE("data errors exit 3") {
    const auto r = cli({"evaluate", "--dataset", "/nonexistent/dir", "--method", "linear", "--shots", "1"});
    CHECK(r.code == 3);
    TempDir dir("cli_infeasible");
    const auto data = synth_into(dir, "d");
    CHECK(cli({"evaluate", "--dataset", data, "--method", "linear", "--ways", "11", "--shots", "1", "--episodes", "2"})
              .code == 3);
  }

  TEST_CASE("report file and thread invariance") {
    TempDir dir("cli_report");
    const auto data = synth_into(dir, "d");
    const auto run = [&](const std::string& threads, const std::string& name) {
      const auto r = cli({"evaluate", "--dataset", data, "--method", "linear", "--shots", "5", "--episodes", "12",
                          "--seed", "3", "--threads", threads, "--output", (dir / name).string()});
      REQUIRE(r.code == 0);
      return slurp(dir / name);
    };
    const auto one = run("1", "one.json");
    CHECK(one == run("1", "again.json"));
    CHECK(one == run("8", "eight.json"));
    const auto report = read_report(dir / "one.json");
    CHECK(report.episodes.master_seed == 3);
    CHECK(report.per_episode_accuracy.size() == 12);
  }

  TEST_CASE("FSL_SEED supplies the default master seed") {
    TempDir dir("cli_env");
    const auto data = synth_into(dir, "d");
    const std::vector<std::string> base{"evaluate", "--dataset", data, "--method", "proto", "--shots", "1",
                                        "--episodes", "3"};
    {
      ScopedEnv env("FSL_SEED", "99");
      auto args = base;
      args.insert(args.end(), {"--output", (dir / "env.json").string()});
      REQUIRE(cli(args).code == 0);
      args = base;
      args.insert(args.end(), {"--seed", "5", "--output", (dir / "flag.json").string()});
      REQUIRE(cli(args).code == 0);
    }
    CHECK(read_report(dir / "env.json").episodes.master_seed == 99);
    CHECK(read_report(dir / "flag.json").episodes.master_seed == 5);
  }

  TEST_CASE("configuration files mirror flag names") {
    TempDir dir("cli_config");
    const auto data = synth_into(dir, "d");
    std::ofstream(dir / "run.toml") << "dataset = \"" << data << "\"\nmethod = \"matching\"\nshots = 2\nepisodes = 4\n"
                                    << "seed = 8\n";
    auto r = cli({"evaluate", "--config", (dir / "run.toml").string(), "--output", (dir / "t.json").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    auto report = read_report(dir / "t.json");
    CHECK(report.method.kind == MethodKind::matching);
    CHECK(report.episodes.shots == 2);
    CHECK(report.episodes.master_seed == 8);

    const nlohmann::json j = {{"dataset", data}, {"method", "cosine"}, {"shots", 3}, {"episodes", 2}, {"epochs", 7}};
    std::ofstream(dir / "run.json") << j.dump();
    r = cli({"evaluate", "--config", (dir / "run.json").string(), "--episodes", "5", "--output",
             (dir / "j.json").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    report = read_report(dir / "j.json");
    CHECK(report.method.kind == MethodKind::cosine);
    CHECK(report.method.train.epochs == 7);
    CHECK(report.episodes.episodes == 5);  // flag wins over file
  }

  TEST_CASE("multi-layer synth, inspect and ims-trace") {
    TempDir dir("cli_trace");
    const auto lib = synth_into(dir, "lib", {"--layers", "good:0:pure-noise:8,good:1:informative,noise:0:pure-noise:8"});
    auto r = cli({"inspect", "--dataset", lib});
    CHECK(r.code == 0);
    CHECK(r.out.find("good") != std::string::npos);
    r = cli({"ims-trace", "--library", lib, "--shots", "5", "--episodes", "3", "--seed", "1"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::istringstream lines(r.out);
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
      const auto doc = nlohmann::json::parse(line);
      CHECK(doc.contains("stage1"));
      CHECK(doc.contains("stage2"));
      CHECK(doc["stage1"].contains("good"));
      ++count;
    }
    CHECK(count == 3);
    r = cli({"evaluate", "--library", lib, "--method", "ims", "--shots", "5", "--episodes", "3"});
    CHECK(r.code == 0);
  }

  TEST_CASE("installed binary reports exit codes") {
    const std::string bin = CDFSL_CLI_PATH;
    const int ok = std::system((bin + " evaluate --help > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(ok) == 0);
    const int bad = std::system((bin + " evaluate --no-such-flag > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(bad) == 2);
  }
}
