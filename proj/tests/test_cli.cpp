#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "survgrad/error.hpp"
#include "survgrad/experiment.hpp"
#include "test_support.hpp"

using namespace survgrad;
using namespace survgrad::testing;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SURVGRAD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small end-to-end configuration: a 300-row time-independent design.
ConfigMap small_settings(const fs::path& out) {
  return {{"preset", "time_independent"},
          {"design.n", "300"},
          {"design.test_n", "60"},
          {"out", out.string()},
          {"train.hidden", "8,8"},
          {"train.max_epochs", "3"},
          {"train.coxtime_knots", "16"},
          {"train.deephit_bins", "8"},
          {"explain.methods", "intgrad,gradshap,survlime"},
          {"explain.instances", "0,3"},
          {"explain.plots", "relevance_curves,contribution,force"},
          {"explain.grid_size", "20"},
          {"explain.background", "10"},
          {"explain.n_int", "4"},
          {"explain.intgrad_steps", "8"},
          {"explain.lime_neighbors", "50"}};
}

}  // namespace

TEST_CASE("key-value config parsing") {
  const ConfigMap m = parse_config_text("# comment\npreset = time_dependent\n\n  train.hidden = 32, 32  # trailing\nseed=4\n");
  CHECK(m.at("preset") == "time_dependent");
  CHECK(m.at("train.hidden") == "32, 32");
  CHECK(m.at("seed") == "4");
  CHECK_THROWS_AS(parse_config_text("no equals sign here\n"), ConfigError);
  CHECK(parse_assignment("a.b=1=2") == std::pair<std::string, std::string>{"a.b", "1=2"});
  CHECK_THROWS_AS(parse_assignment("missing"), ConfigError);
}

TEST_CASE("json config flattens to dotted keys") {
  const auto doc = nlohmann::json::parse(R"({"seed": 3, "train": {"hidden": [16, 8], "dropout": 0.1},
                                            "explain": {"methods": ["grad", "gradshap"]}})");
  const ConfigMap m = parse_config_json(doc);
  CHECK(m.at("seed") == "3");
  CHECK(m.at("train.hidden") == "16,8");
  CHECK(m.at("explain.methods") == "grad,gradshap");
  const ExperimentConfig cfg = ExperimentConfig::from_map(m);
  CHECK(cfg.seed == 3);
  CHECK(cfg.train.hidden == std::vector<std::size_t>{16, 8});
  CHECK(cfg.train.dropout == doctest::Approx(0.1));
  CHECK(cfg.explain.methods == std::vector<std::string>{"grad", "gradshap"});

  TempDir dir("cfg");
  {
    std::ofstream(dir.path() / "c.json") << doc.dump();
    std::ofstream(dir.path() / "c.txt") << "seed = 3\ntrain.hidden = 16,8\n";
  }
  CHECK(load_config_file(dir.path() / "c.json").at("train.hidden") == "16,8");
  CHECK(load_config_file(dir.path() / "c.txt").at("seed") == "3");
  CHECK_THROWS_AS(load_config_file(dir.path() / "absent.txt"), IoError);
}

TEST_CASE("experiment configs reject unknown keys and bad values") {
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"train.hiden", "8"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"seed", "minus one"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"preset", "nope"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"models", "deepsurv,randomforest"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"explain.methods", "lrp"}}), ConfigError);
  // Force plots need a difference-to-reference method.
  CHECK_THROWS_AS(ExperimentConfig::from_map({{"explain.methods", "grad"}, {"explain.plots", "force"}}), ConfigError);

  const ExperimentConfig d = ExperimentConfig::from_map({{"preset", "time_dependent"}, {"design.n", "500"}, {"design.test_n", "100"}});
  CHECK(d.design.n == 500);
  CHECK(d.design.tve_coeff == 6.0);
  CHECK(d.to_json().at("design").at("n") == 500);
}

TEST_CASE("simulate, train, explain and report run end to end") {
  TempDir dir("e2e");
  const ExperimentConfig cfg = ExperimentConfig::from_map(small_settings(dir.path()));
  cfg.validate();
  std::ostringstream log;
  cmd_simulate(cfg, log);
  REQUIRE(fs::exists(dir.path() / "dataset.csv"));
  REQUIRE(fs::exists(dir.path() / "design.json"));
  CHECK(read_dataset_csv(dir.path() / "dataset.csv").size() == 300);

  cmd_train(cfg, log);
  for (const char* m : {"deepsurv", "coxtime", "deephit"}) {
    CHECK(fs::exists(dir.path() / (std::string("model_") + m + ".json")));
    const auto metrics = nlohmann::json::parse(read_file(dir.path() / (std::string("metrics_") + m + ".json")));
    CHECK(metrics.at("c_index").get<double>() > 0.0);
  }
  CHECK(read_dataset_csv(dir.path() / "test.csv").size() == 60);

  cmd_explain(cfg, log);
  const fs::path ex = dir.path() / "explain";
  CHECK(fs::exists(ex / "deepsurv_gradshap.json"));
  CHECK(fs::exists(ex / "deephit_intgrad.csv"));
  CHECK(fs::exists(ex / "coxtime_survlime.json"));
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(ex)) svgs += e.path().extension() == ".svg";
  // 3 models x 2 instances x 2 plotted methods x 3 kinds; survlime has no plots.
  CHECK(svgs == 3 * 2 * 2 * 3);
  CHECK(read_attribution_json(ex / "deepsurv_gradshap.json").instance_ids == std::vector<std::size_t>{0, 3});

  cmd_report(cfg, log);
  const std::string report = read_file(dir.path() / "report.md");
  CHECK(report.find("## Models") != std::string::npos);
  CHECK(report.find("deephit") != std::string::npos);
  CHECK(report.find(".svg") != std::string::npos);
  CHECK(report == build_report(dir.path()));

  // Same seed, same non-timing artifacts.
  TempDir again("e2e_again");
  ConfigMap s = small_settings(again.path());
  const ExperimentConfig cfg2 = ExperimentConfig::from_map(s);
  cmd_simulate(cfg2, log);
  cmd_train(cfg2, log);
  CHECK(read_file(dir.path() / "dataset.csv") == read_file(again.path() / "dataset.csv"));
  CHECK(read_file(dir.path() / "model_deepsurv.json") == read_file(again.path() / "model_deepsurv.json"));
  CHECK(read_file(dir.path() / "metrics_coxtime.json") == read_file(again.path() / "metrics_coxtime.json"));
}

TEST_CASE("explain validates instances before writing") {
  TempDir dir("badinst");
  ConfigMap s = small_settings(dir.path());
  s["models"] = "deepsurv";
  s["explain.instances"] = "500";
  const ExperimentConfig cfg = ExperimentConfig::from_map(s);
  std::ostringstream log;
  cmd_simulate(cfg, log);
  cmd_train(cfg, log);
  CHECK_THROWS_AS(cmd_explain(cfg, log), ConfigError);
  CHECK_FALSE(fs::exists(dir.path() / "explain" / "deepsurv_intgrad.json"));
}

TEST_CASE("benchmark writes runtime and local accuracy tables") {
  TempDir dir("bench");
  const ExperimentConfig cfg = ExperimentConfig::from_map({{"out", dir.path().string()},
                                                           {"benchmark.p", "3"},
                                                           {"benchmark.n_int", "2,4"},
                                                           {"benchmark.permutations", "2"},
                                                           {"benchmark.repetitions", "1"},
                                                           {"benchmark.instances", "4"},
                                                           {"benchmark.background", "5"},
                                                           {"benchmark.grid_size", "10"},
                                                           {"benchmark.train_epochs", "2"},
                                                           {"train.hidden", "8"}});
  std::ostringstream log;
  cmd_benchmark(cfg, log);
  const std::string runtime = read_file(dir.path() / "benchmark_runtime.csv");
  CHECK(runtime.rfind("method,p,budget,repetition,seconds,median_seconds\n", 0) == 0);
  CHECK(runtime.find("\ngradshap,3,2,") != std::string::npos);
  CHECK(runtime.find("\nsurvshap,3,2,") != std::string::npos);
  const std::string la = read_file(dir.path() / "benchmark_local_accuracy.csv");
  CHECK(la.rfind("method,p,budget,time,local_accuracy\n", 0) == 0);
  CHECK(std::count(la.begin(), la.end(), '\n') == 1 + 3 * 10);
  CHECK(fs::exists(dir.path() / "benchmark_summary.json"));
}

TEST_CASE("report on an empty directory says so") {
  TempDir dir("empty");
  CHECK(build_report(dir.path()).find("No artifacts found") != std::string::npos);
}

TEST_CASE("command-line exit codes") {
  TempDir dir("bin");
  const std::string out = " --out " + dir.path().string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == kExitUsage);
  CHECK(run_cli("simulate --preset no_such_preset" + out) == kExitUsage);
  CHECK(run_cli("simulate --set train.hiden=3" + out) == kExitUsage);
  CHECK(run_cli("simulate --preset time_independent --set design.n=200 --set design.test_n=40" + out) == kExitOk);
  CHECK(fs::exists(dir.path() / "dataset.csv"));
  CHECK(run_cli("train --max-epochs 2 --set models=deepsurv --set train.hidden=4" + out) == kExitOk);
  CHECK(run_cli("explain --set models=deepsurv --set explain.methods=grad --set explain.plots=force" + out) ==
        kExitUsage);
  CHECK(run_cli("explain --set models=deepsurv --set explain.instances=1000" + out) == kExitUsage);
  CHECK(run_cli("report" + out) == kExitOk);
  CHECK(fs::exists(dir.path() / "report.md"));
  // Training on a dataset with no events fails at run time.
  {
    std::ofstream csv(dir.path() / "dataset.csv");
    csv << "time,event,x1,x2,x3\n";
    for (int i = 0; i < 50; ++i) csv << 7 << ",0," << i * 0.01 << ",0,0\n";
  }
  CHECK(run_cli("train --max-epochs 1 --set models=deepsurv --set test_n=10" + out) == kExitRuntime);
}
