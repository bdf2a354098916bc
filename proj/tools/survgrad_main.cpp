#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "survgrad/error.hpp"
#include "survgrad/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string preset;
  std::string out;
  std::vector<std::string> overrides;
  long long seed = -1;
  long long max_epochs = -1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool training) {
  cmd->add_option("--config", o.config, "key = value or JSON config file");
  cmd->add_option("--preset", o.preset, "simulation design preset");
  cmd->add_option("--seed", o.seed, "master seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--set", o.overrides, "config override key=value (repeatable)");
  if (training) cmd->add_option("--max-epochs", o.max_epochs, "training epoch cap")->check(CLI::PositiveNumber);
}

survgrad::ExperimentConfig resolve(const CommonOptions& o) {
  survgrad::ConfigMap settings;
  if (!o.config.empty()) settings = survgrad::load_config_file(o.config);
  if (!o.preset.empty()) settings["preset"] = o.preset;
  if (o.seed >= 0) settings["seed"] = std::to_string(o.seed);
  if (!o.out.empty()) settings["out"] = o.out;
  if (o.max_epochs > 0) settings["train.max_epochs"] = std::to_string(o.max_epochs);
  for (const auto& item : o.overrides) {
    auto [key, value] = survgrad::parse_assignment(item);
    settings[key] = value;
  }
  return survgrad::ExperimentConfig::from_map(settings);
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large temporaries per minibatch; keep them in the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"survgrad: survival networks and time-dependent gradient attributions"};
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
    bool training;
    void (*run)(const survgrad::ExperimentConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"simulate", "simulate a dataset from a design preset", false, survgrad::cmd_simulate},
      {"train", "train models and write metric reports", true, survgrad::cmd_train},
      {"explain", "compute attributions and plots for test instances", false, survgrad::cmd_explain},
      {"benchmark", "time GradSHAP(t) against SurvSHAP(t) across feature counts", true,
       survgrad::cmd_benchmark},
      {"report", "collate artifacts into a markdown report", false, survgrad::cmd_report},
  };
  CommonOptions options;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, options, c.training);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? survgrad::kExitOk : survgrad::kExitUsage;
  }

  for (const auto& [sub, command] : subs) {
    if (!sub->parsed()) continue;
    try {
      const auto cfg = resolve(options);
      command->run(cfg, std::cout);
      return survgrad::kExitOk;
    } catch (const survgrad::ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n(see `survgrad " << command->name << " --help`)\n";
      return survgrad::kExitUsage;
    } catch (const survgrad::IoError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return survgrad::kExitUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return survgrad::kExitRuntime;
    }
  }
  return survgrad::kExitUsage;
}
