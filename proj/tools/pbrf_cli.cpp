#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pbrf/error.hpp"
#include "pbrf/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pbrf");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("INFLUENCE_AUDIT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("INFLUENCE_AUDIT_LOG='{}' is not one of error, info, debug; using info", level);
  }
}

struct Args {
  std::string config;
  std::optional<std::string> out;
  int jobs = 1;
  std::optional<std::uint64_t> seed_override;
};

void add_common(CLI::App* cmd, Args& args, bool outputs) {
  cmd->add_option("--config", args.config, "Experiment config (JSON) or a run manifest")->required();
  cmd->add_option("--seed-override", args.seed_override, "Derive every seed in the config from this value");
  if (outputs) {
    cmd->add_option("--out", args.out, "Output directory (overrides output.dir)");
    cmd->add_option("--jobs", args.jobs, "Worker threads")->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence functions and proximal Bregman response decomposition"};
  app.require_subcommand(1);
  Args args;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config");
  auto* tune = app.add_subcommand("tune-lissa", "Pick the LiSSA scale for a config");
  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  add_common(run, args, true);
  add_common(tune, args, true);
  add_common(validate, args, false);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  setup_logging();

  pbrf::ExperimentConfig cfg;
  try {
    auto json = pbrf::read_config_json(args.config);
    if (args.seed_override) pbrf::apply_seed_override(json, *args.seed_override);
    cfg = pbrf::parse_config(json);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  }

  if (validate->parsed()) {
    std::cout << "ok: mode " << pbrf::to_string(cfg.mode) << ", " << cfg.spec.param_count() << " parameters\n";
    return kOk;
  }

  pbrf::RunOptions options;
  options.out_dir = args.out;
  options.jobs = args.jobs;
  try {
    if (run->parsed()) {
      const auto result = pbrf::run_experiment(cfg, options);
      spdlog::info("wrote {} files to {}", result.files.size() + 1, result.out_dir);
    } else if (tune->parsed()) {
      const auto t = pbrf::tune_lissa(cfg, options);
      std::cout << "lissa scale: " << t.scale << "\n";
    }
  } catch (const pbrf::Error& e) {
    spdlog::error("{}", e.what());
    return e.kind() == pbrf::ErrorKind::configuration && tune->parsed() ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
  return kOk;
}
