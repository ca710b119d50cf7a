#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cavity/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Cavity recovery losses, phantoms and evaluation"};
  app.set_help_flag("-h,--help", "Print help");

  std::string command;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;

  std::string commands;
  for (const auto& c : cavity::command_names()) commands += (commands.empty() ? "" : "|") + c;
  app.add_option("command", command, commands)->required();
  app.add_option("overrides", overrides, "key=value overrides, e.g. fit.lambda_smooth=0.5");
  auto* config_opt = app.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cavity::kExitValidation;
  }

  cavity::ExperimentConfig cfg;
  try {
    cfg = cavity::resolve_config(*config_opt ? std::optional<std::filesystem::path>(config) : std::nullopt, overrides,
                                 *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt,
                                 *out_opt ? std::optional<std::string>(out) : std::nullopt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cavity::kExitValidation;
  }
  return cavity::run_command(command, cfg, std::cout);
}
