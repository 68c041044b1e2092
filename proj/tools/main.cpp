#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Malliavin Monte Carlo score estimation"};
  app.require_subcommand(1);

  std::string config, out;
  int workers = 1;
  for (const auto& name : mscore::app::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides [output] dir)");
    sub->add_option("--workers", workers, "worker threads; outputs do not depend on it")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mscore::app::kExitConfig;
  }
  return mscore::app::run_command(app.get_subcommands().front()->get_name(), config, out, workers, std::cout,
                                  std::cerr);
}
