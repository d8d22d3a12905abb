#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qconv/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Level-set curvature and structural-condition laboratory"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  qconv::cli::Options opt;

  for (const char* name : {"solve", "curvature", "verify-bound", "scan-rank", "check-operator"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config, "YAML config file")->required();
    sub->add_option("--set", overrides, "override a config key, e.g. grid.h=0.015625");
    if (std::string(name) == "solve" || std::string(name) == "curvature") {
      sub->add_flag("--svg", opt.svg, "also write level-set contours as SVG");
    }
  }
  app.add_subcommand("selftest", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : qconv::cli::kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return qconv::cli::dispatch(command, config, overrides, opt, std::cout, std::cerr);
}
