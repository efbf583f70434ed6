#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bilevel/config.hpp"
#include "bilevel/errors.hpp"
#include "bilevel/experiment.hpp"

namespace {

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilevel learning with inexact stochastic hypergradients"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train an FoE denoising or deblurring model"},
      {"quadratic", "ISGD on a synthetic quadratic instance with an exact oracle"},
      {"theory", "ABC fit, biased-ABC margins and the convergence-bound check"},
      {"eval", "PSNR of a checkpoint on an image folder"},
  };
  std::vector<std::unique_ptr<Command>> cmds;
  for (const auto& [name, help] : commands) {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(name, help);
    cmd->app->add_option("--config", cmd->config_file, "key=value config file");
    const bilevel::RunConfig defaults;
    for (const auto& key : bilevel::config_keys()) {
      cmd->options[key.key] =
          cmd->app->add_option(bilevel::flag_name(key.key), cmd->values[key.key], key.description)
              ->default_str(bilevel::get_config_value(defaults, key.key));
    }
    cmds.push_back(std::move(cmd));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  for (const auto& cmd : cmds) {
    if (!cmd->app->parsed()) continue;
    bilevel::RunConfig cfg;
    try {
      if (!cmd->config_file.empty()) bilevel::apply_config_file(cfg, cmd->config_file);
      for (const auto& [key, opt] : cmd->options) {
        if (opt->count() > 0) bilevel::set_config_value(cfg, key, cmd->values[key]);
      }
    } catch (const bilevel::ConfigError& e) {
      std::cerr << "error[config]: " << e.what() << "\n";
      return 2;
    } catch (const bilevel::IoError& e) {
      std::cerr << "error[io]: " << e.what() << "\n";
      return 3;
    }
    return bilevel::run(cmd->app->get_name(), cfg, std::cout, std::cerr);
  }
  return 2;
}
