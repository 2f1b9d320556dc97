#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "evssl/commands.hpp"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Options& options) {
  sub->add_option("--config", options.config_path, "key = value config file");
  sub->add_option("--set", options.overrides, "override one key, key=value (repeatable)");
  sub->add_option("--seed", options.seed, "random seed");
}

evssl::RunConfig resolve(const Options& options) {
  evssl::RunConfig config;
  if (!options.config_path.empty()) config = evssl::load_config(options.config_path);
  for (const std::string& assignment : options.overrides) {
    auto [key, value] = evssl::split_assignment(assignment);
    config.set(key, value);
  }
  if (options.seed) config.train.seed = *options.seed;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised event-camera optical flow and image reconstruction"};
  app.require_subcommand(1);
  Options options;

  using Command = void (*)(const evssl::RunConfig&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands = {
      {"synth", "simulate a translating scene with ground truth", evssl::cmd_synth},
      {"train-flow", "train FireFlowNet with the contrast loss", evssl::cmd_train_flow},
      {"train-recon", "train ReconNet with the photometric losses", evssl::cmd_train_recon},
      {"infer", "run a checkpoint over an event file", evssl::cmd_infer},
      {"eval", "score predictions against ground truth", evssl::cmd_eval},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, options);
    subs.emplace_back(sub, fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const evssl::RunConfig config = resolve(options);
    for (const auto& [sub, fn] : subs) {
      if (sub->parsed()) fn(config);
    }
  } catch (const evssl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const evssl::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const evssl::BoundsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const evssl::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const evssl::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
